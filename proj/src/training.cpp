#include "advr/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "advr/error.hpp"
#include "advr/parallel.hpp"
#include "binary_io.hpp"

namespace advr {

void TrainConfig::validate() const {
  if (batch < 1) throw InvalidArgument("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (!(clean_mix >= 0.0 && clean_mix <= 1.0)) throw InvalidArgument("clean_mix must be in [0, 1]");
  if (!(convergence_tol >= 0.0)) throw InvalidArgument("convergence_tol must be >= 0");
  attack.validate();
}

std::string to_string(Phase phase) { return phase == Phase::clean ? "clean" : "adversarial"; }

std::uint64_t parameter_digest(const Graph& graph) {
  std::uint64_t h = io::fnv1a("");
  for (const auto& p : graph.parameters()) {
    const auto bytes = std::string_view(reinterpret_cast<const char*>(p.value.data()),
                                        p.value.size() * sizeof(double));
    h = io::fnv1a(bytes, h);
  }
  return h;
}

std::string format_metrics_line(const EpochMetrics& m) {
  const std::string adv =
      std::isnan(m.adversarial_accuracy) ? "na" : fmt::format("{:.6f}", m.adversarial_accuracy);
  return fmt::format("{}\t{}\t{:.6f}\t{}\t{:.6f}", m.epoch, to_string(m.phase), m.clean_accuracy,
                     adv, m.mean_loss);
}

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(epoch_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

class Optimizer {
 public:
  Optimizer(Graph& graph, double lr, double momentum) : graph_(graph), lr_(lr), mu_(momentum) {
    for (const auto& p : graph.parameters()) velocity_.emplace_back(p.value.shape());
  }

  // grads are summed over the batch; the step uses their mean.
  void step(std::vector<NdArray>& grads, std::size_t batch_size) {
    const double scale = 1.0 / static_cast<double>(batch_size);
    auto& params = graph_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = velocity_[i];
      const auto& g = grads[i];
      auto& w = params[i].value;
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = mu_ * v[j] + g[j] * scale;
        w[j] = static_cast<double>(static_cast<float>(w[j] - lr_ * v[j]));
      }
    }
  }

 private:
  Graph& graph_;
  double lr_;
  double mu_;
  std::vector<NdArray> velocity_;
};

struct BatchOutcome {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};

// Gradient of the summed loss over `inputs`, then one optimizer step.
BatchOutcome update_on(Graph& graph, Optimizer& opt, std::span<const NdArray* const> inputs,
                       std::span<const std::size_t> labels, std::size_t epoch,
                       std::size_t batch) {
  const std::size_t n = inputs.size();
  std::vector<LossAndGradients> results(n);
  parallel_for(n, [&](std::size_t i) {
    results[i] = graph.loss_and_backward(*inputs[i], labels[i], GradientScope::parameters_only);
  });

  BatchOutcome out;
  const auto& params = graph.parameters();
  std::vector<NdArray> total;
  total.reserve(params.size());
  for (const auto& p : params) total.emplace_back(p.value.shape());
  for (std::size_t i = 0; i < n; ++i) {
    out.loss_sum += results[i].loss;
    out.correct += argmax(results[i].scores.values()) == labels[i] ? 1 : 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const NdArray& g = results[i].grads.by_parameter.at(params[k].name);
      NdArray& t = total[k];
      for (std::size_t j = 0; j < t.size(); ++j) t[j] += g[j];
    }
  }
  if (!std::isfinite(out.loss_sum)) {
    throw NumericError(fmt::format("training diverged at epoch {} batch {}", epoch, batch));
  }
  opt.step(total, n);
  return out;
}

void require_data(std::span<const LabeledSpectrogram> data, const Graph& graph) {
  if (data.empty()) throw InvalidArgument("training needs a non-empty dataset");
  for (const auto& ex : data) {
    if (ex.spectrogram.array().shape() != graph.input_shape()) {
      throw ShapeError("example '" + ex.id + "' has shape " +
                       to_string(ex.spectrogram.array().shape()) + ", model expects " +
                       to_string(graph.input_shape()));
    }
    if (ex.label > 1) throw InvalidArgument("example '" + ex.id + "' has a label outside {0,1}");
  }
}

template <typename Fn>
auto with_context(std::size_t epoch, std::size_t batch, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("epoch {} batch {}: {}", epoch, batch, e.what()));
  }
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, std::span<const LabeledSpectrogram> data,
                                const TrainConfig& cfg) {
  cfg.validate();
  std::vector<EpochMetrics> metrics;
  if (cfg.t1 == 0) return metrics;
  require_data(data, model.graph);

  Optimizer opt(model.graph, cfg.learning_rate, cfg.momentum);
  for (std::size_t e = 0; e < cfg.t1; ++e) {
    const std::size_t epoch = model.meta.epochs_completed + 1;
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch, ++batch) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch);
      std::vector<const NdArray*> inputs;
      std::vector<std::size_t> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        inputs.push_back(&data[order[i]].spectrogram.array());
        labels.push_back(data[order[i]].label);
      }
      const BatchOutcome b = with_context(epoch, batch, [&] {
        return update_on(model.graph, opt, inputs, labels, epoch, batch);
      });
      loss_sum += b.loss_sum;
      correct += b.correct;
    }
    model.meta.epochs_completed = epoch;
    const double n = static_cast<double>(data.size());
    metrics.push_back({epoch, Phase::clean, static_cast<double>(correct) / n,
                       std::numeric_limits<double>::quiet_NaN(), loss_sum / n});
  }
  return metrics;
}

std::vector<EpochMetrics> adversarial_train(Model& model, std::span<const LabeledSpectrogram> data,
                                            const TrainConfig& cfg,
                                            const BatchObserver& observer) {
  cfg.validate();
  std::vector<EpochMetrics> metrics;
  if (cfg.t2 == 0) return metrics;
  require_data(data, model.graph);

  Optimizer opt(model.graph, cfg.learning_rate, cfg.momentum);
  std::size_t calm_epochs = 0;
  for (std::size_t e = 0; e < cfg.t2; ++e) {
    const std::size_t epoch = model.meta.epochs_completed + 1;
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t clean_correct = 0;
    std::size_t adv_correct = 0;
    std::size_t batch = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch, ++batch) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch);
      const std::size_t n = hi - lo;
      const auto keep_clean = static_cast<std::size_t>(std::llround(cfg.clean_mix * n));

      // Regenerated against the parameters as they are right now.
      std::vector<AdversarialExample> adv(n);
      with_context(epoch, batch, [&] {
        parallel_for(n, [&](std::size_t i) {
          const auto& ex = data[order[lo + i]];
          adv[i] = pgd_attack(model.graph, ex.spectrogram.array(), ex.label, cfg.attack);
        });
        return 0;
      });
      if (observer) observer({epoch, batch, parameter_digest(model.graph)});

      std::vector<const NdArray*> inputs;
      std::vector<std::size_t> labels;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& ex = data[order[lo + i]];
        clean_correct += adv[i].clean_prediction == ex.label ? 1 : 0;
        adv_correct += adv[i].predicted == ex.label ? 1 : 0;
        inputs.push_back(i < keep_clean ? &ex.spectrogram.array() : &adv[i].perturbed);
        labels.push_back(ex.label);
      }
      const BatchOutcome b = with_context(epoch, batch, [&] {
        return update_on(model.graph, opt, inputs, labels, epoch, batch);
      });
      loss_sum += b.loss_sum;
    }
    model.meta.epochs_completed = epoch;
    const double total = static_cast<double>(data.size());
    metrics.push_back({epoch, Phase::adversarial, static_cast<double>(clean_correct) / total,
                       static_cast<double>(adv_correct) / total, loss_sum / total});

    if (cfg.convergence_tol > 0.0 && metrics.size() >= 2) {
      const double prev = metrics[metrics.size() - 2].mean_loss;
      const double cur = metrics.back().mean_loss;
      const double rel = std::abs(cur - prev) / std::max(std::abs(prev), 1e-12);
      calm_epochs = rel < cfg.convergence_tol ? calm_epochs + 1 : 0;
      if (calm_epochs >= 2) break;
    }
  }
  return metrics;
}

}  // namespace advr
