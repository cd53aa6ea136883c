#include "advr/attack.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "advr/error.hpp"
#include "advr/parallel.hpp"

namespace advr {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument(fmt::format("epsilon must be finite and >= 0, got {}", epsilon));
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw InvalidArgument(fmt::format("alpha must be finite and > 0, got {}", alpha));
  }
  if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
}

std::size_t target_label(std::size_t true_label) {
  if (true_label > 1) throw InvalidArgument("labels must be 0 or 1");
  return 1 - true_label;
}

NdArray clip_to_ball(const NdArray& candidate, const NdArray& origin, double epsilon) {
  if (candidate.shape() != origin.shape()) {
    throw ShapeError("clip_to_ball: candidate " + to_string(candidate.shape()) + " vs origin " +
                     to_string(origin.shape()));
  }
  if (!(epsilon >= 0.0)) throw InvalidArgument("clip_to_ball: epsilon must be >= 0");
  NdArray out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double o = origin[i];
    double lo = o - epsilon;
    double hi = o + epsilon;
    // o +- epsilon can round outward; pull the bound in until the
    // distance, as computed in doubles, is within epsilon.
    while (o - lo > epsilon) lo = std::nextafter(lo, o);
    while (hi - o > epsilon) hi = std::nextafter(hi, o);
    out[i] = std::min(std::max(candidate[i], lo), hi);
  }
  return out;
}

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

AdversarialExample pgd_attack(const Graph& model, const NdArray& x, std::size_t true_label,
                              const AttackConfig& cfg) {
  cfg.validate();
  if (model.output_shape() != Shape{2}) throw InvalidArgument("pgd_attack needs a binary model");

  AdversarialExample ex;
  ex.original = x;
  ex.true_label = true_label;
  ex.target_label = target_label(true_label);

  auto evaluate = [&](const NdArray& input, std::size_t iteration, GradientScope scope) {
    try {
      return model.loss_and_backward(input, ex.target_label, scope);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("pgd iteration {}: {}", iteration, e.what()));
    }
  };

  NdArray current = x;
  LossAndGradients state = evaluate(current, 0, GradientScope::input_only);
  ex.clean_prediction = argmax(state.scores.values());
  ex.loss_trace.reserve(cfg.iterations + 1);
  ex.loss_trace.push_back(state.loss);

  const double step = cfg.ascent ? cfg.alpha : -cfg.alpha;
  bool stalled = false;
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    // A rejected proposal leaves x_k and its gradient unchanged, so every
    // later proposal is the same rejected point.
    if (stalled) {
      ex.loss_trace.push_back(state.loss);
      continue;
    }
    NdArray proposal = current;
    const NdArray& g = state.grads.by_input;
    for (std::size_t i = 0; i < proposal.size(); ++i) proposal[i] += step * sign_of(g[i]);
    proposal = clip_to_ball(proposal, x, cfg.epsilon);

    const bool last = k + 1 == cfg.iterations;
    LossAndGradients next;
    if (last) {
      try {
        next.scores = model.forward(proposal);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("pgd iteration {}: {}", k + 1, e.what()));
      }
      next.loss = cross_entropy(next.scores.values(), ex.target_label);
      if (!std::isfinite(next.loss)) {
        throw NumericError(fmt::format("pgd iteration {}: non-finite target loss", k + 1));
      }
    } else {
      next = evaluate(proposal, k + 1, GradientScope::input_only);
    }

    if (next.loss < state.loss) {
      current = std::move(proposal);
      state = std::move(next);
      ++ex.accepted_steps;
    } else {
      stalled = true;
    }
    ex.loss_trace.push_back(state.loss);
  }

  ex.perturbed = std::move(current);
  ex.final_loss = state.loss;
  ex.predicted = argmax(state.scores.values());
  ex.success = ex.predicted == ex.target_label;
  return ex;
}

AttackBatch attack_batch(const Graph& model, std::span<const LabeledSpectrogram> data,
                         const AttackConfig& cfg, std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("attack_batch needs a non-empty dataset");
  cfg.validate();
  AttackBatch out;
  out.examples.resize(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    try {
      out.examples[i] = pgd_attack(model, data[i].spectrogram.array(), data[i].label, cfg);
    } catch (const NumericError& e) {
      throw NumericError("example '" + data[i].id + "': " + e.what());
    } catch (const Error& e) {
      throw Error("example '" + data[i].id + "': " + e.what());
    }
  });
  AttackSummary& s = out.summary;
  s.total = data.size();
  s.seed = seed;
  double loss_sum = 0.0;
  for (const auto& ex : out.examples) {
    s.successes += ex.success ? 1 : 0;
    s.still_correct += ex.predicted == ex.true_label ? 1 : 0;
    loss_sum += ex.final_loss;
  }
  s.mean_final_loss = loss_sum / static_cast<double>(s.total);
  return out;
}

}  // namespace advr
