#pragma once

#include <advr/filters.hpp>
#include <advr/graph.hpp>
#include <advr/ndarray.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace advr::testing {

inline NdArray random_array(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  NdArray a(shape);
  for (double& v : a.values()) v = n(rng);
  return a;
}

inline NdArray uniform_array(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  NdArray a(shape);
  for (double& v : a.values()) v = u(rng);
  return a;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("advr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
  auto b = read_bytes(p);
  return {b.begin(), b.end()};
}

// Small random classifier over a [C,H,W] input with two output scores.
// Draws from every op the engine supports; parameters are random, biases
// included, so every gradient path carries signal.
inline Graph random_graph(std::mt19937_64& rng, std::size_t max_parameters = 5000) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  for (;;) {
    std::size_t c = pick(1, 3), h = pick(4, 10), w = pick(4, 10);
    Graph g({c, h, w});
    NodeId x = g.input();
    const std::size_t blocks = pick(1, 3);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::string p = "b" + std::to_string(b);
      const std::size_t out = pick(1, 8);
      NodeId y = g.conv2d(x, p + "_conv", c, out, coin(0.7) ? 3 : 1);
      y = coin(0.75) ? g.relu(y, p + "_relu") : g.sigmoid(y, p + "_sig");
      if (coin(0.4)) {
        NodeId e = g.adaptive_avgpool(y, p + "_se_pool", 1, 1);
        e = g.flatten(e, p + "_se_flat");
        e = g.dense(e, p + "_se_fc", out, out);
        e = g.sigmoid(e, p + "_se_gate");
        y = g.channel_scale(y, e, p + "_se_scale");
      }
      if (out == c && coin(0.5)) y = g.add(x, y, p + "_res");
      x = y;
      c = out;
      if (h >= 2 && w >= 2 && coin(0.5)) {
        x = g.maxpool2d(x, p + "_pool");
        h /= 2;
        w /= 2;
      }
    }
    if (coin(0.5)) {
      const std::size_t grid = std::min({pick(1, 3), h, w});
      x = g.adaptive_avgpool(x, "gap", grid, grid);
    }
    x = g.flatten(x, "flat");
    std::size_t features = g.shape_of(x)[0];
    if (coin(0.6)) {
      const std::size_t hidden = pick(2, 24);
      x = g.dense(x, "hidden", features, hidden);
      x = coin(0.7) ? g.relu(x, "hidden_relu") : g.sigmoid(x, "hidden_sig");
      features = hidden;
    }
    g.dense(x, "out", features, 2);
    if (g.parameter_count() > max_parameters) continue;

    for (auto& p : g.parameters()) {
      const double bound = 1.5 / std::sqrt(static_cast<double>(std::max<std::size_t>(p.fan_in, 1)));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : p.value.values()) v = u(rng);
    }
    return g;
  }
}

// Signature of every piecewise-linear decision in a forward pass: the sign
// of each ReLU input and the winning index of each max-pool window. Two
// evaluations with equal signatures lie on the same smooth piece.
inline std::vector<std::int64_t> activation_pattern(const Graph& g, const NdArray& input) {
  const auto acts = g.forward_all(input);
  std::vector<std::int64_t> sig;
  const auto nodes = g.nodes();
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    if (n.op == Op::relu) {
      for (double v : acts[n.inputs[0]].values()) sig.push_back(v > 0.0 ? 1 : 0);
    } else if (n.op == Op::maxpool2d) {
      const NdArray& a = acts[n.inputs[0]];
      const std::size_t C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t oy = 0; oy < H / 2; ++oy)
          for (std::size_t ox = 0; ox < W / 2; ++ox) {
            std::int64_t best = -1;
            double best_v = 0.0;
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const double v = a[(ch * H + 2 * oy + dy) * W + 2 * ox + dx];
                if (best < 0 || v > best_v) {
                  best = static_cast<std::int64_t>(dy * 2 + dx);
                  best_v = v;
                }
              }
            sig.push_back(best);
          }
    }
  }
  return sig;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t skipped = 0;   // perturbation crossed a kink
  std::size_t failures = 0;
  double worst = 0.0;        // largest relative error among checked components
  std::string worst_where;
};

// |a - n| / max(|a|, |n|), with differences below `abs_floor` treated as
// agreement (both sides are then numerically zero).
inline double relative_error(double analytic, double numeric, double abs_floor = 1e-8) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// Compares every parameter and input gradient component with a central
// difference of the softmax cross-entropy loss.
inline GradCheckResult check_gradients(const Graph& graph, const NdArray& input, std::size_t label,
                                       double step = 1e-3, double tolerance = 1e-3) {
  GradCheckResult r;
  const auto analytic = graph.loss_and_backward(input, label);
  const auto base_pattern = activation_pattern(graph, input);

  auto loss_of = [&](const Graph& g, const NdArray& x) {
    const NdArray s = g.forward(x);
    return cross_entropy(s.values(), label);
  };
  auto record = [&](double a, double n, const std::string& where) {
    const double e = relative_error(a, n);
    ++r.checked;
    if (e > r.worst) {
      r.worst = e;
      r.worst_where = where;
    }
    if (e > tolerance) ++r.failures;
  };

  Graph g = graph;
  for (std::size_t p = 0; p < g.parameters().size(); ++p) {
    const std::string& name = g.parameters()[p].name;
    const NdArray& grad = analytic.grads.by_parameter.at(name);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double& v = g.parameters()[p].value[i];
      const double saved = v;
      v = saved + step;
      const double up = loss_of(g, input);
      const bool up_same = activation_pattern(g, input) == base_pattern;
      v = saved - step;
      const double down = loss_of(g, input);
      const bool down_same = activation_pattern(g, input) == base_pattern;
      v = saved;
      if (!up_same || !down_same) {
        ++r.skipped;
        continue;
      }
      record(grad[i], (up - down) / (2.0 * step), name + "[" + std::to_string(i) + "]");
    }
  }

  NdArray x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = loss_of(graph, x);
    const bool up_same = activation_pattern(graph, x) == base_pattern;
    x[i] = saved - step;
    const double down = loss_of(graph, x);
    const bool down_same = activation_pattern(graph, x) == base_pattern;
    x[i] = saved;
    if (!up_same || !down_same) {
      ++r.skipped;
      continue;
    }
    record(analytic.grads.by_input[i], (up - down) / (2.0 * step),
           "input[" + std::to_string(i) + "]");
  }
  return r;
}

inline std::size_t mirror(long i, std::size_t n) {
  const long last = static_cast<long>(n) - 1;
  if (i < 0) i = -i;
  if (i > last) i = 2 * last - i;
  return static_cast<std::size_t>(i);
}

// Scalar neighbourhood statistic, element by element.
inline NdArray brute_force_filter(const FilterSpec& spec, const NdArray& a) {
  const std::size_t C = a.shape()[0], H = a.shape()[1], W = a.shape()[2];
  const long r = static_cast<long>(spec.window / 2);
  const auto kernel = gaussian_kernel(spec.window, spec.sigma);
  NdArray out(a.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::vector<double> patch;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx)
            patch.push_back(a[(c * H + mirror(static_cast<long>(y) + dy, H)) * W +
                              mirror(static_cast<long>(x) + dx, W)]);
        double v = 0.0;
        switch (spec.kind) {
          case FilterKind::median:
            std::sort(patch.begin(), patch.end());
            v = patch[patch.size() / 2];
            break;
          case FilterKind::mean:
            for (double p : patch) v += p;
            v /= static_cast<double>(patch.size());
            break;
          case FilterKind::gaussian:
            for (std::size_t i = 0; i < patch.size(); ++i) v += kernel[i] * patch[i];
            break;
        }
        out[(c * H + y) * W + x] = v;
      }
  return out;
}

}  // namespace advr::testing
