#include "advr/graph.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "advr/error.hpp"
#include "kernels.hpp"

namespace advr {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::conv2d: return "conv2d";
    case Op::maxpool2d: return "maxpool2d";
    case Op::adaptive_avgpool: return "adaptive_avgpool";
    case Op::flatten: return "flatten";
    case Op::dense: return "dense";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::add: return "add";
    case Op::channel_scale: return "channel_scale";
  }
  return "?";
}

Graph::Graph(Shape input_shape) {
  Node in;
  in.op = Op::input;
  in.name = "input";
  in.shape = std::move(input_shape);
  if (in.shape.empty() || element_count(in.shape) == 0) {
    throw ShapeError("graph input shape " + to_string(in.shape) + " is empty");
  }
  nodes_.push_back(std::move(in));
}

const Node& Graph::checked(NodeId id, const std::string& user) const {
  if (id >= nodes_.size()) {
    throw InvalidArgument(fmt::format("node '{}' refers to unknown node {}", user, id));
  }
  return nodes_[id];
}

NodeId Graph::push(Node node) {
  for (const auto& n : nodes_) {
    if (n.name == node.name) throw InvalidArgument("duplicate node name '" + node.name + "'");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

std::size_t Graph::add_parameter(const std::string& node, const char* suffix, Shape shape,
                                 std::size_t fan_in) {
  std::string name = node + "." + suffix;
  for (const auto& p : parameters_) {
    if (p.name == name) throw InvalidArgument("duplicate parameter name '" + name + "'");
  }
  parameters_.push_back({std::move(name), NdArray(std::move(shape)), fan_in});
  return parameters_.size() - 1;
}

NodeId Graph::conv2d(NodeId x, std::string name, std::size_t in_channels,
                     std::size_t out_channels, std::size_t kernel) {
  const Shape& s = checked(x, name).shape;
  if (s.size() != 3) {
    throw ShapeError(fmt::format("conv2d '{}' needs a [C,H,W] input, got {}", name, to_string(s)));
  }
  if (s[0] != in_channels) {
    throw ShapeError(fmt::format("conv2d '{}' declares {} input channels but '{}' produces {}",
                                 name, in_channels, nodes_[x].name, s[0]));
  }
  if (kernel % 2 == 0 || out_channels == 0) {
    throw InvalidArgument(fmt::format("conv2d '{}' needs an odd kernel and >0 filters", name));
  }
  Node n;
  n.op = Op::conv2d;
  n.inputs = {x};
  n.shape = {out_channels, s[1], s[2]};
  n.kernel = kernel;
  n.weight = add_parameter(name, "weight", {out_channels, in_channels, kernel, kernel},
                           in_channels * kernel * kernel);
  n.bias = add_parameter(name, "bias", {out_channels}, in_channels * kernel * kernel);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::maxpool2d(NodeId x, std::string name) {
  const Shape& s = checked(x, name).shape;
  if (s.size() != 3 || s[1] < 2 || s[2] < 2) {
    throw ShapeError(
        fmt::format("maxpool2d '{}' needs [C,H,W] with H,W >= 2, got {}", name, to_string(s)));
  }
  Node n;
  n.op = Op::maxpool2d;
  n.inputs = {x};
  n.shape = {s[0], s[1] / 2, s[2] / 2};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::adaptive_avgpool(NodeId x, std::string name, std::size_t out_h,
                               std::size_t out_w) {
  const Shape& s = checked(x, name).shape;
  if (s.size() != 3) {
    throw ShapeError(
        fmt::format("adaptive_avgpool '{}' needs a [C,H,W] input, got {}", name, to_string(s)));
  }
  if (out_h == 0 || out_w == 0) {
    throw InvalidArgument(fmt::format("adaptive_avgpool '{}' needs a non-empty grid", name));
  }
  Node n;
  n.op = Op::adaptive_avgpool;
  n.inputs = {x};
  n.shape = {s[0], out_h, out_w};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::flatten(NodeId x, std::string name) {
  const Shape& s = checked(x, name).shape;
  Node n;
  n.op = Op::flatten;
  n.inputs = {x};
  n.shape = {element_count(s)};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::dense(NodeId x, std::string name, std::size_t in_features,
                    std::size_t out_features) {
  const Shape& s = checked(x, name).shape;
  if (s.size() != 1) {
    throw ShapeError(
        fmt::format("dense '{}' needs a flat input, got {} from '{}'", name, to_string(s),
                    nodes_[x].name));
  }
  if (s[0] != in_features) {
    throw ShapeError(fmt::format("dense '{}' declares {} inputs but '{}' produces {}", name,
                                 in_features, nodes_[x].name, s[0]));
  }
  if (out_features == 0) throw InvalidArgument(fmt::format("dense '{}' has no outputs", name));
  Node n;
  n.op = Op::dense;
  n.inputs = {x};
  n.shape = {out_features};
  n.weight = add_parameter(name, "weight", {out_features, in_features}, in_features);
  n.bias = add_parameter(name, "bias", {out_features}, in_features);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x, std::string name) {
  Node n;
  n.op = Op::relu;
  n.shape = checked(x, name).shape;
  n.inputs = {x};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x, std::string name) {
  Node n;
  n.op = Op::sigmoid;
  n.shape = checked(x, name).shape;
  n.inputs = {x};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b, std::string name) {
  const Shape& sa = checked(a, name).shape;
  const Shape& sb = checked(b, name).shape;
  if (sa != sb) {
    throw ShapeError(fmt::format("add '{}' operands differ: {} vs {}", name, to_string(sa),
                                 to_string(sb)));
  }
  Node n;
  n.op = Op::add;
  n.shape = sa;
  n.inputs = {a, b};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::channel_scale(NodeId x, NodeId gate, std::string name) {
  const Shape& sx = checked(x, name).shape;
  const Shape& sg = checked(gate, name).shape;
  if (sx.size() != 3 || sg.size() != 1 || sg[0] != sx[0]) {
    throw ShapeError(fmt::format("channel_scale '{}' needs x [C,H,W] and gate [C], got {} and {}",
                                 name, to_string(sx), to_string(sg)));
  }
  Node n;
  n.op = Op::channel_scale;
  n.shape = sx;
  n.inputs = {x, gate};
  n.name = std::move(name);
  return push(std::move(n));
}

const Parameter* Graph::find_parameter(std::string_view name) const {
  for (const auto& p : parameters_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t Graph::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters_) total += p.value.size();
  return total;
}

namespace {

double sigmoid_of(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

std::vector<NdArray> Graph::forward_all(const NdArray& input) const {
  if (input.shape() != input_shape()) {
    throw ShapeError(fmt::format("node 'input' expects {}, got {}", to_string(input_shape()),
                                 to_string(input.shape())));
  }
  if (!input.all_finite()) throw NumericError("node 'input' holds a non-finite value");

  std::vector<NdArray> act;
  act.reserve(nodes_.size());
  act.push_back(input);
  for (std::size_t id = 1; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    const NdArray& x = act[n.inputs[0]];
    NdArray y(n.shape);
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv2d: {
        const Shape& s = x.shape();
        kernels::conv2d_forward(x.data(), s[0], s[1], s[2], parameters_[n.weight].value.data(),
                                parameters_[n.bias].value.data(), n.shape[0], n.kernel,
                                y.data());
        break;
      }
      case Op::maxpool2d: {
        const Shape& s = x.shape();
        kernels::maxpool2x2_forward(x.data(), s[0], s[1], s[2], y.data());
        break;
      }
      case Op::adaptive_avgpool: {
        const Shape& s = x.shape();
        kernels::adaptive_avgpool_forward(x.data(), s[0], s[1], s[2], n.shape[1], n.shape[2],
                                          y.data());
        break;
      }
      case Op::flatten:
        std::copy(x.values().begin(), x.values().end(), y.values().begin());
        break;
      case Op::dense:
        kernels::dense_forward(x.data(), x.size(), parameters_[n.weight].value.data(),
                               parameters_[n.bias].value.data(), n.shape[0], y.data());
        break;
      case Op::relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case Op::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_of(x[i]);
        break;
      case Op::add: {
        const NdArray& b = act[n.inputs[1]];
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + b[i];
        break;
      }
      case Op::channel_scale: {
        const NdArray& g = act[n.inputs[1]];
        const std::size_t plane = n.shape[1] * n.shape[2];
        for (std::size_t c = 0; c < n.shape[0]; ++c) {
          for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] = x[c * plane + i] * g[c];
        }
        break;
      }
    }
    if (!y.all_finite()) {
      throw NumericError(fmt::format("node '{}' ({}) produced a non-finite value", n.name,
                                     op_name(n.op)));
    }
    act.push_back(std::move(y));
  }
  return act;
}

NdArray Graph::forward(const NdArray& input) const { return std::move(forward_all(input).back()); }

LossAndGradients Graph::loss_and_backward(const NdArray& input, std::size_t label,
                                          GradientScope scope) const {
  const Shape& out = output_shape();
  if (out.size() != 1 || label >= out[0]) {
    throw InvalidArgument(fmt::format("label {} is outside the {} output scores", label,
                                      to_string(out)));
  }
  std::vector<NdArray> act = forward_all(input);
  const NdArray& scores = act.back();

  LossAndGradients result;
  result.loss = cross_entropy(scores.values(), label);
  result.scores = scores;
  if (!std::isfinite(result.loss)) {
    throw NumericError(fmt::format("loss at node '{}' is non-finite", nodes_.back().name));
  }

  const bool want_params = scope != GradientScope::input_only;
  const bool want_input = scope != GradientScope::parameters_only;

  // Which nodes feed something that needs a gradient.
  std::vector<bool> need(nodes_.size(), false);
  need[0] = want_input;
  for (std::size_t id = 1; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    bool v = want_params && n.weight != Node::none;
    for (NodeId in : n.inputs) v = v || need[in];
    need[id] = v;
  }

  std::vector<NdArray> grad(nodes_.size());
  std::vector<NdArray> pgrad(parameters_.size());
  if (want_params) {
    for (std::size_t i = 0; i < parameters_.size(); ++i) {
      pgrad[i] = NdArray(parameters_[i].value.shape());
    }
  }

  {
    std::vector<double> p = softmax(scores.values());
    p[label] -= 1.0;
    grad.back() = NdArray(out, std::move(p));
  }

  auto grad_for = [&](NodeId id) -> double* {
    if (!need[id]) return nullptr;
    if (grad[id].empty()) grad[id] = NdArray(nodes_[id].shape);
    return grad[id].data();
  };

  for (std::size_t id = nodes_.size() - 1; id >= 1; --id) {
    const Node& n = nodes_[id];
    if (grad[id].empty()) continue;
    const NdArray& g = grad[id];
    const NodeId src = n.inputs[0];
    const NdArray& x = act[src];
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv2d: {
        const Shape& s = x.shape();
        double* gi = grad_for(src);
        double* gw = want_params ? pgrad[n.weight].data() : nullptr;
        double* gb = want_params ? pgrad[n.bias].data() : nullptr;
        kernels::conv2d_backward(x.data(), s[0], s[1], s[2], parameters_[n.weight].value.data(),
                                 n.shape[0], n.kernel, g.data(), gi, gw, gb);
        break;
      }
      case Op::maxpool2d: {
        if (double* gi = grad_for(src)) {
          const Shape& s = x.shape();
          kernels::maxpool2x2_backward(x.data(), s[0], s[1], s[2], g.data(), gi);
        }
        break;
      }
      case Op::adaptive_avgpool: {
        if (double* gi = grad_for(src)) {
          const Shape& s = x.shape();
          kernels::adaptive_avgpool_backward(s[0], s[1], s[2], n.shape[1], n.shape[2], g.data(),
                                             gi);
        }
        break;
      }
      case Op::flatten:
        if (double* gi = grad_for(src)) {
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        break;
      case Op::dense: {
        double* gi = grad_for(src);
        double* gw = want_params ? pgrad[n.weight].data() : nullptr;
        double* gb = want_params ? pgrad[n.bias].data() : nullptr;
        kernels::dense_backward(x.data(), x.size(), parameters_[n.weight].value.data(),
                                n.shape[0], g.data(), gi, gw, gb);
        break;
      }
      case Op::relu:
        if (double* gi = grad_for(src)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) gi[i] += g[i];
          }
        }
        break;
      case Op::sigmoid:
        if (double* gi = grad_for(src)) {
          const NdArray& y = act[id];
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
      case Op::add:
        for (NodeId in : n.inputs) {
          if (double* gi = grad_for(in)) {
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
          }
        }
        break;
      case Op::channel_scale: {
        const NodeId gate_id = n.inputs[1];
        const NdArray& gate = act[gate_id];
        const std::size_t plane = n.shape[1] * n.shape[2];
        if (double* gx = grad_for(src)) {
          for (std::size_t c = 0; c < n.shape[0]; ++c) {
            for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g[c * plane + i] * gate[c];
          }
        }
        if (double* gg = grad_for(gate_id)) {
          for (std::size_t c = 0; c < n.shape[0]; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i] * x[c * plane + i];
            gg[c] += s;
          }
        }
        break;
      }
    }
  }

  if (want_input) {
    result.grads.by_input = grad[0].empty() ? NdArray(input_shape()) : std::move(grad[0]);
    if (!result.grads.by_input.all_finite()) {
      throw NumericError("input gradient is non-finite");
    }
  }
  if (want_params) {
    for (std::size_t i = 0; i < parameters_.size(); ++i) {
      if (!pgrad[i].all_finite()) {
        throw NumericError(fmt::format("gradient of '{}' is non-finite", parameters_[i].name));
      }
      result.grads.by_parameter.emplace(parameters_[i].name, std::move(pgrad[i]));
    }
  }
  return result;
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> p(scores.begin(), scores.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

double cross_entropy(std::span<const double> scores, std::size_t label) {
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double v : scores) z += std::exp(v - m);
  return std::log(z) + m - scores[label];
}

std::size_t argmax(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace advr
