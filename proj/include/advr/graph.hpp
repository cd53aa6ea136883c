#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advr/ndarray.hpp"

namespace advr {

using NodeId = std::size_t;

enum class Op {
  input,
  conv2d,
  maxpool2d,
  adaptive_avgpool,
  flatten,
  dense,
  relu,
  sigmoid,
  add,
  channel_scale,
};

std::string_view op_name(Op op);

struct Node {
  static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();

  Op op = Op::input;
  std::string name;
  std::vector<NodeId> inputs;
  Shape shape;                  // statically inferred output shape
  std::size_t weight = none;    // parameter index
  std::size_t bias = none;      // parameter index
  std::size_t kernel = 0;       // conv kernel side
};

struct Parameter {
  std::string name;
  NdArray value;
  std::size_t fan_in = 0;
};

/// Reverse-mode derivatives of the loss. Shapes match their sources.
struct GradientSet {
  std::map<std::string, NdArray> by_parameter;
  NdArray by_input;
};

enum class GradientScope { all, input_only, parameters_only };

struct LossAndGradients {
  double loss = 0.0;
  NdArray scores;
  GradientSet grads;
};

/// A differentiable classifier as a topologically ordered list of nodes.
///
/// Nodes are appended through the builder methods below, which infer and
/// check output shapes eagerly, so a graph that builds is shape-sound.
/// Node 0 is always the input. The most recently added node is the output.
///
/// The graph is immutable during forward/backward; concurrent evaluation
/// of independent inputs is safe. Only parameter values are mutable, and
/// only through parameters().
class Graph {
 public:
  explicit Graph(Shape input_shape);

  NodeId input() const noexcept { return 0; }
  NodeId output() const noexcept { return nodes_.size() - 1; }

  // 'same' zero padding, stride 1; kernel must be odd.
  NodeId conv2d(NodeId x, std::string name, std::size_t in_channels, std::size_t out_channels,
                std::size_t kernel = 3);
  // 2x2 window, stride 2, floor on odd dimensions.
  NodeId maxpool2d(NodeId x, std::string name);
  NodeId adaptive_avgpool(NodeId x, std::string name, std::size_t out_h, std::size_t out_w);
  NodeId flatten(NodeId x, std::string name);
  NodeId dense(NodeId x, std::string name, std::size_t in_features, std::size_t out_features);
  NodeId relu(NodeId x, std::string name);
  NodeId sigmoid(NodeId x, std::string name);
  NodeId add(NodeId a, NodeId b, std::string name);
  // Multiplies each channel plane of x [C,H,W] by gate [C].
  NodeId channel_scale(NodeId x, NodeId gate, std::string name);

  const Shape& input_shape() const { return nodes_.front().shape; }
  const Shape& output_shape() const { return nodes_.back().shape; }
  const Shape& shape_of(NodeId id) const { return nodes_.at(id).shape; }
  std::span<const Node> nodes() const noexcept { return nodes_; }

  std::vector<Parameter>& parameters() noexcept { return parameters_; }
  const std::vector<Parameter>& parameters() const noexcept { return parameters_; }
  const Parameter* find_parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Final-layer pre-softmax scores.
  NdArray forward(const NdArray& input) const;

  /// Every node's activation, indexed by NodeId.
  std::vector<NdArray> forward_all(const NdArray& input) const;

  /// Softmax cross-entropy of the scores against `label`, with exact
  /// reverse-mode gradients. ReLU at 0 and max-pool ties follow the
  /// conventions: zero subgradient, first index wins.
  LossAndGradients loss_and_backward(const NdArray& input, std::size_t label,
                                     GradientScope scope = GradientScope::all) const;

 private:
  NodeId push(Node node);
  std::size_t add_parameter(const std::string& node, const char* suffix, Shape shape,
                            std::size_t fan_in);
  const Node& checked(NodeId id, const std::string& user) const;

  std::vector<Node> nodes_;
  std::vector<Parameter> parameters_;
};

/// Numerically stable softmax of a score vector.
std::vector<double> softmax(std::span<const double> scores);

/// -log softmax(scores)[label].
double cross_entropy(std::span<const double> scores, std::size_t label);

/// Index of the largest score; ties go to the lowest index.
std::size_t argmax(std::span<const double> scores);

}  // namespace advr
