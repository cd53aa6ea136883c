#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advr/features.hpp"
#include "advr/graph.hpp"

namespace advr {

enum class ModelKind { vgg_like, se_resnet, custom };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

/// Architecture description. The full-size VGG-like network is the
/// default; toy runs shrink the input plane, divide channel widths and
/// narrow the fully connected layers.
struct ModelSpec {
  ModelKind kind = ModelKind::vgg_like;
  std::size_t input_frames = 600;
  std::size_t input_bins = 257;
  std::size_t width_divisor = 1;
  std::size_t fc_width = 4096;
  std::size_t pool_grid = 7;
  std::size_t se_ratio = 16;
  // custom only: whitespace-separated layer tokens, e.g.
  // "conv:4 relu maxpool flatten dense:2". conv:C[:K], dense:N, avgpool:G.
  std::string layers;
  std::size_t class_count = 2;

  /// Throws InvalidArgument listing every invalid field.
  void validate() const;

  /// One key=value line per field in a fixed order.
  std::string canonical_text() const;
  static ModelSpec parse(const std::string& text);
  std::uint64_t digest() const;

  Shape input_shape() const { return {1, input_frames, input_bins}; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Channel widths of the eight VGG-like conv layers after the divisor.
std::vector<std::size_t> vgg_widths(std::size_t width_divisor);
/// Channel widths of the four SE-ResNet stages after the divisor.
std::vector<std::size_t> se_resnet_widths(std::size_t width_divisor);

struct TrainingMeta {
  std::uint64_t epochs_completed = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct Model {
  ModelSpec spec;
  Graph graph;
  TrainingMeta meta;
};

/// Builds the architecture and draws parameters: weights uniform in
/// +-sqrt(6 / fan_in), biases zero, all rounded to float32 precision.
Model build(const ModelSpec& spec, std::uint64_t seed);

/// Builds the graph only, with zero parameters.
Graph build_graph(const ModelSpec& spec);

/// Rounds every parameter to the nearest float32 value.
void round_parameters_to_float(Graph& graph);

struct Prediction {
  std::vector<double> scores;
  std::size_t label = 0;  // argmax, ties toward class 0
};

Prediction predict(const Graph& graph, const NdArray& input);
Prediction predict(const Model& model, const Spectrogram& s);
std::vector<Prediction> predict_batch(const Model& model, std::span<const Spectrogram> inputs);

/// Checkpoint file: "ADVR", u32 version, u64 spec digest, the spec as
/// canonical text, training metadata as text, then each parameter as
/// name + shape + little-endian float32 values, and an FNV-1a checksum.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// Also rejects a file whose spec differs from `expected`.
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace advr
