#include "advr/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "advr/error.hpp"
#include "advr/parallel.hpp"
#include "binary_io.hpp"

namespace advr {

namespace {

constexpr char kCheckpointMagic[] = "ADVR";
constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw FormatError(FormatError::Kind::syntax,
                      fmt::format("'{}' needs a non-negative integer, got '{}'", key, value));
  }
  return static_cast<std::size_t>(v);
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

NodeId conv_relu(Graph& g, NodeId x, const std::string& name, std::size_t in, std::size_t out) {
  const NodeId c = g.conv2d(x, name, in, out, 3);
  return g.relu(c, name + "_relu");
}

void build_vgg(Graph& g, const ModelSpec& spec) {
  const auto w = vgg_widths(spec.width_divisor);
  NodeId x = g.input();
  x = conv_relu(g, x, "conv1_1", 1, w[0]);
  x = g.maxpool2d(x, "pool1");
  x = conv_relu(g, x, "conv2_1", w[0], w[1]);
  x = g.maxpool2d(x, "pool2");
  x = conv_relu(g, x, "conv3_1", w[1], w[2]);
  x = conv_relu(g, x, "conv3_2", w[2], w[3]);
  x = g.maxpool2d(x, "pool3");
  x = conv_relu(g, x, "conv4_1", w[3], w[4]);
  x = conv_relu(g, x, "conv4_2", w[4], w[5]);
  x = g.maxpool2d(x, "pool4");
  x = conv_relu(g, x, "conv5_1", w[5], w[6]);
  x = conv_relu(g, x, "conv5_2", w[6], w[7]);
  x = g.maxpool2d(x, "pool5");
  x = g.adaptive_avgpool(x, "avgpool", spec.pool_grid, spec.pool_grid);
  x = g.flatten(x, "flatten");
  const std::size_t flat = g.shape_of(x)[0];
  x = g.relu(g.dense(x, "fc1", flat, spec.fc_width), "fc1_relu");
  x = g.relu(g.dense(x, "fc2", spec.fc_width, spec.fc_width), "fc2_relu");
  g.dense(x, "fc3", spec.fc_width, spec.class_count);
}

void build_se_resnet(Graph& g, const ModelSpec& spec) {
  const auto w = se_resnet_widths(spec.width_divisor);
  NodeId x = conv_relu(g, g.input(), "stem", 1, w[0]);
  std::size_t channels = w[0];
  for (std::size_t s = 0; s < w.size(); ++s) {
    const std::string p = fmt::format("stage{}", s + 1);
    const std::size_t out = w[s];
    NodeId shortcut = x;
    if (channels != out) shortcut = g.conv2d(x, p + "_proj", channels, out, 1);
    NodeId h = conv_relu(g, x, p + "_conv1", channels, out);
    h = g.conv2d(h, p + "_conv2", out, out, 3);

    // Squeeze-excitation gate.
    const std::size_t hidden = std::max<std::size_t>(1, out / spec.se_ratio);
    NodeId e = g.adaptive_avgpool(h, p + "_se_pool", 1, 1);
    e = g.flatten(e, p + "_se_flat");
    e = g.relu(g.dense(e, p + "_se_reduce", out, hidden), p + "_se_relu");
    e = g.sigmoid(g.dense(e, p + "_se_expand", hidden, out), p + "_se_gate");
    h = g.channel_scale(h, e, p + "_se_scale");

    x = g.relu(g.add(h, shortcut, p + "_sum"), p + "_out");
    channels = out;
    if (s + 1 < w.size()) x = g.maxpool2d(x, p + "_pool");
  }
  x = g.adaptive_avgpool(x, "avgpool", spec.pool_grid, spec.pool_grid);
  x = g.flatten(x, "flatten");
  g.dense(x, "fc", g.shape_of(x)[0], spec.class_count);
}

void build_custom(Graph& g, const ModelSpec& spec) {
  NodeId x = g.input();
  std::size_t index = 0;
  for (const auto& tok : split_tokens(spec.layers)) {
    const auto parts = split(tok, ':');
    const std::string& op = parts[0];
    const std::string name = fmt::format("l{}_{}", index++, op);
    const Shape& s = g.shape_of(x);
    auto arg = [&](std::size_t i) { return parse_size(tok, parts.at(i)); };
    if (op == "conv" && (parts.size() == 2 || parts.size() == 3)) {
      if (s.size() != 3) throw ShapeError("layer '" + tok + "' needs a [C,H,W] input");
      x = g.conv2d(x, name, s[0], arg(1), parts.size() == 3 ? arg(2) : 3);
    } else if (op == "dense" && parts.size() == 2) {
      if (s.size() != 1) throw ShapeError("layer '" + tok + "' needs a flat input");
      x = g.dense(x, name, s[0], arg(1));
    } else if (op == "avgpool" && parts.size() == 2) {
      x = g.adaptive_avgpool(x, name, arg(1), arg(1));
    } else if (op == "maxpool" && parts.size() == 1) {
      x = g.maxpool2d(x, name);
    } else if (op == "relu" && parts.size() == 1) {
      x = g.relu(x, name);
    } else if (op == "sigmoid" && parts.size() == 1) {
      x = g.sigmoid(x, name);
    } else if (op == "flatten" && parts.size() == 1) {
      x = g.flatten(x, name);
    } else {
      throw InvalidArgument("unknown custom layer token '" + tok + "'");
    }
  }
  if (g.output_shape() != Shape{spec.class_count}) {
    throw ShapeError(fmt::format("custom layers end in {} instead of [{}] class scores",
                                 to_string(g.output_shape()), spec.class_count));
  }
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::vgg_like: return "vgg_like";
    case ModelKind::se_resnet: return "se_resnet";
    case ModelKind::custom: return "custom";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "vgg_like") return ModelKind::vgg_like;
  if (text == "se_resnet") return ModelKind::se_resnet;
  if (text == "custom") return ModelKind::custom;
  throw InvalidArgument("unknown model kind '" + text + "'");
}

std::vector<std::size_t> vgg_widths(std::size_t width_divisor) {
  std::vector<std::size_t> w = {64, 128, 256, 256, 512, 512, 512, 512};
  for (auto& v : w) v = std::max<std::size_t>(1, v / std::max<std::size_t>(1, width_divisor));
  return w;
}

std::vector<std::size_t> se_resnet_widths(std::size_t width_divisor) {
  std::vector<std::size_t> w = {16, 32, 64, 128};
  for (auto& v : w) v = std::max<std::size_t>(1, v / std::max<std::size_t>(1, width_divisor));
  return w;
}

void ModelSpec::validate() const {
  std::vector<std::string> problems;
  if (input_frames == 0) problems.push_back("input_frames must be positive");
  if (input_bins == 0) problems.push_back("input_bins must be positive");
  if (width_divisor == 0) problems.push_back("width_divisor must be >= 1");
  if (class_count != 2) problems.push_back("class_count must be 2");
  if (kind == ModelKind::vgg_like) {
    if (fc_width == 0) problems.push_back("fc_width must be positive");
    if (pool_grid == 0) problems.push_back("pool_grid must be positive");
    if (input_frames < 32 || input_bins < 32) {
      problems.push_back("vgg_like needs an input plane of at least 32x32 for five 2x2 pools");
    }
  }
  if (kind == ModelKind::se_resnet) {
    if (se_ratio == 0) problems.push_back("se_ratio must be >= 1");
    if (pool_grid == 0) problems.push_back("pool_grid must be positive");
    if (input_frames < 8 || input_bins < 8) {
      problems.push_back("se_resnet needs an input plane of at least 8x8 for three 2x2 pools");
    }
  }
  if (kind == ModelKind::custom && split_tokens(layers).empty()) {
    problems.push_back("custom kind needs a non-empty layers list");
  }
  if (kind != ModelKind::custom && !layers.empty()) {
    problems.push_back("layers is only valid for the custom kind");
  }
  if (!problems.empty()) {
    std::string msg = "invalid model spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw InvalidArgument(msg);
  }
}

std::string ModelSpec::canonical_text() const {
  return fmt::format(
      "kind={}\ninput_frames={}\ninput_bins={}\nwidth_divisor={}\nfc_width={}\npool_grid={}\n"
      "se_ratio={}\nlayers={}\nclass_count={}\n",
      to_string(kind), input_frames, input_bins, width_divisor, fc_width, pool_grid, se_ratio,
      layers, class_count);
}

ModelSpec ModelSpec::parse(const std::string& text) {
  ModelSpec spec;
  std::istringstream in(text);
  std::map<std::string, std::string> seen;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(FormatError::Kind::syntax, "model spec line without '=': " + line);
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (!seen.emplace(key, value).second) {
      throw FormatError(FormatError::Kind::syntax, "model spec repeats key '" + key + "'");
    }
    if (key == "kind") {
      spec.kind = parse_model_kind(value);
    } else if (key == "input_frames") {
      spec.input_frames = parse_size(key, value);
    } else if (key == "input_bins") {
      spec.input_bins = parse_size(key, value);
    } else if (key == "width_divisor") {
      spec.width_divisor = parse_size(key, value);
    } else if (key == "fc_width") {
      spec.fc_width = parse_size(key, value);
    } else if (key == "pool_grid") {
      spec.pool_grid = parse_size(key, value);
    } else if (key == "se_ratio") {
      spec.se_ratio = parse_size(key, value);
    } else if (key == "layers") {
      spec.layers = value;
    } else if (key == "class_count") {
      spec.class_count = parse_size(key, value);
    } else {
      throw FormatError(FormatError::Kind::syntax, "unknown model spec key '" + key + "'");
    }
  }
  return spec;
}

std::uint64_t ModelSpec::digest() const { return io::fnv1a(canonical_text()); }

Graph build_graph(const ModelSpec& spec) {
  spec.validate();
  Graph g(spec.input_shape());
  switch (spec.kind) {
    case ModelKind::vgg_like: build_vgg(g, spec); break;
    case ModelKind::se_resnet: build_se_resnet(g, spec); break;
    case ModelKind::custom: build_custom(g, spec); break;
  }
  return g;
}

void round_parameters_to_float(Graph& graph) {
  for (auto& p : graph.parameters()) {
    for (double& v : p.value.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

Model build(const ModelSpec& spec, std::uint64_t seed) {
  Model m{spec, build_graph(spec), {}};
  m.meta.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& p : m.graph.parameters()) {
    const bool is_bias = p.value.rank() == 1 && p.name.ends_with(".bias");
    if (is_bias) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.value.values()) v = dist(rng);
  }
  round_parameters_to_float(m.graph);
  return m;
}

Prediction predict(const Graph& graph, const NdArray& input) {
  Prediction p;
  const NdArray scores = graph.forward(input);
  p.scores.assign(scores.values().begin(), scores.values().end());
  p.label = argmax(p.scores);
  return p;
}

Prediction predict(const Model& model, const Spectrogram& s) {
  return predict(model.graph, s.array());
}

std::vector<Prediction> predict_batch(const Model& model, std::span<const Spectrogram> inputs) {
  std::vector<Prediction> out(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { out[i] = predict(model, inputs[i]); });
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

std::string meta_text(const TrainingMeta& m) {
  return fmt::format("epochs_completed={}\nseed={}\nconfig_hash={}\n", m.epochs_completed, m.seed,
                     m.config_hash);
}

TrainingMeta parse_meta(const std::string& text, const std::string& what) {
  TrainingMeta m;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(FormatError::Kind::syntax, what + ": bad metadata line '" + line + "'");
    }
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    const std::uint64_t v = parse_size(key, value);
    if (key == "epochs_completed") {
      m.epochs_completed = v;
    } else if (key == "seed") {
      m.seed = v;
    } else if (key == "config_hash") {
      m.config_hash = v;
    } else {
      throw FormatError(FormatError::Kind::syntax, what + ": unknown metadata key '" + key + "'");
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  io::Writer w;
  const std::string spec_text = model.spec.canonical_text();
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u64(io::fnv1a(spec_text));
  w.str(spec_text);
  w.str(meta_text(model.meta));
  const auto& params = model.graph.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) w.f32(static_cast<float>(v));
  }
  w.u64(io::fnv1a(w.buffer()));
  io::write_file(path, w.buffer());
}

Model load_checkpoint(const std::filesystem::path& path) {
  using Kind = FormatError::Kind;
  const std::string bytes = io::read_file(path);
  const std::string what = path.string();
  io::Reader r(bytes, what);
  if (bytes.size() < 4 || r.bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(Kind::bad_magic, what + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(Kind::version_mismatch,
                      fmt::format("{}: checkpoint format version {} (this build reads {})", what,
                                  version, kCheckpointVersion));
  }
  const std::uint64_t digest = r.u64();
  const std::string spec_text = r.str();
  if (io::fnv1a(spec_text) != digest) {
    throw FormatError(Kind::hash_mismatch, what + ": spec digest does not match header");
  }
  const std::string meta = r.str();

  ModelSpec spec;
  try {
    spec = ModelSpec::parse(spec_text);
  } catch (const Error& e) {
    throw FormatError(Kind::syntax, what + ": " + e.what());
  }
  Model m{spec, build_graph(spec), parse_meta(meta, what)};

  auto& params = m.graph.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw FormatError(Kind::spec_mismatch, fmt::format("{}: {} parameter blocks, spec needs {}",
                                                       what, count, params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) {
      throw FormatError(Kind::spec_mismatch,
                        what + ": parameter '" + name + "' where '" + p.name + "' was expected");
    }
    const std::uint32_t rank = r.u32();
    if (rank != p.value.rank()) {
      throw FormatError(Kind::spec_mismatch, fmt::format("{}: parameter '{}' has rank {}, spec needs {}",
                                                         what, name, rank, p.value.rank()));
    }
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p.value.shape()) {
      throw FormatError(Kind::spec_mismatch,
                        fmt::format("{}: parameter '{}' has shape {}, spec needs {}", what, name,
                                    to_string(shape), to_string(p.value.shape())));
    }
    for (double& v : p.value.values()) v = static_cast<double>(r.f32());
  }
  const std::size_t body = r.position();
  const std::uint64_t checksum = r.u64();
  if (r.remaining() != 0) {
    throw FormatError(Kind::syntax, what + ": trailing bytes after checksum");
  }
  if (io::fnv1a(std::string_view(bytes).substr(0, body)) != checksum) {
    throw FormatError(Kind::checksum_mismatch, what + ": checksum mismatch (corrupted file)");
  }
  return m;
}

Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Model m = load_checkpoint(path);
  if (!(m.spec == expected)) {
    throw FormatError(FormatError::Kind::spec_mismatch,
                      path.string() + ": checkpoint spec differs from the requested spec:\n" +
                          m.spec.canonical_text() + "requested:\n" + expected.canonical_text());
  }
  return m;
}

}  // namespace advr
