#include "advr/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "advr/error.hpp"
#include "advr/parallel.hpp"
#include "binary_io.hpp"

namespace advr {

// ---------------------------------------------------------------- datasets

std::string to_string(Split split) { return split == Split::train ? "train" : "dev"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "dev") return Split::dev;
  throw InvalidArgument("unknown split '" + text + "'");
}

void DatasetManifest::validate() const {
  if (entries.empty()) throw InvalidArgument("manifest is empty");
  std::set<std::string> ids;
  std::map<Split, std::array<std::size_t, 2>> per_split;
  for (const auto& e : entries) {
    if (!ids.insert(e.example_id).second) {
      throw InvalidArgument("duplicate example id '" + e.example_id + "'");
    }
    if (e.label > 1) throw InvalidArgument("example '" + e.example_id + "' has label > 1");
    per_split[e.split][e.label]++;
  }
  for (const auto& [split, counts] : per_split) {
    if (counts[0] == 0 || counts[1] == 0) {
      throw InvalidArgument("split '" + to_string(split) + "' lacks one of the two labels");
    }
  }
}

DatasetManifest parse_protocol(const std::filesystem::path& path, Split split,
                               const std::string& audio_dir) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 5) {
      problems.push_back(fmt::format("line {}: expected 5 fields, got {}", line_no, tok.size()));
      continue;
    }
    std::size_t label;
    if (tok[4] == "bonafide") {
      label = 0;
    } else if (tok[4] == "spoof") {
      label = 1;
    } else {
      problems.push_back(fmt::format("line {}: unknown key '{}'", line_no, tok[4]));
      continue;
    }
    m.entries.push_back({tok[1], audio_dir + "/" + tok[1] + ".wav", label, split});
  }
  if (!problems.empty()) {
    std::string msg = path.string() + ": malformed protocol";
    for (const auto& p : problems) msg += "\n  " + p;
    throw FormatError(FormatError::Kind::syntax, msg);
  }
  if (m.entries.empty()) {
    throw FormatError(FormatError::Kind::empty_payload, path.string() + ": empty protocol");
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : m.entries) {
    out += fmt::format("{}\t{}\t{}\t{}\n", e.example_id, e.source, e.label, to_string(e.split));
  }
  io::write_file(path, out);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string t; std::getline(fields, t, '\t');) f.push_back(t);
    if (f.size() != 4 || (f[2] != "0" && f[2] != "1")) {
      throw FormatError(FormatError::Kind::syntax,
                        fmt::format("{}:{}: expected id, source, label 0/1, split", path.string(),
                                    line_no));
    }
    try {
      m.entries.push_back({f[0], f[1], f[2] == "1" ? 1u : 0u, parse_split(f[3])});
    } catch (const InvalidArgument& e) {
      throw FormatError(FormatError::Kind::syntax,
                        fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  if (m.entries.empty()) {
    throw FormatError(FormatError::Kind::empty_payload, path.string() + ": empty manifest");
  }
  return m;
}

std::vector<LabeledSpectrogram> load_examples(const DatasetManifest& m,
                                              const std::filesystem::path& base_dir, Split split,
                                              const FeatureConfig& features) {
  std::vector<const ManifestEntry*> chosen;
  for (const auto& e : m.entries) {
    if (e.split == split) chosen.push_back(&e);
  }
  if (chosen.empty()) throw InvalidArgument("manifest has no '" + to_string(split) + "' entries");
  std::vector<LabeledSpectrogram> out(chosen.size());
  parallel_for(chosen.size(), [&](std::size_t i) {
    const ManifestEntry& e = *chosen[i];
    const auto path = base_dir / e.source;
    try {
      Spectrogram s = path.extension() == ".adsp"
                          ? load_spectrogram(path)
                          : log_power_spectrogram(load_wav(path), features);
      out[i] = {e.example_id, std::move(s), e.label};
    } catch (const Error& err) {
      throw Error("example '" + e.example_id + "': " + err.what());
    }
  });
  return out;
}

std::vector<LabeledSpectrogram> featurize(std::span<const LabeledClip> clips,
                                          const FeatureConfig& features) {
  std::vector<LabeledSpectrogram> out(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) {
    out[i] = {clips[i].id, log_power_spectrogram(clips[i].clip, features),
              static_cast<std::size_t>(clips[i].label)};
  });
  return out;
}

// ---------------------------------------------------------------- evaluation

namespace {

void count(EvalCell& cell, std::size_t label, std::size_t prediction) {
  cell.predictions.push_back(prediction);
  cell.total++;
  cell.class_total[label]++;
  if (prediction == label) {
    cell.correct++;
    cell.class_correct[label]++;
  }
}

std::string filter_label(const std::optional<FilterKind>& f) {
  return f ? to_string(*f) : "none";
}

std::string row_label(std::size_t condition, const std::optional<FilterKind>& f) {
  std::string s = condition == 0 ? "Normal examples" : "Adversarial examples";
  if (f) s += " + " + std::string(*f == FilterKind::gaussian ? "Gaussian" : to_string(*f)) + " filter";
  return s;
}

}  // namespace

EvalCell evaluate(const Model& model, std::span<const LabeledSpectrogram> data,
                  const std::optional<FilterSpec>& filter,
                  const std::optional<AttackConfig>& attack, std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("evaluate needs a non-empty dataset");
  std::vector<std::size_t> preds(data.size());
  if (attack) attack->validate();
  if (filter) filter->validate();
  parallel_for(data.size(), [&](std::size_t i) {
    try {
      NdArray x = data[i].spectrogram.array();
      if (attack) x = pgd_attack(model.graph, x, data[i].label, *attack).perturbed;
      if (filter) x = apply_filter(*filter, x);
      preds[i] = predict(model.graph, x).label;
    } catch (const Error& e) {
      throw Error("example '" + data[i].id + "': " + e.what());
    }
  });
  (void)seed;
  EvalCell cell;
  for (std::size_t i = 0; i < data.size(); ++i) count(cell, data[i].label, preds[i]);
  return cell;
}

EvalReport evaluate_report(const Model& model, std::span<const LabeledSpectrogram> data,
                           const ReportSettings& settings, std::string title) {
  if (data.empty()) throw InvalidArgument("evaluate_report needs a non-empty dataset");
  EvalReport r;
  r.title = std::move(title);
  r.model_kind = to_string(model.spec.kind);
  r.config_digest = settings.config_digest;
  r.seed = settings.seed;
  r.held_out = settings.held_out;
  for (const auto& ex : data) {
    r.example_ids.push_back(ex.id);
    r.labels.push_back(ex.label);
  }

  const AttackBatch adv = attack_batch(model.graph, data, settings.attack, settings.seed);
  r.attack = adv.summary;

  const std::size_t n = data.size();
  std::array<std::array<std::vector<std::size_t>, 4>, 2> preds;
  for (auto& row : preds) {
    for (auto& col : row) col.resize(n);
  }
  parallel_for(n, [&](std::size_t i) {
    const NdArray* inputs[2] = {&data[i].spectrogram.array(), &adv.examples[i].perturbed};
    for (std::size_t cond = 0; cond < 2; ++cond) {
      for (std::size_t f = 0; f < kReportFilters.size(); ++f) {
        const auto& kind = kReportFilters[f];
        if (!kind) {
          preds[cond][f][i] = predict(model.graph, *inputs[cond]).label;
        } else {
          const FilterSpec spec{*kind, settings.filter_window, settings.gaussian_sigma};
          preds[cond][f][i] = predict(model.graph, apply_filter(spec, *inputs[cond])).label;
        }
      }
    }
  });
  for (std::size_t cond = 0; cond < 2; ++cond) {
    for (std::size_t f = 0; f < 4; ++f) {
      for (std::size_t i = 0; i < n; ++i) count(r.cells[cond][f], data[i].label, preds[cond][f][i]);
    }
  }
  return r;
}

std::string format_report_table(const EvalReport& r) {
  const EvalCell& any = r.cells[0][0];
  std::string out = fmt::format("Testing accuracy {} ({})\n", r.title, r.model_kind);
  out += fmt::format("protocol: {}\n", r.held_out ? "held-out evaluation set"
                                                  : "trained and tested on the same set");
  out += fmt::format("examples: {} (bonafide {}, spoof {})\n\n", any.total, any.class_total[0],
                     any.class_total[1]);
  out += fmt::format("{:<42}{:>10}{:>10}{:>10}\n", "", "accuracy", "bonafide", "spoof");
  for (std::size_t cond = 0; cond < 2; ++cond) {
    for (std::size_t f = 0; f < 4; ++f) {
      const EvalCell& c = r.cells[cond][f];
      out += fmt::format("{:<42}{:>9.2f}%{:>9.2f}%{:>9.2f}%\n", row_label(cond, kReportFilters[f]),
                         100.0 * c.accuracy(), 100.0 * c.class_accuracy(0),
                         100.0 * c.class_accuracy(1));
    }
  }
  out += fmt::format("\nattack success rate: {:.2f}% ({}/{})\n", 100.0 * r.attack.success_rate(),
                     r.attack.successes, r.attack.total);
  out += fmt::format("config digest: {:016x}  seed: {}\n", r.config_digest, r.seed);
  return out;
}

std::string format_report_kv(const EvalReport& r) {
  std::string out;
  out += fmt::format("title={}\nmodel={}\nprotocol={}\nconfig_digest={:016x}\nseed={}\n", r.title,
                     r.model_kind, r.held_out ? "held_out" : "same_set", r.config_digest, r.seed);
  out += fmt::format("examples={}\n", r.cells[0][0].total);
  for (std::size_t cond = 0; cond < 2; ++cond) {
    for (std::size_t f = 0; f < 4; ++f) {
      const EvalCell& c = r.cells[cond][f];
      const std::string key =
          fmt::format("{}.{}", cond == 0 ? "clean" : "adversarial", filter_label(kReportFilters[f]));
      out += fmt::format("{}.accuracy={:.6f}\n{}.correct={}\n{}.total={}\n", key, c.accuracy(), key,
                         c.correct, key, c.total);
      out += fmt::format("{}.bonafide_accuracy={:.6f}\n{}.spoof_accuracy={:.6f}\n", key,
                         c.class_accuracy(0), key, c.class_accuracy(1));
    }
  }
  out += fmt::format("attack.successes={}\nattack.success_rate={:.6f}\nattack.mean_final_loss={:.9g}\n",
                     r.attack.successes, r.attack.success_rate(), r.attack.mean_final_loss);
  return out;
}

std::string format_report_results(const EvalReport& r) {
  std::string out = "example_id\tlabel\tcondition\tfilter\tprediction\tcorrect\n";
  for (std::size_t cond = 0; cond < 2; ++cond) {
    for (std::size_t f = 0; f < 4; ++f) {
      const EvalCell& c = r.cells[cond][f];
      for (std::size_t i = 0; i < r.example_ids.size(); ++i) {
        out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", r.example_ids[i], r.labels[i],
                           cond == 0 ? "clean" : "adversarial", filter_label(kReportFilters[f]),
                           c.predictions[i], c.predictions[i] == r.labels[i] ? 1 : 0);
      }
    }
  }
  return out;
}

std::string format_attack_results(std::span<const LabeledSpectrogram> data,
                                  const AttackBatch& batch) {
  std::string out = "example_id\ty\ttarget\tsuccess\tfinal_loss\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = batch.examples[i];
    out += fmt::format("{}\t{}\t{}\t{}\t{:.9g}\n", data[i].id, ex.true_label, ex.target_label,
                       ex.success ? 1 : 0, ex.final_loss);
  }
  return out;
}

// ---------------------------------------------------------------- experiments

namespace {

using boost::property_tree::ptree;

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') {
    throw FormatError(FormatError::Kind::syntax, fmt::format("{}: expected an integer, got '{}'", key, v));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) {
    throw FormatError(FormatError::Kind::syntax, fmt::format("{}: expected a number, got '{}'", key, v));
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError(FormatError::Kind::syntax, fmt::format("{}: expected true/false, got '{}'", key, v));
}

}  // namespace

void ExperimentConfig::sync_model_shape() {
  model.input_frames = features.frames;
  model.input_bins = features.bins();
}

void ExperimentConfig::validate() const {
  features.validate();
  model.validate();
  attack.validate();
  training.validate();
  FilterSpec{FilterKind::gaussian, filter_window, gaussian_sigma}.validate();
  if (dataset.n_per_class == 0) throw InvalidArgument("dataset.n_per_class must be >= 1");
  if (dataset.held_out && dataset.eval_per_class == 0) {
    throw InvalidArgument("dataset.eval_per_class must be >= 1");
  }
  if (model.input_frames != features.frames || model.input_bins != features.bins()) {
    throw InvalidArgument("model input plane does not match the feature settings");
  }
}

std::string ExperimentConfig::canonical_text() const {
  std::string s;
  s += fmt::format("[dataset]\nseed={}\nn_per_class={}\nheld_out={}\neval_seed={}\neval_per_class={}\n"
                   "tone_amplitude={}\nbonafide_noise={}\nspoof_noise={}\n",
                   dataset.seed, dataset.n_per_class, dataset.held_out, dataset.eval_seed,
                   dataset.eval_per_class, dataset.tone_amplitude, dataset.bonafide_noise,
                   dataset.spoof_noise);
  s += fmt::format("[features]\nsample_rate={}\nn_fft={}\nframes={}\nlog_floor={}\n",
                   features.sample_rate, features.n_fft, features.frames, features.log_floor);
  s += fmt::format("[model]\nkind={}\nwidth_divisor={}\nfc_width={}\npool_grid={}\nse_ratio={}\n"
                   "layers={}\nseed={}\n",
                   to_string(model.kind), model.width_divisor, model.fc_width, model.pool_grid,
                   model.se_ratio, model.layers, model_seed);
  s += fmt::format("[attack]\nepsilon={}\nalpha={}\niterations={}\nascent={}\nseed={}\n",
                   attack.epsilon, attack.alpha, attack.iterations, attack.ascent,
                   attack_seed);
  s += fmt::format("[filters]\nwindow={}\nsigma={}\n", filter_window, gaussian_sigma);
  s += fmt::format("[training]\nt1={}\nt2={}\nbatch={}\nlearning_rate={}\nmomentum={}\n"
                   "optimizer=sgd_momentum\nseed={}\nclean_mix={}\nconvergence_tol={}\n",
                   training.t1, training.t2, training.batch, training.learning_rate,
                   training.momentum, training.seed, training.clean_mix, training.convergence_tol);
  return s;
}

std::uint64_t ExperimentConfig::digest() const { return io::fnv1a(canonical_text()); }

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(FormatError::Kind::syntax, std::string("config: ") + e.what());
  }

  ExperimentConfig cfg;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, std::map<std::string, Setter>> keys = {
      {"dataset",
       {{"seed", [&](const std::string& v) { cfg.dataset.seed = to_u64("dataset.seed", v); }},
        {"n_per_class", [&](const std::string& v) { cfg.dataset.n_per_class = to_u64("dataset.n_per_class", v); }},
        {"held_out", [&](const std::string& v) { cfg.dataset.held_out = to_bool("dataset.held_out", v); }},
        {"eval_seed", [&](const std::string& v) { cfg.dataset.eval_seed = to_u64("dataset.eval_seed", v); }},
        {"eval_per_class", [&](const std::string& v) { cfg.dataset.eval_per_class = to_u64("dataset.eval_per_class", v); }},
        {"tone_amplitude", [&](const std::string& v) { cfg.dataset.tone_amplitude = to_double("dataset.tone_amplitude", v); }},
        {"bonafide_noise", [&](const std::string& v) { cfg.dataset.bonafide_noise = to_double("dataset.bonafide_noise", v); }},
        {"spoof_noise", [&](const std::string& v) { cfg.dataset.spoof_noise = to_double("dataset.spoof_noise", v); }}}},
      {"features",
       {{"sample_rate", [&](const std::string& v) { cfg.features.sample_rate = static_cast<unsigned>(to_u64("features.sample_rate", v)); }},
        {"n_fft", [&](const std::string& v) { cfg.features.n_fft = to_u64("features.n_fft", v); }},
        {"frames", [&](const std::string& v) { cfg.features.frames = to_u64("features.frames", v); }},
        {"log_floor", [&](const std::string& v) { cfg.features.log_floor = to_double("features.log_floor", v); }}}},
      {"model",
       {{"kind", [&](const std::string& v) { cfg.model.kind = parse_model_kind(v); }},
        {"width_divisor", [&](const std::string& v) { cfg.model.width_divisor = to_u64("model.width_divisor", v); }},
        {"fc_width", [&](const std::string& v) { cfg.model.fc_width = to_u64("model.fc_width", v); }},
        {"pool_grid", [&](const std::string& v) { cfg.model.pool_grid = to_u64("model.pool_grid", v); }},
        {"se_ratio", [&](const std::string& v) { cfg.model.se_ratio = to_u64("model.se_ratio", v); }},
        {"layers", [&](const std::string& v) { cfg.model.layers = v; }},
        {"seed", [&](const std::string& v) { cfg.model_seed = to_u64("model.seed", v); }}}},
      {"attack",
       {{"epsilon", [&](const std::string& v) { cfg.attack.epsilon = to_double("attack.epsilon", v); }},
        {"alpha", [&](const std::string& v) { cfg.attack.alpha = to_double("attack.alpha", v); }},
        {"iterations", [&](const std::string& v) { cfg.attack.iterations = to_u64("attack.iterations", v); }},
        {"ascent", [&](const std::string& v) { cfg.attack.ascent = to_bool("attack.ascent", v); }},
        {"seed", [&](const std::string& v) { cfg.attack_seed = to_u64("attack.seed", v); }}}},
      {"filters",
       {{"window", [&](const std::string& v) { cfg.filter_window = to_u64("filters.window", v); }},
        {"sigma", [&](const std::string& v) { cfg.gaussian_sigma = to_double("filters.sigma", v); }}}},
      {"training",
       {{"t1", [&](const std::string& v) { cfg.training.t1 = to_u64("training.t1", v); }},
        {"t2", [&](const std::string& v) { cfg.training.t2 = to_u64("training.t2", v); }},
        {"batch", [&](const std::string& v) { cfg.training.batch = to_u64("training.batch", v); }},
        {"learning_rate", [&](const std::string& v) { cfg.training.learning_rate = to_double("training.learning_rate", v); }},
        {"momentum", [&](const std::string& v) { cfg.training.momentum = to_double("training.momentum", v); }},
        {"optimizer", [&](const std::string& v) {
           if (v != "sgd_momentum") throw FormatError(FormatError::Kind::syntax, "training.optimizer: only sgd_momentum is supported");
         }},
        {"seed", [&](const std::string& v) { cfg.training.seed = to_u64("training.seed", v); }},
        {"clean_mix", [&](const std::string& v) { cfg.training.clean_mix = to_double("training.clean_mix", v); }},
        {"convergence_tol", [&](const std::string& v) { cfg.training.convergence_tol = to_double("training.convergence_tol", v); }}}},
  };

  for (const auto& [section, body] : tree) {
    const auto known = keys.find(section);
    if (known == keys.end()) {
      if (body.empty()) {
        throw FormatError(FormatError::Kind::syntax, "config: key '" + section + "' outside a section");
      }
      throw FormatError(FormatError::Kind::syntax, "config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const auto setter = known->second.find(key);
      if (setter == known->second.end()) {
        throw FormatError(FormatError::Kind::syntax,
                          "config: unknown key '" + key + "' in [" + section + "]");
      }
      setter->second(value.data());
    }
  }
  cfg.training.attack = cfg.attack;
  cfg.sync_model_shape();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return parse(io::read_file(path));
}

SynthConfig synth_config(const ExperimentConfig& cfg) {
  SynthConfig s;
  s.sample_rate = cfg.features.sample_rate;
  s.samples = samples_for_frames(cfg.features);
  s.tone_amplitude = cfg.dataset.tone_amplitude;
  s.bonafide_noise = cfg.dataset.bonafide_noise;
  s.spoof_noise = cfg.dataset.spoof_noise;
  return s;
}

namespace {

template <typename Fn>
auto stage(const char* name, std::string& log, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  try {
    auto result = fn();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    log += fmt::format("stage {} ok ({:.1f}s)\n", name, dt.count());
    return result;
  } catch (const std::exception& e) {
    throw Error(fmt::format("stage '{}' failed: {}", name, e.what()));
  }
}

DatasetManifest persist_examples(std::span<const LabeledSpectrogram> data, Split split,
                                 const std::filesystem::path& out_dir) {
  DatasetManifest m;
  for (const auto& ex : data) {
    const std::string rel = "spectrograms/" + ex.id + ".adsp";
    save_spectrogram(ex.spectrogram, out_dir / rel);
    m.entries.push_back({ex.id, rel, ex.label, split});
  }
  return m;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir) {
  ExperimentConfig cfg = config;
  cfg.training.attack = cfg.attack;
  cfg.sync_model_shape();
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  std::string log = fmt::format("config digest {:016x}\n", cfg.digest());
  ExperimentResult result;

  auto [train_set, eval_set] = stage("data", log, [&] {
    const auto clips = synth_dataset(cfg.dataset.seed, cfg.dataset.n_per_class, synth_config(cfg));
    std::vector<LabeledSpectrogram> train_set = featurize(clips, cfg.features);
    std::vector<LabeledSpectrogram> eval_set;
    DatasetManifest manifest = persist_examples(train_set, Split::dev, out_dir);
    if (cfg.dataset.held_out) {
      auto eval_clips =
          synth_dataset(cfg.dataset.eval_seed, cfg.dataset.eval_per_class, synth_config(cfg));
      for (auto& c : eval_clips) c.id = "eval_" + c.id;
      eval_set = featurize(eval_clips, cfg.features);
      // Training examples move to the train split; evaluation stays on dev.
      for (auto& e : manifest.entries) e.split = Split::train;
      const auto eval_manifest = persist_examples(eval_set, Split::dev, out_dir);
      manifest.entries.insert(manifest.entries.end(), eval_manifest.entries.begin(),
                              eval_manifest.entries.end());
    } else {
      eval_set = train_set;
    }
    manifest.validate();
    write_manifest(manifest, out_dir / "manifest.tsv");
    return std::pair{std::move(train_set), std::move(eval_set)};
  });

  Model model = stage("build", log, [&] {
    Model m = build(cfg.model, cfg.model_seed);
    m.meta.config_hash = cfg.digest();
    return m;
  });

  const ReportSettings settings{cfg.attack,   cfg.filter_window, cfg.gaussian_sigma,
                                cfg.attack_seed, cfg.digest(),   cfg.dataset.held_out};

  stage("train", log, [&] {
    auto m = train(model, train_set, cfg.training);
    result.metrics.insert(result.metrics.end(), m.begin(), m.end());
    save_checkpoint(model, out_dir / "checkpoint_pretrained.advr");
    return 0;
  });

  result.before = stage("evaluate_before", log, [&] {
    return evaluate_report(model, eval_set, settings, "before adversarial training");
  });

  stage("adversarial_train", log, [&] {
    auto m = adversarial_train(model, train_set, cfg.training);
    result.metrics.insert(result.metrics.end(), m.begin(), m.end());
    save_checkpoint(model, out_dir / "checkpoint_adversarial.advr");
    return 0;
  });

  result.after = stage("evaluate_after", log, [&] {
    return evaluate_report(model, eval_set, settings, "after adversarial training");
  });

  stage("write_reports", log, [&] {
    io::write_file(out_dir / "report_before.txt", format_report_table(result.before));
    io::write_file(out_dir / "report_before.kv", format_report_kv(result.before));
    io::write_file(out_dir / "results_before.tsv", format_report_results(result.before));
    io::write_file(out_dir / "report_after.txt", format_report_table(result.after));
    io::write_file(out_dir / "report_after.kv", format_report_kv(result.after));
    io::write_file(out_dir / "results_after.tsv", format_report_results(result.after));
    std::string epochs = "epoch\tphase\tclean_acc\tadv_acc\tmean_loss\n";
    for (const auto& m : result.metrics) epochs += format_metrics_line(m) + "\n";
    io::write_file(out_dir / "train_log.tsv", epochs);
    io::write_file(out_dir / "config.ini", cfg.canonical_text());
    return 0;
  });

  io::write_file(out_dir / "run.log", log);
  return result;
}

ExperimentResult run_experiment(const std::filesystem::path& config_path,
                                const std::filesystem::path& out_dir) {
  const ExperimentConfig cfg = [&] {
    try {
      return ExperimentConfig::load(config_path);
    } catch (const std::exception& e) {
      throw Error(fmt::format("stage 'config' failed: {}", e.what()));
    }
  }();
  return run_experiment(cfg, out_dir);
}

}  // namespace advr
