#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advr/attack.hpp"
#include "advr/features.hpp"
#include "advr/filters.hpp"
#include "advr/models.hpp"
#include "advr/training.hpp"

namespace advr {

// ---------------------------------------------------------------- datasets

enum class Split { train, dev };
std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::string example_id;
  std::string source;  // wav or spectrogram path, relative to the manifest
  std::size_t label = 0;  // 0 bonafide, 1 spoof
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  /// Ids unique; every split that occurs holds both labels.
  void validate() const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Reads an ASVspoof LA protocol: "speaker utterance - system key" per
/// line, key in {bonafide, spoof}. Sources become <audio_dir>/<utt>.wav.
DatasetManifest parse_protocol(const std::filesystem::path& path, Split split,
                               const std::string& audio_dir = "flac");

/// Manifest file: one "id<TAB>source<TAB>label<TAB>split" line per entry.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Loads the entries of `split` as spectrograms. Sources ending in .adsp
/// are read directly; anything else is decoded as WAV and featurized.
std::vector<LabeledSpectrogram> load_examples(const DatasetManifest& m,
                                              const std::filesystem::path& base_dir, Split split,
                                              const FeatureConfig& features);

std::vector<LabeledSpectrogram> featurize(std::span<const LabeledClip> clips,
                                          const FeatureConfig& features);

// ---------------------------------------------------------------- evaluation

struct EvalCell {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::array<std::size_t, 2> class_correct{};
  std::array<std::size_t, 2> class_total{};
  std::vector<std::size_t> predictions;  // per example, dataset order

  double accuracy() const {
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }
  double class_accuracy(std::size_t c) const {
    return class_total[c] ? static_cast<double>(class_correct[c]) /
                                static_cast<double>(class_total[c])
                          : 0.0;
  }
};

/// (1) optionally attack the unfiltered model, (2) optionally filter,
/// (3) predict and count.
EvalCell evaluate(const Model& model, std::span<const LabeledSpectrogram> data,
                  const std::optional<FilterSpec>& filter,
                  const std::optional<AttackConfig>& attack, std::uint64_t seed);

/// Filter columns of a report, in order.
inline constexpr std::array<std::optional<FilterKind>, 4> kReportFilters = {
    std::nullopt, FilterKind::median, FilterKind::mean, FilterKind::gaussian};

struct EvalReport {
  std::string title;
  std::string model_kind;
  // [0] clean, [1] adversarial; columns follow kReportFilters.
  std::array<std::array<EvalCell, 4>, 2> cells;
  std::vector<std::string> example_ids;
  std::vector<std::size_t> labels;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
  bool held_out = false;
  AttackSummary attack;
};

struct ReportSettings {
  AttackConfig attack;
  std::size_t filter_window = 3;
  double gaussian_sigma = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  bool held_out = false;
};

/// Every {clean, adversarial} x {none, median, mean, gaussian} cell. The
/// adversarial examples are generated once and shared by all filters.
EvalReport evaluate_report(const Model& model, std::span<const LabeledSpectrogram> data,
                           const ReportSettings& settings, std::string title);

/// Rows are "Normal examples", "Adversarial examples + median filter"
/// and so on, one per (attack, filter) cell.
std::string format_report_table(const EvalReport& r);
std::string format_report_kv(const EvalReport& r);
/// Per-example results: id, label, condition, filter, prediction, correct.
std::string format_report_results(const EvalReport& r);

/// Line-oriented attack results: example_id, y, target, success, final_loss.
std::string format_attack_results(std::span<const LabeledSpectrogram> data,
                                  const AttackBatch& batch);

// ---------------------------------------------------------------- experiments

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t n_per_class = 64;
  bool held_out = false;  // false: train and test on the same (dev) set
  std::uint64_t eval_seed = 8;
  std::size_t eval_per_class = 64;
  double tone_amplitude = 0.3;
  double bonafide_noise = 1e-4;
  double spoof_noise = 0.3;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  FeatureConfig features;
  ModelSpec model;
  std::uint64_t model_seed = 1;
  AttackConfig attack;
  std::uint64_t attack_seed = 0;
  std::size_t filter_window = 3;
  double gaussian_sigma = 1.0;
  TrainConfig training;

  /// Model input plane follows the feature settings.
  void sync_model_shape();
  void validate() const;

  /// Sectioned key=value text in a fixed order.
  std::string canonical_text() const;
  std::uint64_t digest() const;

  /// Sections dataset, features, model, attack, filters, training.
  /// Unknown sections or keys are errors; missing keys keep defaults.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

SynthConfig synth_config(const ExperimentConfig& cfg);

struct ExperimentResult {
  EvalReport before;
  EvalReport after;
  std::vector<EpochMetrics> metrics;
};

/// Generate data -> train T1 -> report -> adversarial training T2 ->
/// report. Writes checkpoints, reports, per-example results, the epoch
/// log and a run log into out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
ExperimentResult run_experiment(const std::filesystem::path& config_path,
                                const std::filesystem::path& out_dir);

}  // namespace advr
