// Command-line front end: synth, train, attack, advtrain, evaluate, report, run.

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "advr/attack.hpp"
#include "advr/error.hpp"
#include "advr/features.hpp"
#include "advr/filters.hpp"
#include "advr/harness.hpp"
#include "advr/models.hpp"
#include "advr/training.hpp"

namespace fs = std::filesystem;
using namespace advr;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!(out << text)) throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
}

struct DataArgs {
  std::string manifest;
  std::string config;
  std::string split = "dev";
};

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--manifest", a.manifest, "dataset manifest (id, source, label, split)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--config", a.config, "experiment config for feature/training defaults")
      ->check(CLI::ExistingFile);
  cmd->add_option("--split", a.split, "manifest split to use")->check(CLI::IsMember({"train", "dev"}));
}

struct AttackArgs {
  double epsilon = 5.0;
  double alpha = 0.5;
  std::size_t iters = 10;
  bool ascent = false;

  AttackConfig config() const { return {epsilon, alpha, iters, ascent}; }
};

void add_attack_options(CLI::App* cmd, AttackArgs& a) {
  cmd->add_option("--epsilon", a.epsilon, "l-infinity radius")->capture_default_str();
  cmd->add_option("--alpha", a.alpha, "step size")->capture_default_str();
  cmd->add_option("--iters", a.iters, "PGD iterations")->capture_default_str();
  cmd->add_flag("--ascent", a.ascent,
                "step along +sign(grad) of the target loss instead of descending");
}

ExperimentConfig base_config(const DataArgs& a) {
  return a.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(a.config);
}

// Features follow the config when given; otherwise they are derived from
// the model's input plane at the config's sample rate.
FeatureConfig features_for(const ModelSpec& spec, const DataArgs& a) {
  FeatureConfig f = base_config(a).features;
  if (a.config.empty()) {
    f.frames = spec.input_frames;
    f.n_fft = 2 * (spec.input_bins - 1);
  }
  if (f.frames != spec.input_frames || f.bins() != spec.input_bins) {
    throw InvalidArgument(fmt::format("features give {}x{} planes, model expects {}x{}", f.frames,
                                      f.bins(), spec.input_frames, spec.input_bins));
  }
  return f;
}

std::vector<LabeledSpectrogram> load_split(const DataArgs& a, const FeatureConfig& f) {
  const DatasetManifest m = read_manifest(a.manifest);
  m.validate();
  return load_examples(m, fs::path(a.manifest).parent_path(), parse_split(a.split), f);
}

void append_log(const std::string& path, const std::vector<EpochMetrics>& metrics) {
  std::string text;
  if (!fs::exists(path)) text = "epoch\tphase\tclean_acc\tadv_acc\tmean_loss\n";
  for (const auto& m : metrics) text += format_metrics_line(m) + "\n";
  std::FILE* f = std::fopen(path.c_str(), "a");
  if (!f) throw FormatError(FormatError::Kind::io, "cannot append to " + path);
  std::fputs(text.c_str(), f);
  std::fclose(f);
}

void print_metrics(const std::vector<EpochMetrics>& metrics) {
  for (const auto& m : metrics) std::cout << format_metrics_line(m) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted PGD attacks and defenses for spectrogram anti-spoofing classifiers"};
  app.require_subcommand(1);

  // synth
  std::uint64_t synth_seed = 7;
  std::size_t synth_n = 32;
  std::string synth_out, synth_config_path;
  auto* synth = app.add_subcommand("synth", "generate the synthetic two-class corpus as WAV files");
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--n-per-class", synth_n)->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--config", synth_config_path, "experiment config (features, dataset levels)")
      ->check(CLI::ExistingFile);

  // train
  DataArgs train_data;
  std::string train_out, train_log, train_model_kind;
  std::optional<std::size_t> train_t1, train_batch;
  std::optional<double> train_lr;
  std::optional<std::uint64_t> train_seed, train_model_seed;
  auto* train_cmd = app.add_subcommand("train", "build a model and train it on clean examples");
  add_data_options(train_cmd, train_data);
  train_cmd->add_option("--out", train_out, "checkpoint to write")->required();
  train_cmd->add_option("--t1", train_t1, "clean epochs");
  train_cmd->add_option("--batch", train_batch);
  train_cmd->add_option("--lr", train_lr);
  train_cmd->add_option("--seed", train_seed, "shuffling seed");
  train_cmd->add_option("--model-seed", train_model_seed, "initialization seed");
  train_cmd->add_option("--log", train_log, "append per-epoch metrics here");

  // attack
  DataArgs attack_data;
  AttackArgs attack_args;
  std::string attack_ckpt, attack_out;
  std::uint64_t attack_seed = 0;
  auto* attack_cmd = app.add_subcommand("attack", "generate targeted PGD adversarial spectrograms");
  add_data_options(attack_cmd, attack_data);
  add_attack_options(attack_cmd, attack_args);
  attack_cmd->add_option("--checkpoint", attack_ckpt)->required()->check(CLI::ExistingFile);
  attack_cmd->add_option("--seed", attack_seed)->capture_default_str();
  attack_cmd->add_option("--out", attack_out, "output directory")->required();

  // advtrain
  DataArgs adv_data;
  AttackArgs adv_attack;
  std::string adv_in, adv_out, adv_log;
  std::size_t adv_t1 = 0, adv_t2 = 5;
  std::optional<std::size_t> adv_batch;
  std::optional<double> adv_lr, adv_mix;
  std::optional<std::uint64_t> adv_seed;
  auto* adv_cmd = app.add_subcommand("advtrain", "adversarial training (optionally after T1 clean epochs)");
  add_data_options(adv_cmd, adv_data);
  add_attack_options(adv_cmd, adv_attack);
  adv_cmd->add_option("--checkpoint-in", adv_in)->required()->check(CLI::ExistingFile);
  adv_cmd->add_option("--checkpoint-out", adv_out)->required();
  adv_cmd->add_option("--t1", adv_t1, "clean epochs before the adversarial phase")->capture_default_str();
  adv_cmd->add_option("--t2", adv_t2, "adversarial epochs")->capture_default_str();
  adv_cmd->add_option("--batch", adv_batch);
  adv_cmd->add_option("--lr", adv_lr);
  adv_cmd->add_option("--clean-mix", adv_mix, "fraction of each batch left clean");
  adv_cmd->add_option("--seed", adv_seed);
  adv_cmd->add_option("--log", adv_log, "append per-epoch metrics here");

  // evaluate
  DataArgs eval_data;
  AttackArgs eval_attack;
  std::string eval_ckpt, eval_filter = "none", eval_results;
  std::size_t eval_window = 3;
  double eval_sigma = 1.0;
  bool eval_with_attack = false;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "accuracy for one (attack, filter) condition");
  add_data_options(eval_cmd, eval_data);
  add_attack_options(eval_cmd, eval_attack);
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_flag("--attack", eval_with_attack, "attack each example before filtering");
  eval_cmd->add_option("--filter", eval_filter)
      ->check(CLI::IsMember({"none", "median", "mean", "gaussian"}))
      ->capture_default_str();
  eval_cmd->add_option("--window", eval_window)->capture_default_str();
  eval_cmd->add_option("--sigma", eval_sigma)->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed)->capture_default_str();
  eval_cmd->add_option("--results", eval_results, "write per-example predictions here");

  // report
  DataArgs report_data;
  AttackArgs report_attack;
  std::string report_ckpt, report_out, report_title = "of the checkpoint";
  std::size_t report_window = 3;
  double report_sigma = 1.0;
  std::uint64_t report_seed = 0;
  auto* report_cmd = app.add_subcommand("report", "full clean/adversarial x filter accuracy table");
  add_data_options(report_cmd, report_data);
  add_attack_options(report_cmd, report_attack);
  report_cmd->add_option("--checkpoint", report_ckpt)->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--window", report_window)->capture_default_str();
  report_cmd->add_option("--sigma", report_sigma)->capture_default_str();
  report_cmd->add_option("--seed", report_seed)->capture_default_str();
  report_cmd->add_option("--title", report_title);
  report_cmd->add_option("--out", report_out, "output directory")->required();

  // run
  std::string run_config, run_out;
  auto* run_cmd = app.add_subcommand("run", "train, attack, defend and report end to end");
  run_cmd->add_option("--config", run_config)->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", run_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const ExperimentConfig cfg =
          synth_config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(synth_config_path);
      const auto clips = synth_dataset(synth_seed, synth_n, synth_config(cfg));
      DatasetManifest m;
      for (const auto& c : clips) {
        const std::string rel = "wav/" + c.id + ".wav";
        save_wav(c.clip, fs::path(synth_out) / rel);
        m.entries.push_back({c.id, rel, static_cast<std::size_t>(c.label), Split::dev});
      }
      write_manifest(m, fs::path(synth_out) / "manifest.tsv");
      std::cout << fmt::format("wrote {} clips to {}\n", clips.size(), synth_out);
    } else if (*train_cmd) {
      ExperimentConfig cfg = base_config(train_data);
      if (train_t1) cfg.training.t1 = *train_t1;
      if (train_batch) cfg.training.batch = *train_batch;
      if (train_lr) cfg.training.learning_rate = *train_lr;
      if (train_seed) cfg.training.seed = *train_seed;
      if (train_model_seed) cfg.model_seed = *train_model_seed;
      const auto data = load_split(train_data, cfg.features);
      Model model = build(cfg.model, cfg.model_seed);
      model.meta.config_hash = cfg.digest();
      const auto metrics = train(model, data, cfg.training);
      print_metrics(metrics);
      if (!train_log.empty()) append_log(train_log, metrics);
      save_checkpoint(model, train_out);
    } else if (*attack_cmd) {
      const Model model = load_checkpoint(attack_ckpt);
      const auto data = load_split(attack_data, features_for(model.spec, attack_data));
      const AttackBatch batch = attack_batch(model.graph, data, attack_args.config(), attack_seed);
      for (std::size_t i = 0; i < data.size(); ++i) {
        save_spectrogram(Spectrogram(batch.examples[i].perturbed),
                         fs::path(attack_out) / "adversarial" / (data[i].id + ".adsp"));
      }
      write_text(fs::path(attack_out) / "attack_results.tsv", format_attack_results(data, batch));
      std::cout << fmt::format("attacked {} examples, success rate {:.4f}\n", batch.summary.total,
                               batch.summary.success_rate());
    } else if (*adv_cmd) {
      Model model = load_checkpoint(adv_in);
      ExperimentConfig cfg = base_config(adv_data);
      TrainConfig tc = cfg.training;
      tc.t1 = adv_t1;
      tc.t2 = adv_t2;
      if (adv_batch) tc.batch = *adv_batch;
      if (adv_lr) tc.learning_rate = *adv_lr;
      if (adv_mix) tc.clean_mix = *adv_mix;
      if (adv_seed) tc.seed = *adv_seed;
      tc.attack = adv_attack.config();
      const auto data = load_split(adv_data, features_for(model.spec, adv_data));
      auto metrics = train(model, data, tc);
      const auto adv = adversarial_train(model, data, tc);
      metrics.insert(metrics.end(), adv.begin(), adv.end());
      print_metrics(metrics);
      if (!adv_log.empty()) append_log(adv_log, metrics);
      save_checkpoint(model, adv_out);
    } else if (*eval_cmd) {
      const Model model = load_checkpoint(eval_ckpt);
      const auto data = load_split(eval_data, features_for(model.spec, eval_data));
      std::optional<FilterSpec> filter;
      if (eval_filter != "none") filter = FilterSpec{parse_filter_kind(eval_filter), eval_window, eval_sigma};
      std::optional<AttackConfig> attack;
      if (eval_with_attack) attack = eval_attack.config();
      const EvalCell cell = evaluate(model, data, filter, attack, eval_seed);
      std::cout << fmt::format("accuracy {:.6f} ({}/{}) bonafide {:.6f} spoof {:.6f}\n",
                               cell.accuracy(), cell.correct, cell.total, cell.class_accuracy(0),
                               cell.class_accuracy(1));
      if (!eval_results.empty()) {
        std::string text = "example_id\tlabel\tprediction\tcorrect\n";
        for (std::size_t i = 0; i < data.size(); ++i) {
          text += fmt::format("{}\t{}\t{}\t{}\n", data[i].id, data[i].label, cell.predictions[i],
                              cell.predictions[i] == data[i].label ? 1 : 0);
        }
        write_text(eval_results, text);
      }
    } else if (*report_cmd) {
      const Model model = load_checkpoint(report_ckpt);
      const auto data = load_split(report_data, features_for(model.spec, report_data));
      const ReportSettings settings{report_attack.config(), report_window, report_sigma,
                                    report_seed, model.meta.config_hash, false};
      const EvalReport r = evaluate_report(model, data, settings, report_title);
      write_text(fs::path(report_out) / "report.txt", format_report_table(r));
      write_text(fs::path(report_out) / "report.kv", format_report_kv(r));
      write_text(fs::path(report_out) / "results.tsv", format_report_results(r));
      std::cout << format_report_table(r);
    } else if (*run_cmd) {
      const ExperimentResult r = run_experiment(run_config, run_out);
      std::cout << format_report_table(r.before) << "\n" << format_report_table(r.after);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
