#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advr/attack.hpp"
#include "advr/features.hpp"
#include "advr/models.hpp"

namespace advr {

enum class OptimizerKind { sgd_momentum };

struct TrainConfig {
  std::size_t t1 = 10;  // clean epochs
  std::size_t t2 = 5;   // adversarial epochs (upper bound)
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  AttackConfig attack;
  std::uint64_t seed = 1;
  // Fraction of each adversarial-phase batch left clean; 0 trains on
  // adversarial examples only.
  double clean_mix = 0.0;
  // Stop the adversarial phase once the epoch-mean loss changes by less
  // than this (relative) twice in a row; 0 disables the test.
  double convergence_tol = 1e-3;

  void validate() const;
};

enum class Phase { clean, adversarial };
std::string to_string(Phase phase);

struct EpochMetrics {
  std::size_t epoch = 0;  // global, 1-based
  Phase phase = Phase::clean;
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;  // NaN in the clean phase
  double mean_loss = 0.0;
};

/// Reported once per adversarial-phase batch, after the adversarial
/// examples are generated and before the parameter update.
struct BatchEvent {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::uint64_t parameter_digest = 0;  // of the parameters the batch attacked
};
using BatchObserver = std::function<void(const BatchEvent&)>;

/// Mini-batch SGD with momentum on clean examples for cfg.t1 epochs.
/// Shuffling depends only on (cfg.seed, global epoch index), and the
/// momentum buffer starts at zero on every call.
std::vector<EpochMetrics> train(Model& model, std::span<const LabeledSpectrogram> data,
                                const TrainConfig& cfg);

/// Up to cfg.t2 epochs in which every batch is replaced by PGD examples
/// generated against the current parameters before the update.
std::vector<EpochMetrics> adversarial_train(Model& model, std::span<const LabeledSpectrogram> data,
                                            const TrainConfig& cfg,
                                            const BatchObserver& observer = {});

/// Digest of the parameter bytes.
std::uint64_t parameter_digest(const Graph& graph);

/// One line per epoch: epoch, phase, clean_acc, adv_acc, mean_loss.
std::string format_metrics_line(const EpochMetrics& m);

}  // namespace advr
