#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advr/features.hpp"
#include "advr/graph.hpp"

namespace advr {

struct AttackConfig {
  double epsilon = 5.0;         // l-infinity radius, log-power units
  double alpha = 0.5;           // step size
  std::size_t iterations = 10;  // K
  // Step along +sign(grad) of the target loss instead of descending it.
  // The accept rule still demands a lower loss, so most steps are refused.
  bool ascent = false;

  void validate() const;
};

/// Binary task: the target is the other class.
std::size_t target_label(std::size_t true_label);

struct AdversarialExample {
  NdArray original;
  NdArray perturbed;
  std::size_t true_label = 0;
  std::size_t target_label = 1;
  std::size_t clean_prediction = 0;
  std::size_t predicted = 0;  // prediction on `perturbed`
  double final_loss = 0.0;    // target-label loss of `perturbed`
  bool success = false;       // predicted == target_label
  std::size_t accepted_steps = 0;
  // Target loss of the current iterate: entry 0 is the clean input, entry
  // k the state after iteration k.
  std::vector<double> loss_trace;
};

/// Element-wise projection of `candidate` onto the l-infinity ball of
/// radius epsilon around `origin`. The result r always satisfies
/// |r - origin| <= epsilon when evaluated in floating point.
NdArray clip_to_ball(const NdArray& candidate, const NdArray& origin, double epsilon);

/// Targeted PGD with an accept-on-decrease test. Each iteration proposes
/// clip(x_k - alpha * sign(grad_x Loss(x_k, target))) and keeps it only if
/// the target loss strictly drops; otherwise x_k is kept.
AdversarialExample pgd_attack(const Graph& model, const NdArray& x, std::size_t true_label,
                              const AttackConfig& cfg);

struct AttackSummary {
  std::size_t total = 0;
  std::size_t successes = 0;
  std::size_t still_correct = 0;  // prediction on perturbed == true label
  double mean_final_loss = 0.0;
  std::uint64_t seed = 0;

  double success_rate() const {
    return total ? static_cast<double>(successes) / static_cast<double>(total) : 0.0;
  }
  friend bool operator==(const AttackSummary&, const AttackSummary&) = default;
};

struct AttackBatch {
  std::vector<AdversarialExample> examples;
  AttackSummary summary;
};

/// Attacks every example independently (in parallel). The seed is recorded
/// in the summary; the binary target policy leaves nothing to randomize.
AttackBatch attack_batch(const Graph& model, std::span<const LabeledSpectrogram> data,
                         const AttackConfig& cfg, std::uint64_t seed);

}  // namespace advr
