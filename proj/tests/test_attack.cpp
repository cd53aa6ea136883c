#include "support.hpp"

#include <advr/attack.hpp>
#include <advr/error.hpp>
#include <advr/models.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <random>

using namespace advr;
using advr::testing::random_array;

namespace {

// Two inputs, score0 = 0 and score1 = w.x + b: a logistic model whose
// target-class loss has a closed form.
Graph logistic(double w1, double w2, double b) {
  Graph g({1, 1, 2});
  auto f = g.flatten(g.input(), "flat");
  g.dense(f, "fc", 2, 2);
  auto& p = g.parameters();
  p[0].value = NdArray({2, 2}, std::vector<double>{0.0, 0.0, w1, w2});
  p[1].value = NdArray({2}, std::vector<double>{0.0, b});
  return g;
}

double softplus(double z) { return std::log1p(std::exp(z)); }

Model small_model(std::uint64_t seed) {
  ModelSpec s;
  s.kind = ModelKind::custom;
  s.input_frames = 6;
  s.input_bins = 7;
  s.layers = "conv:3 relu maxpool flatten dense:8 relu dense:2";
  return build(s, seed);
}

std::vector<LabeledSpectrogram> random_set(const ModelSpec& spec, std::size_t n,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledSpectrogram> v;
  for (std::size_t i = 0; i < n; ++i)
    v.push_back({"ex" + std::to_string(i), Spectrogram(random_array(spec.input_shape(), rng, 3.0)),
                 i % 2});
  return v;
}

class ScopedThreads {
 public:
  explicit ScopedThreads(const char* n) {
    if (const char* old = std::getenv("ADVR_THREADS")) saved_ = old;
    ::setenv("ADVR_THREADS", n, 1);
  }
  ~ScopedThreads() {
    if (saved_.empty())
      ::unsetenv("ADVR_THREADS");
    else
      ::setenv("ADVR_THREADS", saved_.c_str(), 1);
  }

 private:
  std::string saved_;
};

}  // namespace

TEST(ClipToBall, KnownCases) {
  const NdArray origin({1, 1, 4}, 0.0);
  const NdArray cand({1, 1, 4}, std::vector<double>{7.3, -7.3, 2.5, -5.0});
  const NdArray r = clip_to_ball(cand, origin, 5.0);
  EXPECT_EQ(r[0], 5.0);
  EXPECT_EQ(r[1], -5.0);
  EXPECT_EQ(r[2], 2.5);
  EXPECT_EQ(r[3], -5.0);
}

TEST(ClipToBall, PointsInsideAreUntouched) {
  std::mt19937_64 rng(1);
  const NdArray o = random_array({2, 5, 5}, rng, 10.0);
  NdArray c = o;
  std::uniform_real_distribution<double> u(-0.99, 0.99);
  for (double& v : c.values()) v += u(rng);
  EXPECT_EQ(clip_to_ball(c, o, 1.0), c);
}

TEST(ClipToBall, AgreesWithScalarOracleAndStaysInside) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> eps_d(0.0, 10.0);
  for (int t = 0; t < 200; ++t) {
    const double eps = eps_d(rng);
    const NdArray o = random_array({1, 4, 9}, rng, 50.0);
    const NdArray c = random_array({1, 4, 9}, rng, 50.0);
    const NdArray r = clip_to_ball(c, o, eps);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double oracle = std::min(std::max(c[i], o[i] - eps), o[i] + eps);
      // The projection may sit a few ulps inside the oracle so that the
      // floating-point distance never exceeds eps.
      EXPECT_NEAR(r[i], oracle, 8 * std::abs(std::nextafter(oracle, 0.0) - oracle) + 1e-300);
      EXPECT_LE(std::abs(r[i] - o[i]), eps);
    }
  }
}

TEST(ClipToBall, IsIdempotentAndExactAtZeroRadius) {
  std::mt19937_64 rng(3);
  const NdArray o = random_array({1, 3, 3}, rng, 4.0);
  const NdArray c = random_array({1, 3, 3}, rng, 4.0);
  const NdArray once = clip_to_ball(c, o, 0.7);
  EXPECT_EQ(clip_to_ball(once, o, 0.7), once);
  EXPECT_EQ(clip_to_ball(c, o, 0.0), o);
}

TEST(ClipToBall, ShapeMismatchThrows) {
  EXPECT_THROW(clip_to_ball(NdArray({1, 2, 2}), NdArray({1, 4}), 1.0), ShapeError);
}

TEST(Pgd, SingleStepOnLogisticModelMatchesHandComputation) {
  const Graph g = logistic(2.0, -3.0, 0.0);
  const NdArray x({1, 1, 2}, std::vector<double>{0.1, 0.2});
  AttackConfig cfg{.epsilon = 5.0, .alpha = 0.5, .iterations = 1};
  const AdversarialExample ex = pgd_attack(g, x, 0, cfg);
  // Target is class 1; its loss softplus(-z) falls as z = w.x grows, so
  // the descent step moves each input by alpha * sign(w).
  EXPECT_EQ(ex.target_label, 1u);
  EXPECT_EQ(ex.perturbed[0], 0.6);
  EXPECT_EQ(ex.perturbed[1], 0.2 - 0.5);
  ASSERT_EQ(ex.loss_trace.size(), 2u);
  EXPECT_NEAR(ex.loss_trace[0], softplus(0.4), 1e-14);
  EXPECT_NEAR(ex.loss_trace[1], softplus(-2.1), 1e-14);
  EXPECT_EQ(ex.accepted_steps, 1u);
  EXPECT_EQ(ex.clean_prediction, 0u);
  EXPECT_EQ(ex.predicted, 1u);
  EXPECT_TRUE(ex.success);
  EXPECT_EQ(ex.final_loss, ex.loss_trace.back());
}

TEST(Pgd, AscentStepIsRejectedByAcceptRule) {
  const Graph g = logistic(2.0, -3.0, 0.0);
  const NdArray x({1, 1, 2}, std::vector<double>{0.1, 0.2});
  AttackConfig cfg{.epsilon = 5.0, .alpha = 0.5, .iterations = 1, .ascent = true};
  const AdversarialExample ex = pgd_attack(g, x, 0, cfg);
  EXPECT_EQ(ex.perturbed, x);
  EXPECT_EQ(ex.accepted_steps, 0u);
  EXPECT_EQ(ex.loss_trace[1], ex.loss_trace[0]);
}

TEST(Pgd, ZeroGradientComponentsStayPut) {
  const Graph g = logistic(1.0, 0.0, 0.0);
  const NdArray x({1, 1, 2}, std::vector<double>{0.0, 0.3});
  const auto ex = pgd_attack(g, x, 0, AttackConfig{.epsilon = 2.0, .alpha = 0.5, .iterations = 3});
  EXPECT_EQ(ex.perturbed[0], 1.5);
  EXPECT_EQ(ex.perturbed[1], 0.3);
}

TEST(Pgd, ZeroRadiusReturnsTheInputBitForBit) {
  const Model m = small_model(1);
  for (const auto& ex : random_set(m.spec, 6, 4)) {
    const auto r = pgd_attack(m.graph, ex.spectrogram.array(), ex.label,
                              AttackConfig{.epsilon = 0.0, .alpha = 0.5, .iterations = 4});
    EXPECT_EQ(r.perturbed, ex.spectrogram.array());
    EXPECT_EQ(r.accepted_steps, 0u);
  }
}

TEST(Pgd, AcceptedLossesNeverIncreaseAndPerturbationIsBounded) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> eps_d(0.0, 10.0);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Model m = small_model(seed);
    for (const auto& ex : random_set(m.spec, 6, seed + 100)) {
      AttackConfig cfg{.epsilon = eps_d(rng), .alpha = 0.5, .iterations = 10};
      const auto r = pgd_attack(m.graph, ex.spectrogram.array(), ex.label, cfg);
      ASSERT_EQ(r.loss_trace.size(), 11u);
      std::size_t drops = 0;
      for (std::size_t k = 1; k < r.loss_trace.size(); ++k) {
        EXPECT_LE(r.loss_trace[k], r.loss_trace[k - 1]);
        drops += r.loss_trace[k] < r.loss_trace[k - 1];
      }
      EXPECT_EQ(drops, r.accepted_steps);
      for (std::size_t i = 0; i < r.perturbed.size(); ++i)
        ASSERT_LE(std::abs(r.perturbed[i] - r.original[i]), cfg.epsilon);
    }
  }
}

TEST(Pgd, InvalidConfigurationIsRejected) {
  const Model m = small_model(1);
  const NdArray x(m.spec.input_shape());
  EXPECT_THROW(pgd_attack(m.graph, x, 0, AttackConfig{.epsilon = -1.0}), InvalidArgument);
  EXPECT_THROW(pgd_attack(m.graph, x, 0, AttackConfig{.alpha = 0.0}), InvalidArgument);
  EXPECT_THROW(pgd_attack(m.graph, x, 0, AttackConfig{.iterations = 0}), InvalidArgument);
  EXPECT_THROW(pgd_attack(m.graph, x, 2, AttackConfig{}), InvalidArgument);
}

TEST(AttackBatch, SummaryRecountsTheExamples) {
  const Model m = small_model(3);
  const auto data = random_set(m.spec, 20, 9);
  const auto b = attack_batch(m.graph, data, AttackConfig{}, 77);
  ASSERT_EQ(b.examples.size(), data.size());
  std::size_t success = 0, correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = b.examples[i];
    EXPECT_EQ(e.true_label, data[i].label);
    EXPECT_EQ(e.target_label, 1 - data[i].label);
    EXPECT_EQ(e.success, e.predicted == e.target_label);
    EXPECT_EQ(e.predicted, predict(m.graph, e.perturbed).label);
    success += e.success;
    correct += e.predicted == e.true_label;
    loss += e.final_loss;
  }
  EXPECT_EQ(b.summary.total, data.size());
  EXPECT_EQ(b.summary.successes, success);
  EXPECT_EQ(b.summary.still_correct, correct);
  EXPECT_NEAR(b.summary.mean_final_loss, loss / static_cast<double>(data.size()), 1e-12);
  EXPECT_EQ(b.summary.seed, 77u);
}

TEST(AttackBatch, ResultsDoNotDependOnThreadCount) {
  const Model m = small_model(4);
  const auto data = random_set(m.spec, 13, 10);
  AttackBatch one, many;
  {
    ScopedThreads t("1");
    one = attack_batch(m.graph, data, AttackConfig{}, 1);
  }
  {
    ScopedThreads t("5");
    many = attack_batch(m.graph, data, AttackConfig{}, 1);
  }
  EXPECT_EQ(one.summary, many.summary);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(one.examples[i].perturbed, many.examples[i].perturbed);
    EXPECT_EQ(one.examples[i].loss_trace, many.examples[i].loss_trace);
  }
}

TEST(AttackBatch, ZeroRadiusSuccessIsTheCleanErrorRate) {
  const Model m = small_model(5);
  const auto data = random_set(m.spec, 30, 11);
  const auto b =
      attack_batch(m.graph, data, AttackConfig{.epsilon = 0.0, .alpha = 0.5, .iterations = 1}, 0);
  std::size_t wrong = 0;
  for (const auto& ex : data) wrong += predict(m, ex.spectrogram).label != ex.label;
  EXPECT_EQ(b.summary.successes, wrong);
}

TEST(AttackBatch, FailuresNameTheExample) {
  Model m = small_model(6);
  auto data = random_set(m.spec, 4, 12);
  data[2].spectrogram.at(0, 0) = std::nan("");
  try {
    attack_batch(m.graph, data, AttackConfig{}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ex2"), std::string::npos) << e.what();
  }
}
