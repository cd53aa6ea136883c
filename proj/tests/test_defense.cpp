#include "support.hpp"

#include <advr/error.hpp>
#include <advr/filters.hpp>
#include <advr/models.hpp>
#include <advr/training.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace advr;
using advr::testing::random_array;

namespace {

constexpr FilterKind kKinds[] = {FilterKind::median, FilterKind::mean, FilterKind::gaussian};

ModelSpec tiny_spec() {
  ModelSpec s;
  s.kind = ModelKind::custom;
  s.input_frames = 6;
  s.input_bins = 7;
  s.layers = "conv:3 relu maxpool flatten dense:8 relu dense:2";
  return s;
}

// Two classes whose planes differ in mean level.
std::vector<LabeledSpectrogram> toy_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ModelSpec spec = tiny_spec();
  std::vector<LabeledSpectrogram> v;
  for (std::size_t i = 0; i < n; ++i) {
    NdArray a = random_array(spec.input_shape(), rng, 1.0);
    for (double& x : a.values()) x += i % 2 ? 1.0 : -1.0;
    v.push_back({"t" + std::to_string(i), Spectrogram(a), i % 2});
  }
  return v;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.t1 = 2;
  cfg.t2 = 2;
  cfg.batch = 5;
  cfg.learning_rate = 0.01;
  cfg.attack = AttackConfig{.epsilon = 0.5, .alpha = 0.1, .iterations = 3};
  cfg.convergence_tol = 0.0;
  return cfg;
}

void expect_same_parameters(const Model& a, const Model& b) {
  ASSERT_EQ(a.graph.parameters().size(), b.graph.parameters().size());
  for (std::size_t i = 0; i < a.graph.parameters().size(); ++i)
    EXPECT_EQ(a.graph.parameters()[i].value, b.graph.parameters()[i].value)
        << a.graph.parameters()[i].name;
}

}  // namespace

TEST(Filters, GaussianKernelIsNormalizedAndSymmetric) {
  for (std::size_t w : {1u, 3u, 5u, 9u})
    for (double sigma : {0.3, 1.0, 4.0}) {
      const auto k = gaussian_kernel(w, sigma);
      ASSERT_EQ(k.size(), w * w);
      double sum = 0.0;
      for (double v : k) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-12);
      for (std::size_t i = 0; i < k.size(); ++i) EXPECT_EQ(k[i], k[k.size() - 1 - i]);
      EXPECT_EQ(*std::max_element(k.begin(), k.end()), k[k.size() / 2]);
    }
}

TEST(Filters, WindowOneIsIdentity) {
  std::mt19937_64 rng(1);
  const NdArray a = random_array({2, 5, 8}, rng);
  for (auto kind : kKinds) EXPECT_EQ(apply_filter({kind, 1, 1.0}, a), a);
}

TEST(Filters, ConstantsAreFixedPoints) {
  for (auto kind : kKinds)
    for (std::size_t w : {3u, 5u}) {
      const NdArray a({1, 6, 7}, -3.25);
      const NdArray f = apply_filter({kind, w, 1.0}, a);
      for (double v : f.values()) EXPECT_NEAR(v, -3.25, 1e-12);
    }
}

TEST(Filters, MatchBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(2);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (int t = 0; t < 40; ++t) {
    const NdArray a = random_array({pick(1, 2), pick(3, 12), pick(3, 12)}, rng, 5.0);
    const std::size_t max_w = std::min(a.shape()[1], a.shape()[2]);
    const std::size_t w = 2 * pick(0, (max_w - 1) / 2) + 1;
    for (auto kind : kKinds) {
      const FilterSpec spec{kind, w, 0.5 + static_cast<double>(pick(0, 4)) * 0.5};
      const NdArray got = apply_filter(spec, a);
      const NdArray want = advr::testing::brute_force_filter(spec, a);
      if (kind == FilterKind::gaussian) {
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6);
      } else {
        ASSERT_EQ(got, want) << to_string(kind) << " window " << w;
      }
    }
  }
}

TEST(Filters, TenByTenBordersMirrorWithoutRepeatingTheEdge) {
  NdArray a({1, 10, 10});
  for (std::size_t i = 0; i < 100; ++i) a[i] = static_cast<double>(i * i % 17);
  for (auto kind : kKinds)
    for (std::size_t w : {3u, 5u, 7u, 9u}) {
      const FilterSpec spec{kind, w, 1.0};
      const NdArray got = apply_filter(spec, a), want = advr::testing::brute_force_filter(spec, a);
      for (std::size_t i = 0; i < got.size(); ++i)
        ASSERT_NEAR(got[i], want[i], kind == FilterKind::gaussian ? 1e-6 : 0.0);
    }
}

TEST(Filters, MeanAndGaussianAreLinearMedianIsPositivelyHomogeneous) {
  std::mt19937_64 rng(3);
  const NdArray s = random_array({1, 9, 11}, rng, 3.0);
  const NdArray t = random_array({1, 9, 11}, rng, 3.0);
  for (double a : {-2.0, 0.5, 7.0}) {
    NdArray as = s, sum = s;
    for (std::size_t i = 0; i < s.size(); ++i) {
      as[i] = a * s[i];
      sum[i] = s[i] + t[i];
    }
    for (auto kind : {FilterKind::mean, FilterKind::gaussian}) {
      const FilterSpec spec{kind, 5, 1.0};
      const NdArray fs = apply_filter(spec, s), ft = apply_filter(spec, t);
      const NdArray fas = apply_filter(spec, as), fsum = apply_filter(spec, sum);
      for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(fas[i], a * fs[i], 1e-9);
        EXPECT_NEAR(fsum[i], fs[i] + ft[i], 1e-9);
      }
    }
    if (a > 0) {
      const FilterSpec med{FilterKind::median, 3, 1.0};
      const NdArray fs = apply_filter(med, s), fas = apply_filter(med, as);
      for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(fas[i], a * fs[i]);
    }
  }
}

TEST(Filters, InvalidWindowsAreRejected) {
  const NdArray a({1, 4, 6});
  EXPECT_THROW(apply_filter({FilterKind::median, 2, 1.0}, a), InvalidArgument);
  EXPECT_THROW(apply_filter({FilterKind::mean, 0, 1.0}, a), InvalidArgument);
  EXPECT_THROW(apply_filter({FilterKind::mean, 5, 1.0}, a), InvalidArgument);
  EXPECT_THROW(apply_filter({FilterKind::gaussian, 3, 0.0}, a), InvalidArgument);
  EXPECT_THROW(apply_filter({FilterKind::median, 3, 1.0}, NdArray({4, 6})), ShapeError);
  EXPECT_THROW(parse_filter_kind("bilateral"), InvalidArgument);
  EXPECT_EQ(parse_filter_kind("gaussian"), FilterKind::gaussian);
}

TEST(Filters, SpectrogramOverloadFiltersTheSinglePlane) {
  std::mt19937_64 rng(4);
  const Spectrogram s(random_array({1, 8, 9}, rng));
  const FilterSpec spec{FilterKind::median, 3, 1.0};
  EXPECT_EQ(apply_filter(spec, s).array(), apply_filter(spec, s.array()));
}

TEST(Training, ZeroCleanEpochsLeaveTheModelAlone) {
  const auto data = toy_data(10, 1);
  Model m = build(tiny_spec(), 1);
  const Model before = m;
  TrainConfig cfg = quick_config();
  cfg.t1 = 0;
  EXPECT_TRUE(train(m, data, cfg).empty());
  expect_same_parameters(m, before);
  EXPECT_EQ(m.meta.epochs_completed, 0u);
}

TEST(Training, ZeroLearningRateLeavesParametersAlone) {
  const auto data = toy_data(10, 2);
  Model m = build(tiny_spec(), 2);
  const Model before = m;
  TrainConfig cfg = quick_config();
  cfg.learning_rate = 0.0;
  const auto metrics = train(m, data, cfg);
  ASSERT_EQ(metrics.size(), 2u);
  expect_same_parameters(m, before);
  adversarial_train(m, data, cfg);
  expect_same_parameters(m, before);
  EXPECT_EQ(m.meta.epochs_completed, 4u);
}

TEST(Training, CleanTrainingLearnsAndReportsMetrics) {
  const auto data = toy_data(40, 3);
  Model m = build(tiny_spec(), 3);
  TrainConfig cfg = quick_config();
  cfg.t1 = 8;
  const auto metrics = train(m, data, cfg);
  ASSERT_EQ(metrics.size(), 8u);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    EXPECT_EQ(metrics[i].epoch, i + 1);
    EXPECT_EQ(metrics[i].phase, Phase::clean);
    EXPECT_TRUE(std::isnan(metrics[i].adversarial_accuracy));
  }
  EXPECT_LT(metrics.back().mean_loss, metrics.front().mean_loss);
  EXPECT_GE(metrics.back().clean_accuracy, 0.9);
  const std::string line = format_metrics_line(metrics[0]);
  EXPECT_NE(line.find("\tclean\t"), std::string::npos) << line;
  EXPECT_NE(line.find("\tna\t"), std::string::npos) << line;
}

TEST(Training, ParametersStayFloatRepresentable) {
  const auto data = toy_data(12, 4);
  Model m = build(tiny_spec(), 4);
  train(m, data, quick_config());
  for (const auto& p : m.graph.parameters())
    for (double v : p.value.values()) ASSERT_EQ(static_cast<double>(static_cast<float>(v)), v);
}

TEST(Training, SameSeedSameParameters) {
  const auto data = toy_data(17, 5);
  Model a = build(tiny_spec(), 5), b = build(tiny_spec(), 5), c = build(tiny_spec(), 5);
  TrainConfig cfg = quick_config();
  train(a, data, cfg);
  adversarial_train(a, data, cfg);
  train(b, data, cfg);
  adversarial_train(b, data, cfg);
  expect_same_parameters(a, b);
  cfg.seed = 6;
  train(c, data, cfg);
  EXPECT_NE(parameter_digest(a.graph), parameter_digest(c.graph));
}

TEST(AdversarialTraining, ZeroRadiusEpochEqualsACleanEpoch) {
  const auto data = toy_data(23, 6);
  TrainConfig cfg = quick_config();
  cfg.attack.epsilon = 0.0;
  cfg.t2 = 3;
  Model adv = build(tiny_spec(), 6), clean = build(tiny_spec(), 6);
  train(adv, data, cfg);
  train(clean, data, cfg);
  adversarial_train(adv, data, cfg);
  TrainConfig more = cfg;
  more.t1 = cfg.t2;
  train(clean, data, more);
  expect_same_parameters(adv, clean);
  EXPECT_EQ(adv.meta, clean.meta);
}

TEST(AdversarialTraining, EveryBatchAttacksFreshParameters) {
  const auto data = toy_data(20, 7);
  Model m = build(tiny_spec(), 7);
  TrainConfig cfg = quick_config();
  train(m, data, cfg);
  const std::uint64_t start = parameter_digest(m.graph);
  std::vector<BatchEvent> events;
  adversarial_train(m, data, cfg, [&](const BatchEvent& e) { events.push_back(e); });
  ASSERT_EQ(events.size(), 8u);
  EXPECT_EQ(events.front().parameter_digest, start);
  EXPECT_EQ(events.front().epoch, 3u);
  std::set<std::uint64_t> distinct;
  for (const auto& e : events) distinct.insert(e.parameter_digest);
  EXPECT_EQ(distinct.size(), events.size());
  // The first batch of epoch 4 must not see the snapshot epoch 3 started from.
  EXPECT_EQ(events[4].epoch, 4u);
  EXPECT_NE(events[4].parameter_digest, events[0].parameter_digest);
}

TEST(AdversarialTraining, ReportsBothAccuraciesAndStopsOnConvergence) {
  const auto data = toy_data(20, 8);
  Model m = build(tiny_spec(), 8);
  TrainConfig cfg = quick_config();
  cfg.t2 = 10;
  cfg.convergence_tol = 10.0;  // every epoch counts as calm
  const auto metrics = adversarial_train(m, data, cfg);
  ASSERT_EQ(metrics.size(), 3u);
  for (const auto& e : metrics) {
    EXPECT_EQ(e.phase, Phase::adversarial);
    EXPECT_GE(e.adversarial_accuracy, 0.0);
    EXPECT_LE(e.adversarial_accuracy, 1.0);
  }
  cfg.convergence_tol = 0.0;
  Model n = build(tiny_spec(), 8);
  EXPECT_EQ(adversarial_train(n, data, cfg).size(), 10u);
}

TEST(AdversarialTraining, CleanMixKeepsPartOfEachBatch) {
  const auto data = toy_data(10, 9);
  TrainConfig cfg = quick_config();
  cfg.clean_mix = 1.0;
  cfg.t2 = 1;
  Model mixed = build(tiny_spec(), 9), clean = build(tiny_spec(), 9);
  adversarial_train(mixed, data, cfg);
  TrainConfig one = cfg;
  one.t1 = 1;
  train(clean, data, one);
  expect_same_parameters(mixed, clean);
}

TEST(Training, BadConfigurationAndDataAreRejected) {
  auto data = toy_data(4, 10);
  Model m = build(tiny_spec(), 10);
  TrainConfig cfg = quick_config();
  cfg.batch = 0;
  EXPECT_THROW(train(m, data, cfg), InvalidArgument);
  cfg = quick_config();
  cfg.momentum = 1.0;
  EXPECT_THROW(train(m, data, cfg), InvalidArgument);
  EXPECT_THROW(train(m, std::span<const LabeledSpectrogram>{}, quick_config()), InvalidArgument);
  data[1].spectrogram = Spectrogram(3, 3);
  EXPECT_THROW(train(m, data, quick_config()), ShapeError);
}

TEST(Training, DivergenceNamesEpochAndBatch) {
  const auto data = toy_data(8, 11);
  Model m = build(tiny_spec(), 11);
  TrainConfig cfg = quick_config();
  cfg.learning_rate = 1e300;
  try {
    train(m, data, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}
