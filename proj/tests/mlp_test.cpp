#include "ratiocal/mlp.hpp"

#include <random>
#include <utility>

#include "gtest/gtest.h"
#include "ratiocal/metrics.hpp"

namespace ratiocal {
namespace {

TEST(MlpForward, SoftmaxContract) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = Mlp::toy(0.3, seed);
    for (double x : {-10.0, -1.0, 0.0, 1.5, 3.0, 25.0}) {
      for (bool drop : {false, true}) {
        const auto y = mlp_forward(m, x, drop, seed);
        ASSERT_EQ(y.size(), 2u);
        EXPECT_GE(y[0], 0.0);
        EXPECT_GE(y[1], 0.0);
        EXPECT_NEAR(y[0] + y[1], 1.0, 1e-6);
      }
    }
  }
}

TEST(MlpForward, DeterministicWithoutDropout) {
  const auto m = Mlp::toy(0.5, 1);
  EXPECT_EQ(mlp_forward(m, 0.7, false, 1), mlp_forward(m, 0.7, false, 2));
}

TEST(MlpForward, SeededDropoutIsReproducible) {
  const auto m = Mlp::toy(0.5, 1);
  std::vector<ScoreVector> a, b;
  bool varies = false;
  for (std::uint64_t t = 0; t < 25; ++t) {
    a.push_back(mlp_forward(m, 0.7, true, derive_seed(4, 0, t)));
    b.push_back(mlp_forward(m, 0.7, true, derive_seed(4, 0, t)));
    varies |= !(a.back() == a.front());
  }
  EXPECT_EQ(a, b);
  EXPECT_TRUE(varies);
}

TEST(MlpForward, InputDropoutZeroesTheInput) {
  const auto m = Mlp::toy(0.5, 4, DropoutSite::input);
  const auto at_zero = mlp_forward(m, 0.0, false);
  int dropped = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed)
    dropped += mlp_forward(m, 2.5, true, seed) == at_zero ? 1 : 0;
  EXPECT_GT(dropped, 60);
  EXPECT_LT(dropped, 140);
}

TEST(MlpForward, MaskKeepsExpectedActivation) {
  const auto m = Mlp::toy(0.25, 2);
  std::mt19937_64 rng(3);
  double kept = 0, total = 0;
  for (int i = 0; i < 2000; ++i)
    for (double v : m.sample_mask(rng)) {
      if (v != 0.0) {
        EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
      }
      kept += v;
      total += 1;
    }
  EXPECT_NEAR(kept / total, 1.0, 0.02);
}

// Central differences against the analytic gradient, with masks held fixed.
TEST(MlpGradient, MatchesFiniteDifferences) {
  for (auto [rate, site] : {std::pair{0.0, DropoutSite::hidden},
                             std::pair{0.3, DropoutSite::hidden},
                             std::pair{0.3, DropoutSite::input}}) {
    auto m = Mlp(2, 6, 3, rate, 5, site);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 2.0);
    std::vector<double> xs(2 * 64);
    for (auto& v : xs) v = g(rng);
    std::vector<int> labels(64);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
    std::vector<std::vector<double>> masks;
    if (rate > 0)
      for (std::size_t i = 0; i < labels.size(); ++i) masks.push_back(m.sample_mask(rng));
    std::vector<double> grad(m.parameter_count()), scratch(grad.size());
    m.loss_and_gradient(xs, labels, masks, grad);

    const double h = 1e-4;
    for (std::size_t p = 0; p < m.parameter_count(); ++p) {
      const double keep = m.parameters()[p];
      m.parameters()[p] = keep + h;
      const double up = m.loss_and_gradient(xs, labels, masks, scratch);
      m.parameters()[p] = keep - h;
      const double down = m.loss_and_gradient(xs, labels, masks, scratch);
      m.parameters()[p] = keep;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(grad[p], numeric, 1e-4 * std::max(1.0, std::abs(numeric)))
          << "rate=" << rate << " site=" << to_string(site) << " p=" << p;
    }
  }
}

TEST(MlpTrain, LossDecreasesAndAccuracyNearsBayes) {
  const auto train = gen_toy({50'000, 3.0, 1});
  TrainConfig cfg;
  cfg.seed = 2;
  const auto r = mlp_train(Mlp::toy(0.0, 11), train, cfg);
  ASSERT_EQ(r.loss_trace.size(), cfg.epochs + 1);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  const double acc = accuracy(predict_dataset(r.model, gen_toy({100'000, 3.0, 3})));
  // The Bayes-optimal accuracy for this problem is Phi(1.5) = 0.9332.
  EXPECT_GE(acc, 0.93);
  EXPECT_LE(acc, 0.94);
}

TEST(MlpTrain, UntrainedModelsAreNearChanceOnAverage) {
  const auto test = gen_toy({5000, 3.0, 4});
  double sum = 0.0;
  const int models = 40;
  for (int s = 0; s < models; ++s) sum += accuracy(predict_dataset(Mlp::toy(0.0, s), test));
  EXPECT_GT(sum / models, 0.35);
  EXPECT_LT(sum / models, 0.65);
}

TEST(MlpTrain, DeterministicForSeed) {
  const auto train = gen_toy({2000, 3.0, 1});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 8;
  const auto a = mlp_train(Mlp::toy(0.2, 1), train, cfg);
  const auto b = mlp_train(Mlp::toy(0.2, 1), train, cfg);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_TRUE(std::equal(a.model.parameters().begin(), a.model.parameters().end(),
                         b.model.parameters().begin()));
}

TEST(MlpTrain, DivergenceReportsTrace) {
  const auto train = gen_toy({1000, 3.0, 1});
  TrainConfig cfg;
  cfg.adam.learning_rate = std::numeric_limits<double>::infinity();
  try {
    mlp_train(Mlp::toy(0.0, 1), train, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    ASSERT_GE(e.loss_trace().size(), 2u);
    EXPECT_TRUE(std::isfinite(e.loss_trace().front()));
    EXPECT_FALSE(std::isfinite(e.loss_trace().back()));
  }
}

TEST(Mlp, JsonRoundTrip) {
  for (auto site : {DropoutSite::hidden, DropoutSite::input}) {
    const auto m = Mlp::toy(0.2, 9, site);
    const auto back = Mlp::from_json(nlohmann::json::parse(m.to_json().dump()));
    EXPECT_EQ(back.dropout_rate(), 0.2);
    EXPECT_EQ(back.dropout_site(), site);
    for (double x : {-1.0, 0.3, 4.0})
      for (std::uint64_t seed = 0; seed < 10; ++seed)
        EXPECT_EQ(mlp_forward(back, x, true, seed), mlp_forward(m, x, true, seed));
  }
  EXPECT_THROW(Mlp::from_json(nlohmann::json{{"version", 2}}), ParseError);
}

TEST(RunTrials, OrderIndependentSeeds) {
  const auto m = Mlp::toy(0.3, 2);
  const auto data = gen_toy({10, 3.0, 1});
  const auto all = run_trials(m, data, 5, 77);
  ToySet tail{{data.x.begin() + 4, data.x.end()}, {data.label.begin() + 4, data.label.end()}};
  const auto part = run_trials(m, tail, 5, 77, 4);
  for (std::size_t i = 0; i < part.size(); ++i) {
    EXPECT_EQ(part[i].sample_id(), all[i + 4].sample_id());
    EXPECT_EQ(part[i].trials(), all[i + 4].trials());
  }
  EXPECT_EQ(flatten_trials(all).size(), 50u);
}

}  // namespace
}  // namespace ratiocal
