#include "ratiocal/calibrator.hpp"

#include <map>
#include <random>
#include <set>

#include "gtest/gtest.h"

namespace ratiocal {
namespace {

// Two-class softmax dataset from class-0 scores and true labels.
Dataset binary(const std::vector<double>& y0, const std::vector<int>& labels) {
  std::vector<double> values;
  for (double v : y0) {
    values.push_back(v);
    values.push_back(1.0 - v);
  }
  return Dataset(values, 2, labels, SpaceTag::softmax);
}

CalibratorOptions histogram(std::size_t bins) {
  CalibratorOptions o;
  o.density.kind = EstimatorKind::histogram;
  o.density.bins_per_dim = bins;
  return o;
}

CalibratorOptions knn(std::size_t k, bool reduce = true) {
  CalibratorOptions o;
  o.density.kind = EstimatorKind::knn;
  o.density.k = k;
  o.reduce_simplex = reduce;
  return o;
}

// Random d-class softmax scores whose labels agree with the argmax with
// probability depending on the score, so correct and incorrect mix.
Dataset random_scores(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> any(0, static_cast<int>(d) - 1);
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp(g(rng)));
    for (auto& v : z) v /= sum;
    values.insert(values.end(), z.begin(), z.end());
    const int top = argmax_class(z);
    labels.push_back(u(rng) < z[top] ? top : any(rng));
  }
  return Dataset(values, d, labels, SpaceTag::softmax);
}

TEST(Calibrator, SingleCellRatioIsAccuracy) {
  // 7 of 10 correct: class-0 scores >= 0.5 with label 0, or < 0.5 with label 1.
  const auto ds = binary({0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.3, 0.9, 0.8, 0.2},
                         {0, 0, 0, 0, 1, 1, 1, 1, 1, 0});
  const auto cal = Calibrator::fit(ds, histogram(1));
  for (double y0 : {0.0, 0.25, 0.5, 0.99, 1.0}) {
    const auto r = cal.score(ScoreVector({y0, 1.0 - y0}, SpaceTag::softmax));
    EXPECT_DOUBLE_EQ(r.probability, 0.7);
    EXPECT_FALSE(r.extrapolated);
  }
  EXPECT_DOUBLE_EQ(cal.fallback_prior(), 0.7);
}

TEST(Calibrator, CellRatioIsBinAccuracy) {
  // Ten points in cell [0.9, 1.0), seven correct; one elsewhere.
  std::vector<double> y0(10, 0.95);
  std::vector<int> labels{0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  y0.push_back(0.15);
  labels.push_back(1);
  const auto cal = Calibrator::fit(binary(y0, labels), histogram(10));
  for (double q : {0.91, 0.93, 0.999, 1.0})
    EXPECT_DOUBLE_EQ(cal.score(std::vector<double>{q, 1.0 - q}).probability, 0.7);
}

TEST(Calibrator, EmptyCellFallsBackToPrior) {
  const auto ds = binary({0.95, 0.95, 0.15}, {0, 1, 1});
  auto opts = histogram(10);
  opts.fallback_prior = 0.4;
  const auto cal = Calibrator::fit(ds, opts);
  const auto r = cal.score(std::vector<double>{0.55, 0.45});
  EXPECT_TRUE(r.extrapolated);
  EXPECT_EQ(r.probability, 0.4);
}

TEST(Calibrator, LogitScoresOutsideRangeAreExtrapolated) {
  Dataset ds({2.0, -1.0, -1.0, 2.0, 1.0, 0.5, 0.0, 1.0}, 2, {0, 0, 0, 1},
             SpaceTag::logit);
  const auto cal = Calibrator::fit(ds, histogram(4));
  EXPECT_EQ(cal.dims_used(), 2u);
  EXPECT_TRUE(cal.score(std::vector<double>{10.0, 0.0}).extrapolated);
  EXPECT_FALSE(cal.score(std::vector<double>{2.0, -1.0}).extrapolated);
}

TEST(Calibrator, AllCorrectIsOneEverywhere) {
  const auto cal = Calibrator::fit(binary({0.9, 0.2, 0.6}, {0, 1, 0}), histogram(10));
  EXPECT_EQ(cal.degeneracy(), Degeneracy::no_incorrect);
  EXPECT_FALSE(cal.warning().empty());
  EXPECT_EQ(cal.score(std::vector<double>{0.5, 0.5}).probability, 1.0);
}

TEST(Calibrator, NoneCorrectIsZeroEverywhere) {
  const auto cal = Calibrator::fit(binary({0.9, 0.2, 0.6}, {1, 0, 1}), knn(5));
  EXPECT_EQ(cal.degeneracy(), Degeneracy::no_correct);
  EXPECT_FALSE(cal.warning().empty());
  EXPECT_EQ(cal.score(std::vector<double>{0.3, 0.7}).probability, 0.0);
}

TEST(Calibrator, KnnAtUniqueCorrectPointIsOne) {
  const auto ds = binary({0.9, 0.7, 0.3, 0.1}, {0, 1, 1, 0});
  const auto cal = Calibrator::fit(ds, knn(1));
  const auto r = cal.score(std::vector<double>{0.9, 0.1});
  EXPECT_EQ(r.probability, 1.0);
  EXPECT_FALSE(r.extrapolated);
  EXPECT_NEAR(cal.score(std::vector<double>{0.7, 0.3}).probability, 0.0, 1e-9);
}

TEST(Calibrator, Errors) {
  EXPECT_THROW(Calibrator::fit(Dataset(), histogram(10)), InvalidInput);
  const auto cal = Calibrator::fit(binary({0.9, 0.1}, {0, 0}), histogram(10));
  EXPECT_THROW(cal.score(std::vector<double>{0.2, 0.3, 0.5}), InvalidInput);
  EXPECT_THROW(cal.score(ScoreVector({0.9, 0.1}, SpaceTag::logit)), InvalidInput);
  // Fewer correct points than k.
  EXPECT_THROW(Calibrator::fit(binary({0.9, 0.8, 0.7, 0.2}, {0, 1, 1, 0}), knn(2)),
               InvalidInput);
}

TEST(Calibrator, ReducesSoftmaxByDefault) {
  const auto ds = random_scores(200, 3, 1);
  EXPECT_EQ(Calibrator::fit(ds, knn(5)).dims_used(), 2u);
  EXPECT_EQ(Calibrator::fit(ds, knn(5, false)).dims_used(), 3u);
}

TEST(Calibrator, HistogramScoreIsExactCellFraction) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto ds = random_scores(60, 2, rng());
    const auto cal = Calibrator::fit(ds, histogram(5));
    std::map<std::size_t, std::pair<int, int>> cells;  // correct, total
    const auto& grid = *cal.rho_all()->histogram();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto& c = cells[*grid.cell_of(ds.score(i).first(1))];
      c.first += ds.correct(i) ? 1 : 0;
      c.second += 1;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& c = cells[*grid.cell_of(ds.score(i).first(1))];
      EXPECT_DOUBLE_EQ(cal.score(ds.score(i)).probability,
                       static_cast<double>(c.first) / c.second);
    }
  }
}

TEST(Calibrator, ScoresAlwaysInUnitInterval) {
  std::mt19937_64 rng(12);
  for (std::size_t d : {2u, 3u, 5u}) {
    const auto fit = random_scores(500, d, rng());
    const auto probe = random_scores(500, d, rng());
    for (const auto& opts : {knn(3), knn(25), knn(1, false), histogram(4)}) {
      if (d == 5 && opts.density.kind == EstimatorKind::histogram) continue;
      const auto cal = Calibrator::fit(fit, opts);
      for (const auto& r : cal.calibrate_batch(probe)) {
        EXPECT_GE(r.probability, 0.0);
        EXPECT_LE(r.probability, 1.0);
      }
    }
  }
}

TEST(Calibrator, InvariantUnderConsistentRelabeling) {
  const std::size_t d = 3;
  const auto ds = random_scores(400, d, 13);
  const auto probe = random_scores(100, d, 14);
  const std::vector<int> perm{2, 0, 1};  // class c becomes perm[c]
  auto relabel = [&](const Dataset& src) {
    std::vector<double> values(src.values().size());
    std::vector<int> labels(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c)
        values[i * d + perm[c]] = src.score(i)[c];
      labels[i] = perm[src.true_class(i)];
    }
    return Dataset(values, d, labels, SpaceTag::softmax);
  };
  // Full-dimensional fits; dropping a fixed coordinate is not symmetric in
  // the classes.
  for (const auto& opts : {knn(10, false), [] {
         auto o = histogram(6);
         o.reduce_simplex = false;
         return o;
       }()}) {
    const auto a = Calibrator::fit(ds, opts).calibrate_batch(probe);
    const auto b = Calibrator::fit(relabel(ds), opts).calibrate_batch(relabel(probe));
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_NEAR(a[i].probability, b[i].probability, 1e-12) << i;
  }
}

Dataset doubled(const Dataset& ds) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    idx.push_back(i);
    idx.push_back(i);
  }
  return ds.subset(idx);
}

TEST(Calibrator, HistogramUnchangedByDuplicatingData) {
  const auto ds = random_scores(300, 2, 15);
  const auto probe = random_scores(200, 2, 16);
  const auto a = Calibrator::fit(ds, histogram(20)).calibrate_batch(probe);
  const auto b = Calibrator::fit(doubled(ds), histogram(20)).calibrate_batch(probe);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_DOUBLE_EQ(a[i].probability, b[i].probability);
}

TEST(Calibrator, KnnUnchangedByDuplicatingDataAndDoublingK) {
  // With every point doubled, the 2k nearest neighbors are the k original
  // ones twice over, which scales both mass densities by the same factor.
  const auto ds = random_scores(300, 3, 17);
  const auto probe = random_scores(200, 3, 18);
  const auto a = Calibrator::fit(ds, knn(8)).calibrate_batch(probe);
  const auto b = Calibrator::fit(doubled(ds), knn(16)).calibrate_batch(probe);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_NEAR(a[i].probability, b[i].probability, 1e-6);
}

TEST(CalibrateBatch, EmptyAndSingle) {
  const auto cal = Calibrator::fit(random_scores(100, 2, 19), knn(5));
  EXPECT_TRUE(cal.calibrate_batch(Dataset({}, 2, {}, SpaceTag::softmax)).empty());
  const auto probe = random_scores(1, 2, 20);
  const auto one = cal.calibrate_batch(probe);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].probability, cal.score(probe.score(0)).probability);
}

TEST(CalibrateBatch, ThreadCountDoesNotChangeResults) {
  const auto cal = Calibrator::fit(random_scores(500, 3, 21), knn(7));
  const auto probe = random_scores(333, 3, 22);
  const auto serial = cal.calibrate_batch(probe, 1);
  const auto parallel = cal.calibrate_batch(probe, 4);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].probability, parallel[i].probability);
    EXPECT_EQ(serial[i].probability, cal.score(probe.score(i)).probability);
  }
}

TEST(CalibrateBatch, DimensionMismatchIsConfigError) {
  const auto cal = Calibrator::fit(random_scores(100, 2, 23), knn(5));
  EXPECT_THROW(cal.calibrate_batch(random_scores(10, 3, 24)), ConfigError);
}

TEST(SampleWeights, InversePrevalenceSumsToCount) {
  Dataset ds({1, 0, 1, 0, 1, 0, 0, 1}, 2, {0, 0, 0, 1}, SpaceTag::softmax);
  const auto w = sample_weights(ds, Weighting::inverse_prevalence);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_DOUBLE_EQ(w[0] + w[1] + w[2] + w[3], 4.0);
  EXPECT_DOUBLE_EQ(w[3] / w[0], 3.0);
  EXPECT_TRUE(sample_weights(ds, Weighting::uniform).empty());
}

TEST(Calibrator, JsonRoundTripIsBitIdentical) {
  const auto ds = random_scores(400, 3, 25);
  const auto probe = random_scores(100, 3, 26);
  auto weighted = knn(9);
  weighted.density.weighting = Weighting::inverse_prevalence;
  for (const auto& opts : {weighted, histogram(7)}) {
    const auto cal = Calibrator::fit(ds, opts);
    const auto back =
        Calibrator::from_json(nlohmann::json::parse(cal.to_json().dump()));
    EXPECT_EQ(back.dims_used(), cal.dims_used());
    EXPECT_EQ(back.fallback_prior(), cal.fallback_prior());
    EXPECT_EQ(back.config(), cal.config());
    const auto a = cal.calibrate_batch(probe), b = back.calibrate_batch(probe);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].probability, b[i].probability);
      EXPECT_EQ(a[i].extrapolated, b[i].extrapolated);
    }
  }
}

TEST(Calibrator, CorrectPointsAreSubsetOfAll) {
  const auto ds = random_scores(300, 3, 27);
  const auto cal = Calibrator::fit(ds, knn(4));
  const auto& all = cal.rho_all()->knn()->tree().points();
  const auto& correct = cal.rho_correct()->knn()->tree().points();
  std::multiset<std::pair<double, double>> pool;
  for (std::size_t i = 0; i < all.size(); i += 2) pool.insert({all[i], all[i + 1]});
  for (std::size_t i = 0; i < correct.size(); i += 2) {
    auto it = pool.find({correct[i], correct[i + 1]});
    ASSERT_NE(it, pool.end());
    pool.erase(it);
  }
}

}  // namespace
}  // namespace ratiocal
