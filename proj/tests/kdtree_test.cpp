#include "ratiocal/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gtest/gtest.h"

namespace ratiocal {
namespace {

std::vector<double> brute_distances(const std::vector<double>& pts,
                                    std::size_t dims,
                                    std::span<const double> q) {
  std::vector<double> out;
  for (std::size_t i = 0; i < pts.size() / dims; ++i) {
    double d2 = 0.0;
    for (std::size_t a = 0; a < dims; ++a)
      d2 += (pts[i * dims + a] - q[a]) * (pts[i * dims + a] - q[a]);
    out.push_back(std::sqrt(d2));
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(KdTree, TwoPoints) {
  KdTree tree({0.0, 1.0}, 1);
  EXPECT_EQ(tree.size(), 2u);
  const double q = 0.25;
  const auto nb = tree.nearest(std::span<const double>(&q, 1), 2);
  ASSERT_EQ(nb.size(), 2u);
  EXPECT_EQ(nb[0].index, 0u);
  EXPECT_DOUBLE_EQ(nb[0].distance, 0.25);
  EXPECT_DOUBLE_EQ(nb[1].distance, 0.75);
}

TEST(KdTree, DuplicatesAreSeparateNeighbors) {
  KdTree tree({0.5, 0.5, 0.5, 2.0}, 1);
  const double q = 0.5;
  const auto nb = tree.nearest(std::span<const double>(&q, 1), 3);
  ASSERT_EQ(nb.size(), 3u);
  EXPECT_EQ(nb[0].distance, 0.0);
  EXPECT_EQ(nb[1].distance, 0.0);
  EXPECT_EQ(nb[2].distance, 0.0);
  std::vector<std::size_t> idx{nb[0].index, nb[1].index, nb[2].index};
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(KdTree, StoredPointIsItsOwnNearestNeighbor) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> pts(3 * 500);
  for (auto& v : pts) v = g(rng);
  KdTree tree(pts, 3);
  for (std::size_t i = 0; i < 500; ++i) {
    const auto nb = tree.nearest(tree.point(i), 1);
    EXPECT_EQ(nb[0].distance, 0.0);
  }
}

TEST(KdTree, MatchesBruteForceNeighborDistances) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> grid(0, 4);
  for (std::size_t dims : {1u, 2u, 3u, 5u, 6u}) {
    for (bool lattice : {false, true}) {
      // The lattice case is full of exact ties and duplicates.
      std::vector<double> pts(dims * 700);
      for (auto& v : pts) v = lattice ? grid(rng) : g(rng);
      KdTree tree(pts, dims);
      for (int q = 0; q < 40; ++q) {
        std::vector<double> query(dims);
        for (auto& v : query) v = lattice ? grid(rng) + 0.5 * (q % 2) : g(rng);
        const auto brute = brute_distances(pts, dims, query);
        for (std::size_t k = 1; k <= 30; ++k) {
          const auto nb = tree.nearest(query, k);
          ASSERT_EQ(nb.size(), k);
          for (std::size_t i = 0; i < k; ++i)
            ASSERT_NEAR(nb[i].distance, brute[i], 1e-12 * (1.0 + brute[i]))
                << "dims=" << dims << " k=" << k << " i=" << i;
        }
      }
    }
  }
}

TEST(KdTree, KLargerThanSizeReturnsEverything) {
  KdTree tree({0.0, 1.0, 2.0}, 1);
  const double q = 0.0;
  EXPECT_EQ(tree.nearest(std::span<const double>(&q, 1), 10).size(), 3u);
}

TEST(KdTree, RejectsWrongQueryDimension) {
  KdTree tree({0.0, 1.0, 2.0, 3.0}, 2);
  const double q = 0.0;
  EXPECT_THROW(tree.nearest(std::span<const double>(&q, 1), 1), InvalidInput);
}

}  // namespace
}  // namespace ratiocal
