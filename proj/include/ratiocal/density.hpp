#pragma once

// Nonparametric density estimators over score space: a fixed-grid histogram
// and a weighted k-nearest-neighbor estimator on top of KdTree.
//
// Both estimators answer two queries:
//   density(x)       normalized density, integrates to one
//   mass_density(x)  stored weight per unit volume near x, i.e. density(x)
//                    times the total stored weight
// The calibrator works with mass densities so that the ratio of a subset's
// estimate to the full set's estimate is a local fraction, not a ratio of
// two separately normalized densities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ratiocal/error.hpp"
#include "ratiocal/kdtree.hpp"

namespace ratiocal {

inline constexpr int kDensityArtifactVersion = 1;

enum class EstimatorKind { histogram, knn };
enum class Weighting { uniform, inverse_prevalence };

inline std::string_view to_string(EstimatorKind k) {
  return k == EstimatorKind::knn ? "knn" : "histogram";
}
inline std::string_view to_string(Weighting w) {
  return w == Weighting::inverse_prevalence ? "inverse-prevalence" : "uniform";
}
inline EstimatorKind estimator_from_string(std::string_view s) {
  if (s == "histogram" || s == "hist") return EstimatorKind::histogram;
  if (s == "knn") return EstimatorKind::knn;
  throw InvalidInput("unknown estimator '" + std::string(s) + "'");
}
inline Weighting weighting_from_string(std::string_view s) {
  if (s == "uniform") return Weighting::uniform;
  if (s == "inverse-prevalence") return Weighting::inverse_prevalence;
  throw InvalidInput("unknown weighting '" + std::string(s) + "'");
}

struct DensityConfig {
  EstimatorKind kind = EstimatorKind::histogram;
  std::size_t bins_per_dim = 100;
  std::size_t k = 25;
  Weighting weighting = Weighting::uniform;

  void validate() const {
    if (k < 1) throw InvalidInput("k must be at least 1");
    if (bins_per_dim < 1) throw InvalidInput("bins per dimension must be >= 1");
  }

  friend bool operator==(const DensityConfig&, const DensityConfig&) = default;
};

// Volume of the unit ball in `dims` dimensions, pi^(d/2) / Gamma(d/2 + 1).
inline double unit_ball_volume(std::size_t dims) {
  if (dims == 0) throw InvalidInput("unit ball needs at least one dimension");
  const double half = static_cast<double>(dims) / 2.0;
  return std::pow(std::numbers::pi, half) / std::tgamma(half + 1.0);
}

struct AxisRange {
  double lo;
  double hi;
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

namespace detail {

inline std::vector<double> resolve_weights(std::span<const double> weights,
                                           std::size_t n) {
  if (weights.empty()) return std::vector<double>(n, 1.0);
  if (weights.size() != n)
    throw InvalidInput("one weight per point is required");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w))
      throw InvalidInput("point weights must be positive and finite");
  return {weights.begin(), weights.end()};
}

inline std::size_t point_count(std::span<const double> points,
                               std::size_t dims) {
  if (dims == 0) throw InvalidInput("points need at least one dimension");
  if (points.size() % dims != 0)
    throw InvalidInput("point block is not a multiple of the dimension");
  return points.size() / dims;
}

}  // namespace detail

class HistogramEstimate {
 public:
  // Cap on the dense cell grid (B^dims).
  static constexpr std::size_t kMaxCells = std::size_t{1} << 24;
  static constexpr double kAutoRangeMargin = 1e-9;

  // `points` is row-major, n x dims. An empty `weights` means unit weights.
  // Without explicit `ranges`, each axis spans the data extent plus a 1e-9
  // margin.
  static HistogramEstimate fit(std::span<const double> points,
                               std::size_t dims,
                               std::span<const double> weights,
                               std::size_t bins_per_dim,
                               std::optional<std::vector<AxisRange>> ranges =
                                   std::nullopt) {
    const std::size_t n = detail::point_count(points, dims);
    if (n == 0) throw InvalidInput("histogram needs at least one point");
    if (bins_per_dim < 1) throw InvalidInput("bins per dimension must be >= 1");
    const auto w = detail::resolve_weights(weights, n);

    HistogramEstimate est;
    est.dims_ = dims;
    est.bins_ = bins_per_dim;
    if (ranges) {
      if (ranges->size() != dims)
        throw InvalidInput("one range per dimension is required");
      est.ranges_ = std::move(*ranges);
    } else {
      est.ranges_.assign(dims, {std::numeric_limits<double>::infinity(),
                                -std::numeric_limits<double>::infinity()});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < dims; ++a) {
          est.ranges_[a].lo = std::min(est.ranges_[a].lo, points[i * dims + a]);
          est.ranges_[a].hi = std::max(est.ranges_[a].hi, points[i * dims + a]);
        }
      for (auto& r : est.ranges_) {
        r.lo -= kAutoRangeMargin;
        r.hi += kAutoRangeMargin;
      }
    }
    for (const auto& r : est.ranges_)
      if (!(r.lo < r.hi)) throw InvalidInput("histogram range needs lo < hi");

    est.allocate();
    for (std::size_t i = 0; i < n; ++i) {
      auto cell = est.cell_of(points.subspan(i * dims, dims));
      if (!cell) throw InvalidInput("point outside the histogram range");
      est.counts_[*cell] += w[i];
      est.total_weight_ += w[i];
    }
    return est;
  }

  std::size_t dims() const { return dims_; }
  std::size_t bins_per_dim() const { return bins_; }
  const std::vector<AxisRange>& ranges() const { return ranges_; }
  const std::vector<double>& counts() const { return counts_; }
  double total_weight() const { return total_weight_; }

  double cell_volume() const {
    double v = 1.0;
    for (const auto& r : ranges_) v *= (r.hi - r.lo) / static_cast<double>(bins_);
    return v;
  }

  // Flat index of the cell holding x; cells are half-open [lo, hi) except
  // the last along each axis, which also takes hi.
  std::optional<std::size_t> cell_of(std::span<const double> x) const {
    if (x.size() != dims_)
      throw InvalidInput("query dimension does not match the histogram");
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dims_; ++a) {
      const auto& r = ranges_[a];
      if (!(x[a] >= r.lo && x[a] <= r.hi)) return std::nullopt;
      auto i = static_cast<std::size_t>((x[a] - r.lo) / (r.hi - r.lo) *
                                        static_cast<double>(bins_));
      if (i >= bins_) i = bins_ - 1;
      flat = flat * bins_ + i;
    }
    return flat;
  }

  // nullopt when x is outside the histogram's support.
  std::optional<double> density(std::span<const double> x) const {
    auto m = mass_density(x);
    if (!m) return std::nullopt;
    return *m / total_weight_;
  }

  std::optional<double> mass_density(std::span<const double> x) const {
    auto cell = cell_of(x);
    if (!cell) return std::nullopt;
    return counts_[*cell] / cell_volume();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["range"] = nlohmann::json::array();
    for (const auto& r : ranges_) j["range"].push_back({r.lo, r.hi});
    j["counts"] = counts_;
    j["total_weight"] = total_weight_;
    return j;
  }

  static HistogramEstimate from_json(const nlohmann::json& j, std::size_t dims,
                                     std::size_t bins_per_dim) {
    HistogramEstimate est;
    est.dims_ = dims;
    est.bins_ = bins_per_dim;
    for (const auto& r : j.at("range"))
      est.ranges_.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    if (est.ranges_.size() != dims)
      throw ParseError("histogram artifact: range count does not match dims");
    est.counts_ = j.at("counts").get<std::vector<double>>();
    est.total_weight_ = j.at("total_weight").get<double>();
    if (est.counts_.size() != est.cell_count())
      throw ParseError("histogram artifact: wrong number of cells");
    double sum = 0.0;
    for (double c : est.counts_) {
      if (c < 0.0) throw ParseError("histogram artifact: negative cell count");
      sum += c;
    }
    if (std::abs(sum - est.total_weight_) > 1e-9 * est.total_weight_)
      throw ParseError("histogram artifact: counts do not sum to total weight");
    return est;
  }

 private:
  std::size_t cell_count() const {
    std::size_t cells = 1;
    for (std::size_t a = 0; a < dims_; ++a) {
      if (cells > kMaxCells / bins_)
        throw InvalidInput("histogram grid too large; use the knn estimator");
      cells *= bins_;
    }
    return cells;
  }

  void allocate() { counts_.assign(cell_count(), 0.0); }

  std::size_t dims_ = 0;
  std::size_t bins_ = 1;
  std::vector<AxisRange> ranges_;
  std::vector<double> counts_;
  double total_weight_ = 0.0;
};

// Weighted kNN density
//
//   rho(x) = sum_{i<=k} W_i / (n * V_d * sum_{i<=k} d_i(x)^d)
//
// where d_i are the sorted neighbor distances, W_i the cumulative weight of
// the i nearest neighbors, and n the total stored weight. With unit weights
// W_i = i and this is the classic rank-sum kNN estimator. The weighted form
// is our own generalization.
class KnnEstimate {
 public:
  // Lower bound on sum d_i^d. Coincident points therefore give a finite
  // density ceiling instead of a division by zero.
  static constexpr double kVolumeFloor = 1e-12;

  static KnnEstimate fit(std::vector<double> points, std::size_t dims,
                         std::span<const double> weights, std::size_t k) {
    const std::size_t n = detail::point_count(points, dims);
    if (k < 1) throw InvalidInput("k must be at least 1");
    if (n < k)
      throw InvalidInput("knn estimator needs at least k=" + std::to_string(k) +
                         " points, got " + std::to_string(n));
    KnnEstimate est;
    est.weights_ = detail::resolve_weights(weights, n);
    for (double w : est.weights_) est.total_weight_ += w;
    est.k_ = k;
    est.ball_ = unit_ball_volume(dims);
    est.tree_ = KdTree(std::move(points), dims);
    return est;
  }

  std::size_t dims() const { return tree_.dims(); }
  std::size_t size() const { return tree_.size(); }
  std::size_t k() const { return k_; }
  double total_weight() const { return total_weight_; }
  const KdTree& tree() const { return tree_; }
  const std::vector<double>& weights() const { return weights_; }

  double density(std::span<const double> x) const { return density(x, k_); }
  double density(std::span<const double> x, std::size_t k) const {
    return mass_density(x, k) / total_weight_;
  }

  double mass_density(std::span<const double> x) const {
    return mass_density(x, k_);
  }
  double mass_density(std::span<const double> x, std::size_t k) const {
    if (k < 1 || k > size())
      throw InvalidInput("k must lie in [1, stored points]");
    const auto neighbors = tree_.nearest(x, k);
    const double d = static_cast<double>(dims());
    double cumulative = 0.0;
    double numerator = 0.0;
    double volume = 0.0;
    for (const auto& nb : neighbors) {
      cumulative += weights_[nb.index];
      numerator += cumulative;
      volume += std::pow(nb.distance, d);
    }
    return numerator / (ball_ * std::max(volume, kVolumeFloor));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["points"] = tree_.points();
    j["weights"] = weights_;
    return j;
  }

  static KnnEstimate from_json(const nlohmann::json& j, std::size_t dims,
                               std::size_t k) {
    auto points = j.at("points").get<std::vector<double>>();
    auto weights = j.at("weights").get<std::vector<double>>();
    return fit(std::move(points), dims, weights, k);
  }

 private:
  KdTree tree_;
  std::vector<double> weights_;
  double total_weight_ = 0.0;
  double ball_ = 0.0;
  std::size_t k_ = 1;
};

// Either estimator behind one interface, plus the config it was fitted with.
class DensityEstimate {
 public:
  static DensityEstimate fit(std::span<const double> points, std::size_t dims,
                             std::span<const double> weights,
                             const DensityConfig& config,
                             std::optional<std::vector<AxisRange>> ranges =
                                 std::nullopt) {
    config.validate();
    DensityEstimate est;
    est.config_ = config;
    if (config.kind == EstimatorKind::histogram)
      est.impl_ = HistogramEstimate::fit(points, dims, weights,
                                         config.bins_per_dim, std::move(ranges));
    else
      est.impl_ = KnnEstimate::fit({points.begin(), points.end()}, dims,
                                   weights, config.k);
    return est;
  }

  const DensityConfig& config() const { return config_; }
  EstimatorKind kind() const { return config_.kind; }

  std::size_t dims() const {
    return std::visit([](const auto& e) { return e.dims(); }, impl_);
  }
  double total_weight() const {
    return std::visit([](const auto& e) { return e.total_weight(); }, impl_);
  }

  std::optional<double> density(std::span<const double> x) const {
    return std::visit(
        [&](const auto& e) -> std::optional<double> { return e.density(x); },
        impl_);
  }
  std::optional<double> mass_density(std::span<const double> x) const {
    return std::visit(
        [&](const auto& e) -> std::optional<double> {
          return e.mass_density(x);
        },
        impl_);
  }

  const HistogramEstimate* histogram() const {
    return std::get_if<HistogramEstimate>(&impl_);
  }
  const KnnEstimate* knn() const { return std::get_if<KnnEstimate>(&impl_); }

  nlohmann::json to_json() const {
    nlohmann::json j = std::visit([](const auto& e) { return e.to_json(); },
                                  impl_);
    j["version"] = kDensityArtifactVersion;
    j["estimator_kind"] = std::string(to_string(config_.kind));
    j["dims"] = dims();
    j["config"] = {{"bins_per_dim", config_.bins_per_dim},
                   {"k", config_.k},
                   {"weighting", std::string(to_string(config_.weighting))}};
    return j;
  }

  static DensityEstimate from_json(const nlohmann::json& j) {
    try {
      const int version = j.at("version").get<int>();
      if (version != kDensityArtifactVersion)
        throw ParseError("unsupported density artifact version " +
                         std::to_string(version));
      DensityEstimate est;
      est.config_.kind =
          estimator_from_string(j.at("estimator_kind").get<std::string>());
      const auto& c = j.at("config");
      est.config_.bins_per_dim = c.at("bins_per_dim").get<std::size_t>();
      est.config_.k = c.at("k").get<std::size_t>();
      est.config_.weighting =
          weighting_from_string(c.at("weighting").get<std::string>());
      const auto dims = j.at("dims").get<std::size_t>();
      if (est.config_.kind == EstimatorKind::histogram)
        est.impl_ = HistogramEstimate::from_json(j, dims, est.config_.bins_per_dim);
      else
        est.impl_ = KnnEstimate::from_json(j, dims, est.config_.k);
      return est;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed density artifact: ") + e.what());
    }
  }

 private:
  std::variant<HistogramEstimate, KnnEstimate> impl_;
  DensityConfig config_;
};

}  // namespace ratiocal
