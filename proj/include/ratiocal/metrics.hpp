#pragma once

// Calibration quality: reliability bins, ECE, MAPD and accuracy.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ratiocal/error.hpp"
#include "ratiocal/score.hpp"

namespace ratiocal {

struct Prediction {
  double probability;
  bool correct;
};

struct ReliabilityBin {
  double lo;
  double hi;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double empirical_accuracy = 0.0;

  double residual() const { return empirical_accuracy - mean_confidence; }
};

// Equal-width bins over [0, 1]; probability 1.0 lands in the last bin.
inline std::vector<ReliabilityBin> reliability_bins(
    std::span<const Prediction> predictions, std::size_t bin_count = 100) {
  if (bin_count == 0) throw InvalidInput("bin count must be positive");
  const double width = 1.0 / static_cast<double>(bin_count);
  std::vector<ReliabilityBin> bins(bin_count);
  std::vector<double> conf(bin_count, 0.0), hits(bin_count, 0.0);
  for (std::size_t b = 0; b < bin_count; ++b) {
    bins[b].lo = static_cast<double>(b) * width;
    bins[b].hi = b + 1 == bin_count ? 1.0 : static_cast<double>(b + 1) * width;
  }
  for (const auto& p : predictions) {
    if (!(p.probability >= 0.0 && p.probability <= 1.0))
      throw InvalidInput("probability outside [0, 1]");
    auto b = static_cast<std::size_t>(p.probability * static_cast<double>(bin_count));
    if (b >= bin_count) b = bin_count - 1;
    // Guard against the product rounding across an edge.
    if (b > 0 && p.probability < bins[b].lo) --b;
    if (b + 1 < bin_count && p.probability >= bins[b].hi) ++b;
    ++bins[b].count;
    conf[b] += p.probability;
    hits[b] += p.correct ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < bin_count; ++b) {
    if (bins[b].count == 0) continue;
    const double n = static_cast<double>(bins[b].count);
    bins[b].mean_confidence = conf[b] / n;
    bins[b].empirical_accuracy = hits[b] / n;
  }
  return bins;
}

// sum_b (n_b / N) |accuracy_b - confidence_b|
inline double expected_calibration_error(std::span<const ReliabilityBin> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) throw UndefinedMetric("ECE over zero samples");
  double ece = 0.0;
  for (const auto& b : bins)
    if (b.count > 0)
      ece += static_cast<double>(b.count) * std::abs(b.residual());
  return ece / static_cast<double>(total);
}

inline double expected_calibration_error(std::span<const Prediction> predictions,
                                         std::size_t bin_count = 100) {
  const auto bins = reliability_bins(predictions, bin_count);
  return expected_calibration_error(bins);
}

// Mean absolute percentage difference as a fraction: mean |p - r| / r.
inline double mapd(std::span<const double> predicted,
                   std::span<const double> reference) {
  if (predicted.size() != reference.size())
    throw InvalidInput("MAPD needs equal-length inputs");
  if (predicted.empty()) throw UndefinedMetric("MAPD over zero values");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!(reference[i] > 0.0))
      throw InvalidInput("MAPD reference values must be positive");
    sum += std::abs(predicted[i] - reference[i]) / reference[i];
  }
  return sum / static_cast<double>(predicted.size());
}

inline double accuracy(const Dataset& ds) {
  if (ds.empty()) throw UndefinedMetric("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += ds.correct(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// Means of `value` and `reference` over equal-width bins of a covariate,
// e.g. calibrated score and oracle probability as functions of the input.
struct CurveBin {
  double lo;
  double hi;
  std::size_t count = 0;
  double mean_value = 0.0;
  double mean_reference = 0.0;
};

inline std::vector<CurveBin> binned_curve(std::span<const double> covariate,
                                          std::span<const double> value,
                                          std::span<const double> reference,
                                          double lo, double hi,
                                          std::size_t bin_count) {
  if (covariate.size() != value.size() || covariate.size() != reference.size())
    throw InvalidInput("curve inputs must have equal lengths");
  if (bin_count == 0 || !(lo < hi)) throw InvalidInput("bad curve binning");
  const double width = (hi - lo) / static_cast<double>(bin_count);
  std::vector<CurveBin> bins(bin_count);
  for (std::size_t b = 0; b < bin_count; ++b) {
    bins[b].lo = lo + static_cast<double>(b) * width;
    bins[b].hi = lo + static_cast<double>(b + 1) * width;
  }
  for (std::size_t i = 0; i < covariate.size(); ++i) {
    const double x = covariate[i];
    if (!(x >= lo && x <= hi)) continue;
    auto b = static_cast<std::size_t>((x - lo) / width);
    if (b >= bin_count) b = bin_count - 1;
    ++bins[b].count;
    bins[b].mean_value += value[i];
    bins[b].mean_reference += reference[i];
  }
  for (auto& b : bins) {
    if (b.count == 0) continue;
    b.mean_value /= static_cast<double>(b.count);
    b.mean_reference /= static_cast<double>(b.count);
  }
  return bins;
}

// MAPD between the binned means, over bins holding at least `min_count`.
inline double curve_mapd(std::span<const CurveBin> bins,
                         std::size_t min_count = 1) {
  std::vector<double> v, r;
  for (const auto& b : bins)
    if (b.count >= min_count && b.count > 0) {
      v.push_back(b.mean_value);
      r.push_back(b.mean_reference);
    }
  return mapd(v, r);
}

}  // namespace ratiocal
