#pragma once

// Density-ratio calibration. Fits one density estimate on the correctly
// predicted val-train scores and one on all val-train scores; the calibrated
// probability of a new score is the ratio of the two local mass densities.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ratiocal/density.hpp"
#include "ratiocal/error.hpp"
#include "ratiocal/score.hpp"

namespace ratiocal {

inline constexpr int kCalibratorArtifactVersion = 1;

struct CalibratorOptions {
  DensityConfig density;
  // Softmax scores are fitted in d-1 dims by dropping the last coordinate.
  bool reduce_simplex = true;
  // Defaults to the val-train accuracy.
  std::optional<double> fallback_prior;
};

enum class Degeneracy { none, no_correct, no_incorrect };

struct CalibratedScore {
  double probability;
  bool extrapolated;  // no local support; probability is the fallback prior
};

// Per-point weights for `ds` under `w`. Inverse-prevalence weights are
// 1 / prevalence(true class), rescaled so they sum to the sample count.
inline std::vector<double> sample_weights(const Dataset& ds, Weighting w) {
  if (w == Weighting::uniform) return {};
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < ds.size(); ++i) ++counts[ds.true_class(i)];
  const double n = static_cast<double>(ds.size());
  const double classes = static_cast<double>(counts.size());
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out[i] = n / (classes * static_cast<double>(counts[ds.true_class(i)]));
  return out;
}

class Calibrator {
 public:
  static Calibrator fit(const Dataset& val_train,
                        const CalibratorOptions& options = {}) {
    if (val_train.empty()) throw InvalidInput("val-train set is empty");
    options.density.validate();

    Calibrator cal;
    cal.config_ = options.density;
    cal.class_count_ = val_train.class_count();
    cal.space_ = val_train.space();
    cal.reduce_ = options.reduce_simplex && cal.space_ == SpaceTag::softmax &&
                  cal.class_count_ > 1;
    cal.dims_used_ = cal.reduce_ ? cal.class_count_ - 1 : cal.class_count_;

    std::size_t n_correct = 0;
    for (std::size_t i = 0; i < val_train.size(); ++i)
      n_correct += val_train.correct(i) ? 1 : 0;
    const double accuracy =
        static_cast<double>(n_correct) / static_cast<double>(val_train.size());
    cal.fallback_prior_ = options.fallback_prior.value_or(accuracy);
    if (cal.fallback_prior_ < 0.0 || cal.fallback_prior_ > 1.0)
      throw InvalidInput("fallback prior must lie in [0, 1]");

    if (n_correct == 0) {
      cal.degeneracy_ = Degeneracy::no_correct;
      cal.warning_ = "no correct predictions in val-train; calibrated "
                     "probability is 0 everywhere";
      return cal;
    }
    if (n_correct == val_train.size()) {
      cal.degeneracy_ = Degeneracy::no_incorrect;
      cal.warning_ = "no incorrect predictions in val-train; calibrated "
                     "probability is 1 everywhere";
      return cal;
    }

    std::vector<double> all_points, correct_points;
    all_points.reserve(val_train.size() * cal.dims_used_);
    correct_points.reserve(n_correct * cal.dims_used_);
    const auto weights = sample_weights(val_train, options.density.weighting);
    std::vector<double> correct_weights;
    for (std::size_t i = 0; i < val_train.size(); ++i) {
      auto s = val_train.score(i);
      auto x = s.first(cal.dims_used_);
      all_points.insert(all_points.end(), x.begin(), x.end());
      if (val_train.correct(i)) {
        correct_points.insert(correct_points.end(), x.begin(), x.end());
        if (!weights.empty()) correct_weights.push_back(weights[i]);
      }
    }

    std::optional<std::vector<AxisRange>> ranges;
    if (cal.config_.kind == EstimatorKind::histogram) {
      if (cal.space_ == SpaceTag::softmax) {
        ranges = std::vector<AxisRange>(cal.dims_used_, {0.0, 1.0});
      } else {
        ranges = HistogramEstimate::fit(all_points, cal.dims_used_, {}, 1)
                     .ranges();
      }
    }
    cal.rho_all_ = DensityEstimate::fit(all_points, cal.dims_used_, weights,
                                        cal.config_, ranges);
    try {
      cal.rho_correct_ = DensityEstimate::fit(
          correct_points, cal.dims_used_, correct_weights, cal.config_, ranges);
    } catch (const InvalidInput& e) {
      throw InvalidInput(std::string("fitting the correct-only density: ") +
                         e.what());
    }
    return cal;
  }

  std::size_t class_count() const { return class_count_; }
  std::size_t dims_used() const { return dims_used_; }
  SpaceTag space() const { return space_; }
  double fallback_prior() const { return fallback_prior_; }
  Degeneracy degeneracy() const { return degeneracy_; }
  const std::string& warning() const { return warning_; }
  const DensityConfig& config() const { return config_; }
  const std::optional<DensityEstimate>& rho_correct() const {
    return rho_correct_;
  }
  const std::optional<DensityEstimate>& rho_all() const { return rho_all_; }

  CalibratedScore score(std::span<const double> y) const {
    if (y.size() != class_count_)
      throw InvalidInput("score has " + std::to_string(y.size()) +
                         " components, calibrator expects " +
                         std::to_string(class_count_));
    validate_score(y, space_);
    switch (degeneracy_) {
      case Degeneracy::no_correct: return {0.0, false};
      case Degeneracy::no_incorrect: return {1.0, false};
      case Degeneracy::none: break;
    }
    const auto x = y.first(dims_used_);
    const auto all = rho_all_->mass_density(x);
    if (!all || !(*all > 0.0)) return {fallback_prior_, true};
    const double correct = rho_correct_->mass_density(x).value_or(0.0);
    return {std::clamp(correct / *all, 0.0, 1.0), false};
  }

  CalibratedScore score(const ScoreVector& y) const {
    if (y.space() != space_)
      throw InvalidInput("score space does not match the calibrator");
    return score(y.components());
  }

  // Element-wise score() over `ds`, in order. Work is split into contiguous
  // chunks across `threads` workers; results do not depend on the split.
  std::vector<CalibratedScore> calibrate_batch(const Dataset& ds,
                                               unsigned threads = 1) const {
    if (!ds.empty() && ds.class_count() != class_count_)
      throw ConfigError("dataset has " + std::to_string(ds.class_count()) +
                        " classes, calibrator expects " +
                        std::to_string(class_count_));
    std::vector<CalibratedScore> out(ds.size());
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(threads, ds.size()));
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::size_t> failed_at(workers, ds.size());

    auto run = [&](std::size_t w) {
      const std::size_t begin = ds.size() * w / workers;
      const std::size_t end = ds.size() * (w + 1) / workers;
      for (std::size_t i = begin; i < end; ++i) {
        try {
          out[i] = score(ds.score(i));
        } catch (...) {
          errors[w] = std::current_exception();
          failed_at[w] = i;
          return;
        }
      }
    };
    if (workers == 1) {
      run(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    }
    for (std::size_t w = 0; w < workers; ++w) {
      if (!errors[w]) continue;
      try {
        std::rethrow_exception(errors[w]);
      } catch (const std::exception& e) {
        throw InvalidInput("sample " + std::to_string(failed_at[w]) + ": " +
                           e.what());
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = kCalibratorArtifactVersion;
    j["kind"] = "calibrator";
    j["fallback_prior"] = fallback_prior_;
    j["dims_used"] = dims_used_;
    j["class_count"] = class_count_;
    j["space_tag"] = std::string(to_string(space_));
    j["reduce_simplex"] = reduce_;
    j["degeneracy"] = degeneracy_ == Degeneracy::none         ? "none"
                      : degeneracy_ == Degeneracy::no_correct ? "no-correct"
                                                              : "no-incorrect";
    j["density_config"] = {{"estimator_kind", std::string(to_string(config_.kind))},
                           {"bins_per_dim", config_.bins_per_dim},
                           {"k", config_.k},
                           {"weighting", std::string(to_string(config_.weighting))}};
    j["rho_correct"] = rho_correct_ ? rho_correct_->to_json() : nlohmann::json();
    j["rho_all"] = rho_all_ ? rho_all_->to_json() : nlohmann::json();
    return j;
  }

  static Calibrator from_json(const nlohmann::json& j) {
    try {
      if (j.at("version").get<int>() != kCalibratorArtifactVersion ||
          j.at("kind").get<std::string>() != "calibrator")
        throw ParseError("not a calibrator artifact of a supported version");
      Calibrator cal;
      cal.fallback_prior_ = j.at("fallback_prior").get<double>();
      cal.dims_used_ = j.at("dims_used").get<std::size_t>();
      cal.class_count_ = j.at("class_count").get<std::size_t>();
      cal.space_ = space_from_string(j.at("space_tag").get<std::string>());
      cal.reduce_ = j.at("reduce_simplex").get<bool>();
      const auto deg = j.at("degeneracy").get<std::string>();
      cal.degeneracy_ = deg == "none"         ? Degeneracy::none
                        : deg == "no-correct" ? Degeneracy::no_correct
                                              : Degeneracy::no_incorrect;
      const auto& c = j.at("density_config");
      cal.config_.kind =
          estimator_from_string(c.at("estimator_kind").get<std::string>());
      cal.config_.bins_per_dim = c.at("bins_per_dim").get<std::size_t>();
      cal.config_.k = c.at("k").get<std::size_t>();
      cal.config_.weighting =
          weighting_from_string(c.at("weighting").get<std::string>());
      if (cal.degeneracy_ == Degeneracy::none) {
        cal.rho_correct_ = DensityEstimate::from_json(j.at("rho_correct"));
        cal.rho_all_ = DensityEstimate::from_json(j.at("rho_all"));
        if (cal.rho_all_->dims() != cal.dims_used_ ||
            cal.rho_correct_->dims() != cal.dims_used_)
          throw ParseError("calibrator artifact: estimator dims disagree");
      }
      return cal;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed calibrator artifact: ") +
                       e.what());
    } catch (const InvalidInput& e) {
      throw ParseError(std::string("malformed calibrator artifact: ") +
                       e.what());
    }
  }

 private:
  std::optional<DensityEstimate> rho_correct_;
  std::optional<DensityEstimate> rho_all_;
  DensityConfig config_;
  std::size_t class_count_ = 0;
  std::size_t dims_used_ = 0;
  SpaceTag space_ = SpaceTag::softmax;
  bool reduce_ = true;
  double fallback_prior_ = 0.0;
  Degeneracy degeneracy_ = Degeneracy::none;
  std::string warning_;
};

}  // namespace ratiocal
