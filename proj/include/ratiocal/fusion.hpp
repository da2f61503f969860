#pragma once

// Combining calibrated probabilities from T stochastic trials of one input.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ratiocal/calibrator.hpp"
#include "ratiocal/error.hpp"
#include "ratiocal/score.hpp"

namespace ratiocal {

enum class FusionMethod { frequentist, bayesian, baseline_variance };

// How the class hypothesis of a trial block is formed.
enum class HypothesisRule {
  score_mass,        // argmax_c sum_t y_t[c]
  calibrated_votes,  // argmax_c sum_{t : argmax y_t = c} p(y_t)
};

inline std::string_view to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::frequentist: return "frequentist";
    case FusionMethod::bayesian: return "bayesian";
    case FusionMethod::baseline_variance: return "baseline-variance";
  }
  return "?";
}

inline FusionMethod fusion_method_from_string(std::string_view s) {
  if (s == "frequentist" || s == "freq") return FusionMethod::frequentist;
  if (s == "bayesian" || s == "bayes") return FusionMethod::bayesian;
  if (s == "baseline-variance" || s == "baseline")
    return FusionMethod::baseline_variance;
  throw InvalidInput("unknown fusion method '" + std::string(s) + "'");
}

// ln of the smallest positive normalized binary32 value, about -87.3365.
inline const double kFloat32LogFloor = std::log(static_cast<double>(FLT_MIN));

// Probabilities are pulled into [eps, 1 - eps] before taking odds.
inline constexpr double kOddsClamp = 1e-7;

struct FusionConfig {
  FusionMethod method = FusionMethod::frequentist;
  HypothesisRule hypothesis = HypothesisRule::score_mass;
  double prior = 0.5;  // callers usually set 1/d
  double log_floor = kFloat32LogFloor;

  void validate() const {
    if (!(prior > 0.0 && prior < 1.0))
      throw InvalidInput("fusion prior must lie in (0, 1)");
    if (!(log_floor < 0.0)) throw InvalidInput("log floor must be negative");
  }
};

struct TrialEvidence {
  int trial_class;       // argmax of the trial's scores
  double calibrated;     // p(y_t)
  double matching;       // p_H(y_t)
};

struct FusedResult {
  int hypothesis;
  double probability;
  std::vector<TrialEvidence> per_trial;
};

// Class with the largest score mass summed over trials; ties to the lowest
// index.
inline int hypothesis(const TrialBlock& block) {
  if (block.space() != SpaceTag::softmax)
    throw InvalidInput("hypothesis needs softmax-space trials");
  std::vector<double> mass(block.class_count(), 0.0);
  for (const auto& t : block.trials())
    for (std::size_t c = 0; c < mass.size(); ++c) mass[c] += t[c];
  return argmax_class(mass);
}

// Alternative reading: per-trial argmax votes weighted by calibrated
// probability.
inline int hypothesis_by_calibrated_votes(const TrialBlock& block,
                                          std::span<const double> calibrated) {
  if (calibrated.size() != block.size())
    throw InvalidInput("one calibrated probability per trial is required");
  std::vector<double> votes(block.class_count(), 0.0);
  for (std::size_t t = 0; t < block.size(); ++t)
    votes[argmax_class(block[t])] += calibrated[t];
  return argmax_class(votes);
}

inline void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw InvalidInput("probability " + std::to_string(p) + " outside [0, 1]");
}

// Probability that a trial agrees with hypothesis H.
inline double p_matching_hypothesis(double p, int trial_class, int h) {
  check_probability(p);
  return trial_class == h ? p : 1.0 - p;
}

// Geometric mean computed as exp of the mean log, each log floored at
// `log_floor` so zeros stay finite.
inline double fuse_frequentist(std::span<const double> p_h,
                               double log_floor = kFloat32LogFloor) {
  if (p_h.empty()) throw InvalidInput("no trials to fuse");
  double sum = 0.0;
  for (double p : p_h) {
    check_probability(p);
    sum += p > 0.0 ? std::max(std::log(p), log_floor) : log_floor;
  }
  return std::clamp(std::exp(sum / static_cast<double>(p_h.size())), 0.0, 1.0);
}

// Sequential Bayes update with likelihood ratio LR = p/(1-p):
//   p_t = LR / (LR + 1/p_{t-1} - 1),  p_0 = prior.
// Evaluated in the algebraically equal form p q / (p q + (1-p)(1-q)), which
// stays finite near 0 and 1 and returns p exactly for q = 1/2.
inline double fuse_bayesian(std::span<const double> p_h, double prior) {
  if (!(prior > 0.0 && prior < 1.0))
    throw InvalidInput("prior must lie in (0, 1)");
  if (p_h.empty()) throw InvalidInput("no trials to fuse");
  double q = prior;
  for (double p : p_h) {
    check_probability(p);
    p = std::clamp(p, kOddsClamp, 1.0 - kOddsClamp);
    const double agree = p * q;
    q = agree / (agree + (1.0 - p) * (1.0 - q));
  }
  return q;
}

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct BaselineResult {
  int hypothesis;
  double probability;
  double mean;
  double stddev;
};

// Variance baseline for two-class MC-dropout output: treat the class-1 score
// across trials as N(mean, sd) (sample sd, T-1 divisor) and report the mass
// on the hypothesis side of the 0.5 threshold.
inline BaselineResult baseline_variance_prob(const TrialBlock& block) {
  if (block.class_count() != 2)
    throw Unsupported("variance baseline is only defined for two classes");
  if (block.size() < 2)
    throw InvalidInput("variance baseline needs at least two trials");
  const double t = static_cast<double>(block.size());
  double mean = 0.0;
  for (const auto& s : block.trials()) mean += s[1];
  mean /= t;
  double ss = 0.0;
  for (const auto& s : block.trials()) ss += (s[1] - mean) * (s[1] - mean);
  const double sd = std::sqrt(ss / (t - 1.0));

  const int h = mean > 0.5 ? 1 : 0;
  double p = 1.0;  // zero spread: the trials are certain
  if (sd > 0.0) {
    const double below = normal_cdf((0.5 - mean) / sd);
    p = h == 1 ? 1.0 - below : below;
  }
  return {h, p, mean, sd};
}

// Combines baseline results of several independent blocks of the same input
// with the geometric mean, against the hypothesis of the pooled mean.
inline BaselineResult baseline_variance_chain(std::span<const TrialBlock> blocks,
                                              double log_floor = kFloat32LogFloor) {
  if (blocks.empty()) throw InvalidInput("no trial blocks");
  std::vector<BaselineResult> parts;
  double mass = 0.0, count = 0.0;
  for (const auto& b : blocks) {
    parts.push_back(baseline_variance_prob(b));
    mass += parts.back().mean * static_cast<double>(b.size());
    count += static_cast<double>(b.size());
  }
  const double mean = mass / count;
  const int h = mean > 0.5 ? 1 : 0;
  std::vector<double> p_h;
  for (const auto& r : parts)
    p_h.push_back(p_matching_hypothesis(r.probability, r.hypothesis, h));
  return {h, fuse_frequentist(p_h, log_floor), mean, 0.0};
}

// Full fusion of one block: calibrate every trial, form the hypothesis, map
// to agreement probabilities, combine. The baseline method ignores `cal`.
inline FusedResult fuse_block(const TrialBlock& block, const Calibrator* cal,
                              const FusionConfig& config) {
  config.validate();
  if (config.method == FusionMethod::baseline_variance) {
    const auto r = baseline_variance_prob(block);
    return {r.hypothesis, r.probability, {}};
  }
  if (cal == nullptr) throw InvalidInput("fusion needs a calibrator");

  std::vector<double> calibrated(block.size());
  for (std::size_t t = 0; t < block.size(); ++t)
    calibrated[t] = cal->score(block[t]).probability;

  const int h = config.hypothesis == HypothesisRule::score_mass
                    ? hypothesis(block)
                    : hypothesis_by_calibrated_votes(block, calibrated);

  FusedResult out{h, 0.0, {}};
  out.per_trial.reserve(block.size());
  std::vector<double> matching(block.size());
  for (std::size_t t = 0; t < block.size(); ++t) {
    const int c = argmax_class(block[t]);
    matching[t] = p_matching_hypothesis(calibrated[t], c, h);
    out.per_trial.push_back({c, calibrated[t], matching[t]});
  }
  out.probability = config.method == FusionMethod::frequentist
                        ? fuse_frequentist(matching, config.log_floor)
                        : fuse_bayesian(matching, config.prior);
  return out;
}

}  // namespace ratiocal
