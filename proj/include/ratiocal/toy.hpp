#pragma once

// Synthetic data for the reproduction experiments: the balanced two-Gaussian
// toy problem with its closed-form best achievable probability, and an
// imbalanced five-class generator of softmax scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "ratiocal/error.hpp"
#include "ratiocal/score.hpp"

namespace ratiocal {

struct ToyConfig {
  std::size_t n_samples = 50'000;
  double class_separation = 3.0;  // class C is drawn from N(separation * C, 1)
  std::uint64_t seed = 0;
};

// Raw toy inputs: a scalar feature and its class.
struct ToySet {
  std::vector<double> x;
  std::vector<int> label;

  std::size_t size() const { return x.size(); }
};

inline ToySet gen_toy(const ToyConfig& config) {
  if (config.n_samples < 1) throw InvalidInput("toy set needs n >= 1");
  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  ToySet out;
  out.x.reserve(config.n_samples);
  out.label.reserve(config.n_samples);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    const int c = coin(rng) ? 1 : 0;
    out.label.push_back(c);
    out.x.push_back(config.class_separation * c + noise(rng));
  }
  return out;
}

// Largest posterior class probability at x under equal priors,
//   max_c N(x; s c, 1) / sum_c N(x; s c, 1),
// which no classifier can beat. The log likelihood ratio is s x - s^2 / 2.
inline double analytic_pmax(double x, double class_separation = 3.0) {
  const double s = class_separation;
  const double llr = s * x - 0.5 * s * s;
  return 1.0 / (1.0 + std::exp(-std::abs(llr)));
}

// Five-class stand-in for per-pixel segmentation scores: logits
// separation * e_c + N(0, spread^2 I) pushed through softmax.
struct ImbalancedConfig {
  std::size_t n_samples = 400'000;
  std::vector<double> prevalence{0.70, 0.15, 0.10, 0.0465, 0.0035};
  double separation = 3.0;
  double spread = 1.0;
  std::uint64_t seed = 0;

  std::size_t class_count() const { return prevalence.size(); }

  void validate() const {
    if (n_samples < 1) throw InvalidInput("imbalanced set needs n >= 1");
    if (prevalence.size() < 2) throw InvalidInput("need at least two classes");
    double sum = 0.0;
    for (double p : prevalence) {
      if (!(p > 0.0)) throw InvalidInput("prevalences must be positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw InvalidInput("prevalences must sum to 1");
    if (!(spread > 0.0)) throw InvalidInput("spread must be positive");
  }
};

inline Dataset gen_imbalanced_scores(const ImbalancedConfig& config) {
  config.validate();
  const std::size_t d = config.class_count();
  std::mt19937_64 rng(config.seed);
  std::discrete_distribution<int> pick(config.prevalence.begin(),
                                       config.prevalence.end());
  std::normal_distribution<double> noise(0.0, config.spread);

  std::vector<double> values;
  std::vector<int> labels;
  values.reserve(config.n_samples * d);
  labels.reserve(config.n_samples);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    const int c = pick(rng);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
      z[j] = (static_cast<int>(j) == c ? config.separation : 0.0) + noise(rng);
      top = std::max(top, z[j]);
    }
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp(v - top));
    for (auto& v : z) values.push_back(v / sum);
    labels.push_back(c);
  }
  return Dataset(std::move(values), d, std::move(labels), SpaceTag::softmax);
}

}  // namespace ratiocal
