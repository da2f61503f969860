#pragma once

// Score-space domain types shared by every other header: score vectors,
// labeled datasets, trial blocks, and the deterministic argmax / simplex /
// split helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ratiocal/error.hpp"

namespace ratiocal {

enum class SpaceTag { logit, softmax };

inline constexpr double kSimplexTolerance = 1e-6;

inline std::string_view to_string(SpaceTag tag) {
  return tag == SpaceTag::softmax ? "softmax" : "logit";
}

inline SpaceTag space_from_string(std::string_view s) {
  if (s == "softmax") return SpaceTag::softmax;
  if (s == "logit") return SpaceTag::logit;
  throw InvalidInput("unknown score space '" + std::string(s) + "'");
}

// Throws InvalidInput unless `components` is a legal point of `tag` space.
inline void validate_score(std::span<const double> components, SpaceTag tag) {
  if (components.empty()) throw InvalidInput("score vector is empty");
  double sum = 0.0;
  for (double v : components) {
    if (!std::isfinite(v)) throw InvalidInput("score component is not finite");
    if (tag == SpaceTag::softmax && v < 0.0)
      throw InvalidInput("softmax score component is negative");
    sum += v;
  }
  if (tag == SpaceTag::softmax && std::abs(sum - 1.0) > kSimplexTolerance)
    throw InvalidInput("softmax score does not sum to 1");
}

// True when every component is nonnegative and the sum is within tolerance
// of one, i.e. the point could have come out of a softmax.
inline bool looks_like_simplex(std::span<const double> components) {
  double sum = 0.0;
  for (double v : components) {
    if (!(v >= 0.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= kSimplexTolerance;
}

class ScoreVector {
 public:
  ScoreVector(std::vector<double> components, SpaceTag tag)
      : components_(std::move(components)), tag_(tag) {
    validate_score(components_, tag_);
  }

  std::span<const double> components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  double operator[](std::size_t i) const { return components_[i]; }
  SpaceTag space() const { return tag_; }

  friend bool operator==(const ScoreVector&, const ScoreVector&) = default;

 private:
  std::vector<double> components_;
  SpaceTag tag_;
};

// Index of the largest component; ties go to the lowest index.
inline int argmax_class(std::span<const double> score) {
  if (score.empty()) throw InvalidInput("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < score.size(); ++i)
    if (score[i] > score[best]) best = i;
  return static_cast<int>(best);
}

inline int argmax_class(const ScoreVector& score) {
  return argmax_class(score.components());
}

// Drops the last coordinate of a softmax vector; it is implied by the
// sum-to-one constraint.
inline std::vector<double> reduce_simplex(std::span<const double> score,
                                          SpaceTag tag) {
  if (tag != SpaceTag::softmax)
    throw InvalidInput("simplex reduction needs softmax-space scores");
  if (score.empty()) throw InvalidInput("score vector is empty");
  return {score.begin(), score.end() - 1};
}

inline std::vector<double> reduce_simplex(const ScoreVector& score) {
  return reduce_simplex(score.components(), score.space());
}

// Inverse of reduce_simplex: appends 1 - sum.
inline std::vector<double> expand_simplex(std::span<const double> reduced) {
  std::vector<double> out(reduced.begin(), reduced.end());
  out.push_back(1.0 - std::accumulate(reduced.begin(), reduced.end(), 0.0));
  return out;
}

struct LabeledSample {
  ScoreVector score;
  int true_class;

  int predicted_class() const { return argmax_class(score); }
  bool correct() const { return predicted_class() == true_class; }
};

enum class SplitLabel : std::uint8_t { train, val_train, val_val };

inline std::string_view to_string(SplitLabel s) {
  switch (s) {
    case SplitLabel::train: return "train";
    case SplitLabel::val_train: return "val-train";
    case SplitLabel::val_val: return "val-val";
  }
  return "?";
}

// Row-major block of n labeled score vectors of a common dimension d. Holds
// scores flat so that multi-million row datasets stay cheap; predicted
// classes are computed once at construction from the scores themselves.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<double> values, std::size_t dims,
          std::vector<int> true_class, SpaceTag tag)
      : values_(std::move(values)), true_class_(std::move(true_class)),
        dims_(dims), tag_(tag) {
    if (dims_ == 0) throw InvalidInput("dataset needs at least one class");
    if (values_.size() != dims_ * true_class_.size())
      throw InvalidInput("score block size does not match label count");
    predicted_.resize(true_class_.size());
    for (std::size_t i = 0; i < true_class_.size(); ++i) {
      auto s = score(i);
      validate_score(s, tag_);
      if (true_class_[i] < 0 || static_cast<std::size_t>(true_class_[i]) >= dims_)
        throw InvalidInput("true class " + std::to_string(true_class_[i]) +
                           " outside [0, " + std::to_string(dims_) + ")");
      predicted_[i] = argmax_class(s);
    }
  }

  static Dataset from_samples(std::span<const LabeledSample> samples) {
    if (samples.empty()) throw InvalidInput("no samples");
    const std::size_t d = samples.front().score.size();
    const SpaceTag tag = samples.front().score.space();
    std::vector<double> values;
    std::vector<int> labels;
    values.reserve(samples.size() * d);
    for (const auto& s : samples) {
      if (s.score.size() != d || s.score.space() != tag)
        throw InvalidInput("samples disagree on dimension or score space");
      values.insert(values.end(), s.score.components().begin(),
                    s.score.components().end());
      labels.push_back(s.true_class);
    }
    return Dataset(std::move(values), d, std::move(labels), tag);
  }

  std::size_t size() const { return true_class_.size(); }
  bool empty() const { return true_class_.empty(); }
  std::size_t class_count() const { return dims_; }
  SpaceTag space() const { return tag_; }

  std::span<const double> score(std::size_t i) const {
    return {values_.data() + i * dims_, dims_};
  }
  int true_class(std::size_t i) const { return true_class_[i]; }
  int predicted_class(std::size_t i) const { return predicted_[i]; }
  bool correct(std::size_t i) const { return predicted_[i] == true_class_[i]; }

  LabeledSample sample(std::size_t i) const {
    auto s = score(i);
    return {ScoreVector({s.begin(), s.end()}, tag_), true_class_[i]};
  }

  const std::vector<double>& values() const { return values_; }
  const std::vector<int>& true_classes() const { return true_class_; }

  const std::optional<std::vector<SplitLabel>>& split_labels() const {
    return splits_;
  }

  Dataset with_split_labels(std::vector<SplitLabel> labels) const {
    if (labels.size() != size())
      throw InvalidInput("one split label per sample is required");
    Dataset out = *this;
    out.splits_ = std::move(labels);
    return out;
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<double> values;
    std::vector<int> labels;
    values.reserve(indices.size() * dims_);
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
      auto s = score(i);
      values.insert(values.end(), s.begin(), s.end());
      labels.push_back(true_class_[i]);
    }
    Dataset out;
    out.values_ = std::move(values);
    out.true_class_ = std::move(labels);
    out.dims_ = dims_;
    out.tag_ = tag_;
    out.predicted_.reserve(indices.size());
    for (std::size_t i : indices) out.predicted_.push_back(predicted_[i]);
    return out;
  }

  Dataset select(SplitLabel which) const {
    if (!splits_) throw InvalidInput("dataset has no split labels");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if ((*splits_)[i] == which) idx.push_back(i);
    return subset(idx);
  }

 private:
  std::vector<double> values_;
  std::vector<int> true_class_;
  std::vector<int> predicted_;
  std::size_t dims_ = 0;
  SpaceTag tag_ = SpaceTag::logit;
  std::optional<std::vector<SplitLabel>> splits_;
};

// T stochastic forward passes for one input.
class TrialBlock {
 public:
  TrialBlock(std::int64_t sample_id, std::vector<ScoreVector> trials,
             std::optional<int> true_class = std::nullopt)
      : sample_id_(sample_id), trials_(std::move(trials)),
        true_class_(true_class) {
    if (trials_.empty()) throw InvalidInput("trial block has no trials");
    for (const auto& t : trials_)
      if (t.size() != trials_.front().size() ||
          t.space() != trials_.front().space())
        throw InvalidInput("trials disagree on dimension or score space");
  }

  std::int64_t sample_id() const { return sample_id_; }
  std::size_t size() const { return trials_.size(); }
  std::size_t class_count() const { return trials_.front().size(); }
  SpaceTag space() const { return trials_.front().space(); }
  const ScoreVector& operator[](std::size_t t) const { return trials_[t]; }
  const std::vector<ScoreVector>& trials() const { return trials_; }
  std::optional<int> true_class() const { return true_class_; }

 private:
  std::int64_t sample_id_;
  std::vector<ScoreVector> trials_;
  std::optional<int> true_class_;
};

struct SplitFractions {
  double val_train;
  double val_val;
};

// Seeded shuffle, then contiguous slices: the first round(n * val_train)
// shuffled positions are val-train, the next round(n * val_val) val-val, and
// whatever is left is train.
inline std::vector<SplitLabel> split_labels(std::size_t n,
                                            SplitFractions fractions,
                                            std::uint64_t seed) {
  auto in_unit = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!in_unit(fractions.val_train) || !in_unit(fractions.val_val) ||
      fractions.val_train + fractions.val_val > 1.0 + 1e-12)
    throw InvalidInput("split fractions must lie in (0, 1] and sum to <= 1");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }

  auto n_vt = static_cast<std::size_t>(std::llround(fractions.val_train * n));
  auto n_vv = static_cast<std::size_t>(std::llround(fractions.val_val * n));
  n_vt = std::min(n_vt, n);
  n_vv = std::min(n_vv, n - n_vt);

  std::vector<SplitLabel> labels(n, SplitLabel::train);
  for (std::size_t i = 0; i < n_vt; ++i) labels[order[i]] = SplitLabel::val_train;
  for (std::size_t i = n_vt; i < n_vt + n_vv; ++i)
    labels[order[i]] = SplitLabel::val_val;
  return labels;
}

inline Dataset split_dataset(const Dataset& ds, SplitFractions fractions,
                             std::uint64_t seed) {
  return ds.with_split_labels(split_labels(ds.size(), fractions, seed));
}

// splitmix64 finalizer; used to derive independent child seeds (per trial,
// per sample) from one root seed regardless of execution order.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(root) ^ a) ^ b);
}

}  // namespace ratiocal
