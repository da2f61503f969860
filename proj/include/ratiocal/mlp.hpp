#pragma once

// A small from-scratch multilayer perceptron for the toy experiment:
//
//   input -> affine -> ReLU -> [dropout] -> affine -> softmax
//
// trained with Adam on the mean squared error against one-hot targets.
// Dropout uses inverted scaling (kept units are divided by 1 - rate) both in
// training and in Monte Carlo inference.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ratiocal/error.hpp"
#include "ratiocal/score.hpp"
#include "ratiocal/toy.hpp"

namespace ratiocal {

inline constexpr int kMlpArtifactVersion = 1;

// Where the dropout mask is applied: to the network input, or to the hidden
// units after the first affine + ReLU.
enum class DropoutSite { input, hidden };

inline std::string_view to_string(DropoutSite s) {
  return s == DropoutSite::input ? "input" : "hidden";
}

inline DropoutSite dropout_site_from_string(std::string_view s) {
  if (s == "input") return DropoutSite::input;
  if (s == "hidden") return DropoutSite::hidden;
  throw InvalidInput("unknown dropout site '" + std::string(s) + "'");
}

class Mlp {
 public:
  Mlp() = default;

  // He-uniform style initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::size_t inputs, std::size_t hidden, std::size_t classes,
      double dropout_rate, std::uint64_t seed,
      DropoutSite site = DropoutSite::hidden)
      : inputs_(inputs), hidden_(hidden), classes_(classes),
        dropout_(dropout_rate), site_(site) {
    if (inputs == 0 || hidden == 0 || classes < 2)
      throw InvalidInput("mlp needs inputs >= 1, hidden >= 1, classes >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw InvalidInput("dropout rate must lie in [0, 1)");
    params_.resize(parameter_count());
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t offset, std::size_t count, double fan_in) {
      std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in),
                                               1.0 / std::sqrt(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[offset + i] = u(rng);
    };
    fill(w1_offset(), hidden_ * inputs_, static_cast<double>(inputs_));
    fill(b1_offset(), hidden_, static_cast<double>(inputs_));
    fill(w2_offset(), classes_ * hidden_, static_cast<double>(hidden_));
    fill(b2_offset(), classes_, static_cast<double>(hidden_));
  }

  // The toy architecture: 1 -> 16 -> 2.
  static Mlp toy(double dropout_rate, std::uint64_t seed,
                 DropoutSite site = DropoutSite::hidden) {
    return Mlp(1, 16, 2, dropout_rate, seed, site);
  }

  std::size_t inputs() const { return inputs_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t classes() const { return classes_; }
  double dropout_rate() const { return dropout_; }
  DropoutSite dropout_site() const { return site_; }
  std::size_t mask_size() const {
    return site_ == DropoutSite::input ? inputs_ : hidden_;
  }

  std::size_t parameter_count() const {
    return hidden_ * inputs_ + hidden_ + classes_ * hidden_ + classes_;
  }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // Per-unit multipliers at the dropout site: 0 for dropped units,
  // 1/(1-rate) for kept ones.
  std::vector<double> sample_mask(std::mt19937_64& rng) const {
    std::vector<double> mask(mask_size(), 1.0);
    if (dropout_ == 0.0) return mask;
    std::bernoulli_distribution keep(1.0 - dropout_);
    for (auto& m : mask) m = keep(rng) ? 1.0 / (1.0 - dropout_) : 0.0;
    return mask;
  }

  struct Activations {
    std::vector<double> input;   // after the input mask
    std::vector<double> pre;     // hidden pre-activation
    std::vector<double> hidden;  // after ReLU and mask
    std::vector<double> output;  // softmax
  };

  // `mask` empty means no dropout.
  Activations forward(std::span<const double> x,
                      std::span<const double> mask = {}) const {
    if (x.size() != inputs_) throw InvalidInput("mlp input has wrong size");
    if (!mask.empty() && mask.size() != mask_size())
      throw InvalidInput("dropout mask has wrong size");
    const bool on_input = !mask.empty() && site_ == DropoutSite::input;
    const bool on_hidden = !mask.empty() && site_ == DropoutSite::hidden;
    Activations a;
    a.input.assign(x.begin(), x.end());
    if (on_input)
      for (std::size_t i = 0; i < inputs_; ++i) a.input[i] *= mask[i];
    a.pre.resize(hidden_);
    a.hidden.resize(hidden_);
    for (std::size_t h = 0; h < hidden_; ++h) {
      double s = params_[b1_offset() + h];
      for (std::size_t i = 0; i < inputs_; ++i)
        s += params_[w1_offset() + h * inputs_ + i] * a.input[i];
      a.pre[h] = s;
      a.hidden[h] = std::max(s, 0.0) * (on_hidden ? mask[h] : 1.0);
    }
    a.output.resize(classes_);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes_; ++c) {
      double s = params_[b2_offset() + c];
      for (std::size_t h = 0; h < hidden_; ++h)
        s += params_[w2_offset() + c * hidden_ + h] * a.hidden[h];
      a.output[c] = s;
      top = std::max(top, s);
    }
    double sum = 0.0;
    for (auto& v : a.output) sum += (v = std::exp(v - top));
    for (auto& v : a.output) v /= sum;
    return a;
  }

  // Mean squared error over batch and classes, and its gradient with respect
  // to every parameter. `masks` is empty or holds one mask per sample.
  double loss_and_gradient(std::span<const double> xs,
                           std::span<const int> labels,
                           std::span<const std::vector<double>> masks,
                           std::span<double> grad) const {
    const std::size_t n = labels.size();
    if (n == 0 || xs.size() != n * inputs_)
      throw InvalidInput("batch inputs and labels disagree");
    if (grad.size() != params_.size())
      throw InvalidInput("gradient buffer has wrong size");
    std::fill(grad.begin(), grad.end(), 0.0);
    const double scale = 1.0 / static_cast<double>(n * classes_);
    double loss = 0.0;
    std::vector<double> g(classes_), dz(classes_), dh(hidden_);
    for (std::size_t s = 0; s < n; ++s) {
      const auto x = xs.subspan(s * inputs_, inputs_);
      std::span<const double> mask;
      if (!masks.empty()) mask = masks[s];
      const auto a = forward(x, mask);

      double gy = 0.0;
      for (std::size_t c = 0; c < classes_; ++c) {
        const double diff = a.output[c] - (static_cast<int>(c) == labels[s] ? 1.0 : 0.0);
        loss += diff * diff * scale;
        g[c] = 2.0 * diff * scale;
        gy += g[c] * a.output[c];
      }
      for (std::size_t c = 0; c < classes_; ++c) dz[c] = a.output[c] * (g[c] - gy);

      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t c = 0; c < classes_; ++c) {
        grad[b2_offset() + c] += dz[c];
        for (std::size_t h = 0; h < hidden_; ++h) {
          grad[w2_offset() + c * hidden_ + h] += dz[c] * a.hidden[h];
          dh[h] += params_[w2_offset() + c * hidden_ + h] * dz[c];
        }
      }
      for (std::size_t h = 0; h < hidden_; ++h) {
        if (a.pre[h] <= 0.0) continue;
        const double da =
            dh[h] * (!mask.empty() && site_ == DropoutSite::hidden ? mask[h] : 1.0);
        grad[b1_offset() + h] += da;
        for (std::size_t i = 0; i < inputs_; ++i)
          grad[w1_offset() + h * inputs_ + i] += da * a.input[i];
      }
    }
    return loss;
  }

  nlohmann::json to_json() const {
    return {{"version", kMlpArtifactVersion}, {"kind", "mlp"},
            {"inputs", inputs_},              {"hidden", hidden_},
            {"classes", classes_},            {"dropout_rate", dropout_},
            {"dropout_site", std::string(to_string(site_))},
            {"params", params_}};
  }

  static Mlp from_json(const nlohmann::json& j) {
    try {
      if (j.at("version").get<int>() != kMlpArtifactVersion ||
          j.at("kind").get<std::string>() != "mlp")
        throw ParseError("not an mlp artifact of a supported version");
      Mlp m;
      m.inputs_ = j.at("inputs").get<std::size_t>();
      m.hidden_ = j.at("hidden").get<std::size_t>();
      m.classes_ = j.at("classes").get<std::size_t>();
      m.dropout_ = j.at("dropout_rate").get<double>();
      m.site_ = dropout_site_from_string(j.at("dropout_site").get<std::string>());
      m.params_ = j.at("params").get<std::vector<double>>();
      if (m.params_.size() != m.parameter_count())
        throw ParseError("mlp artifact: wrong parameter count");
      for (double p : m.params_)
        if (!std::isfinite(p)) throw ParseError("mlp artifact: non-finite weight");
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed mlp artifact: ") + e.what());
    }
  }

 private:
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return hidden_ * inputs_; }
  std::size_t w2_offset() const { return b1_offset() + hidden_; }
  std::size_t b2_offset() const { return w2_offset() + classes_ * hidden_; }

  std::size_t inputs_ = 1;
  std::size_t hidden_ = 16;
  std::size_t classes_ = 2;
  double dropout_ = 0.0;
  DropoutSite site_ = DropoutSite::hidden;
  std::vector<double> params_;
};

// One forward pass. With dropout active the mask is drawn from `seed`.
inline ScoreVector mlp_forward(const Mlp& model, std::span<const double> x,
                               bool dropout_active, std::uint64_t seed = 0) {
  std::vector<double> mask;
  if (dropout_active && model.dropout_rate() > 0.0) {
    std::mt19937_64 rng(seed);
    mask = model.sample_mask(rng);
  }
  return ScoreVector(model.forward(x, mask).output, SpaceTag::softmax);
}

inline ScoreVector mlp_forward(const Mlp& model, double x, bool dropout_active,
                               std::uint64_t seed = 0) {
  return mlp_forward(model, std::span<const double>(&x, 1), dropout_active, seed);
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig config) : m_(n, 0.0), v_(n, 0.0), cfg_(config) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= cfg_.learning_rate * (m_[i] / c1) /
                   (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

 private:
  std::vector<double> m_, v_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Mlp model;
  // Entry 0 is the loss before any update; entry e is the mean minibatch
  // loss of epoch e.
  std::vector<double> loss_trace;
};

inline TrainResult mlp_train(Mlp model, const ToySet& data,
                             const TrainConfig& config) {
  if (data.size() == 0) throw InvalidInput("training set is empty");
  if (config.batch_size == 0) throw InvalidInput("batch size must be positive");
  if (model.inputs() != 1) throw InvalidInput("toy training needs a 1-input mlp");

  std::mt19937_64 rng(config.seed);
  const bool dropout = model.dropout_rate() > 0.0;
  std::vector<double> grad(model.parameter_count());
  TrainResult out{model, {}};

  auto masks_for = [&](std::size_t count) {
    std::vector<std::vector<double>> masks;
    if (!dropout) return masks;
    masks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) masks.push_back(model.sample_mask(rng));
    return masks;
  };

  out.loss_trace.push_back(model.loss_and_gradient(
      data.x, data.label, masks_for(data.size()), grad));

  Adam adam(model.parameter_count(), config.adam);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> bx;
  std::vector<int> by;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(data.x[order[i]]);
        by.push_back(data.label[order[i]]);
      }
      const auto masks = masks_for(by.size());
      const double loss = model.loss_and_gradient(bx, by, masks, grad);
      if (!std::isfinite(loss)) {
        out.loss_trace.push_back(loss);
        throw TrainingError("training diverged in epoch " +
                                std::to_string(epoch + 1),
                            out.loss_trace);
      }
      adam.step(model.parameters(), grad);
      epoch_loss += loss;
      ++batches;
    }
    out.loss_trace.push_back(epoch_loss / static_cast<double>(batches));
  }
  out.model = std::move(model);
  return out;
}

// Deterministic scores (dropout off) for every toy input, labeled.
inline Dataset predict_dataset(const Mlp& model, const ToySet& data) {
  std::vector<double> values;
  values.reserve(data.size() * model.classes());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double x = data.x[i];
    const auto out = model.forward(std::span<const double>(&x, 1)).output;
    values.insert(values.end(), out.begin(), out.end());
  }
  return Dataset(std::move(values), model.classes(), data.label, SpaceTag::softmax);
}

// T Monte Carlo dropout passes per input. Trial t of sample i uses the seed
// derive_seed(root, i, t), so results do not depend on evaluation order.
inline std::vector<TrialBlock> run_trials(const Mlp& model, const ToySet& data,
                                          std::size_t trials,
                                          std::uint64_t root_seed,
                                          std::int64_t first_id = 0) {
  if (trials == 0) throw InvalidInput("need at least one trial");
  std::vector<TrialBlock> blocks;
  blocks.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<ScoreVector> ys;
    ys.reserve(trials);
    const auto id = first_id + static_cast<std::int64_t>(i);
    for (std::size_t t = 0; t < trials; ++t)
      ys.push_back(mlp_forward(model, data.x[i], true,
                               derive_seed(root_seed, static_cast<std::uint64_t>(id), t)));
    blocks.emplace_back(id, std::move(ys), data.label[i]);
  }
  return blocks;
}

// Flattens trial blocks into one labeled dataset (one row per trial).
inline Dataset flatten_trials(std::span<const TrialBlock> blocks) {
  if (blocks.empty()) throw InvalidInput("no trial blocks");
  const std::size_t d = blocks.front().class_count();
  std::vector<double> values;
  std::vector<int> labels;
  for (const auto& b : blocks) {
    if (!b.true_class()) throw InvalidInput("trial block has no true class");
    for (const auto& t : b.trials()) {
      values.insert(values.end(), t.components().begin(), t.components().end());
      labels.push_back(*b.true_class());
    }
  }
  return Dataset(std::move(values), d, std::move(labels), blocks.front().space());
}

}  // namespace ratiocal
