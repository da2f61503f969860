// ratiocal: file-staged pipeline for density-ratio calibration.
//
//   gen toy|imbalanced -> train -> infer -> split -> calibrate fit|apply
//   -> fuse -> eval, plus `oracle pmax` and `replay <manifest>`.
//
// Exit codes: 0 ok, 1 internal error, 2 usage/path/parse/config error,
// 3 an --assert threshold was violated.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ratiocal/calibrator.hpp"
#include "ratiocal/fusion.hpp"
#include "ratiocal/io.hpp"
#include "ratiocal/metrics.hpp"
#include "ratiocal/mlp.hpp"
#include "ratiocal/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ratiocal;

namespace {

constexpr const char* kToolVersion = "ratiocal 0.1.0";

struct PathError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AssertionFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  bool force = false;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::uint64_t> seed;
};

// Per-run bookkeeping written next to the primary output.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::array();
  json outputs = json::array();
  json extra = json::object();
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

std::uint64_t resolve_seed(const Globals& g) {
  if (g.seed) return *g.seed;
  if (const char* env = std::getenv("CALIB_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw CLI::ValidationError("CALIB_SEED", "must be an unsigned integer");
  }
  return 0;
}

void check_writable(const std::string& path, const Globals& g) {
  const fs::path p(path);
  const auto parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(parent))
    throw PathError("output directory '" + parent.string() + "' does not exist");
  if (fs::exists(p) && !g.force)
    throw PathError("'" + path + "' exists; pass --force to overwrite");
}

void check_readable(const std::string& path) {
  if (!fs::is_regular_file(path))
    throw PathError("input '" + path + "' does not exist");
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw PathError("failed writing '" + path + "'");
}

void emit(Run& run, const std::string& path, const std::string& content) {
  write_file(path, content);
  run.outputs.push_back(path);
}

void write_manifest(const Run& run, const std::string& primary) {
  const double seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - run.start)
                             .count();
  json m;
  m["tool"] = kToolVersion;
  m["command"] = run.command;
  m["argv"] = run.argv;
  m["root_seed"] = run.seed;
  m["config"] = run.config;
  m["inputs"] = run.inputs;
  m["outputs"] = run.outputs;
  m["artifact_versions"] = {{"calibrator", kCalibratorArtifactVersion},
                            {"density", kDensityArtifactVersion},
                            {"mlp", kMlpArtifactVersion}};
  m["timings"] = {{"wall_seconds", seconds}};
  for (const auto& [k, v] : run.extra.items()) m[k] = v;
  write_file(primary + ".manifest.json", m.dump(2) + "\n");
}

template <class F>
std::string render(F&& f) {
  std::ostringstream out;
  f(out);
  return out.str();
}

Dataset load_scores_any(const std::string& path, Run& run) {
  check_readable(path);
  run.inputs.push_back(path);
  auto in = io::open_in(path);
  if (io::is_trial_file(path)) {
    const auto blocks = io::read_trials(in);
    return flatten_trials(blocks);
  }
  return io::read_scores(in);
}

std::vector<TrialBlock> load_trials(const std::string& path, Run& run) {
  check_readable(path);
  run.inputs.push_back(path);
  auto in = io::open_in(path);
  return io::read_trials(in);
}

ToySet load_toy(const std::string& path, Run& run) {
  check_readable(path);
  run.inputs.push_back(path);
  auto in = io::open_in(path);
  return io::read_toy(in);
}

Calibrator load_calibrator(const std::string& path, Run& run) {
  check_readable(path);
  run.inputs.push_back(path);
  return Calibrator::from_json(io::read_json(path));
}

// Splits [0, n) into `workers` contiguous chunks and runs f(begin, end) on
// each, in parallel when workers > 1.
template <class F>
void parallel_chunks(std::size_t n, unsigned threads, F&& f) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers == 1) {
    f(std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          f(n * w / workers, n * (w + 1) / workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// "0.8/0.2" -> {0.8, 0.2}
SplitFractions parse_split(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos)
    throw CLI::ValidationError("--val-split", "expected VT/VV, e.g. 0.8/0.2");
  try {
    return {std::stod(s.substr(0, slash)), std::stod(s.substr(slash + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--val-split", "expected VT/VV, e.g. 0.8/0.2");
  }
}

struct Assertion {
  std::string metric;
  bool at_most;
  double bound;
  std::string text;
};

Assertion parse_assertion(const std::string& s) {
  for (const char* op : {"<=", ">="}) {
    const auto at = s.find(op);
    if (at == std::string::npos) continue;
    Assertion a{s.substr(0, at), std::string(op) == "<=", 0.0, s};
    try {
      a.bound = std::stod(s.substr(at + 2));
    } catch (const std::exception&) {
      break;
    }
    return a;
  }
  throw CLI::ValidationError("--assert", "expected METRIC<=VALUE or METRIC>=VALUE");
}

class Cli {
 public:
  Cli() : app_("Density-ratio calibration of classifier scores", "ratiocal") {
    app_.option_defaults()->always_capture_default();
    app_.require_subcommand(1);
    app_.fallthrough();
    app_.set_version_flag("--version", kToolVersion);
    app_.add_flag("--force", g_.force, "Overwrite existing output files");
    app_.add_option("--threads", g_.threads, "Worker threads for parallel stages")
        ->check(CLI::PositiveNumber);
    app_.add_option("--seed", seed_opt_,
                    "Root seed (default: $CALIB_SEED, else 0)");
    setup_gen();
    setup_train();
    setup_infer();
    setup_split();
    setup_calibrate();
    setup_fuse();
    setup_eval();
    setup_oracle();
    setup_replay();
  }

  int run(int argc, const char* const* argv) {
    for (int i = 1; i < argc; ++i) run_.argv.emplace_back(argv[i]);
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e);
      return code == 0 ? 0 : 2;
    }
    try {
      if (seed_opt_) g_.seed = *seed_opt_;
      run_.seed = resolve_seed(g_);
      action_();
      return 0;
    } catch (const CLI::ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const AssertionFailed& e) {
      std::cerr << "assertion failed: " << e.what() << "\n";
      return 3;
    } catch (const PathError& e) {
      std::cerr << "path error: " << e.what() << "\n";
      return 2;
    } catch (const ParseError& e) {
      std::cerr << "parse error: " << e.what() << "\n";
      return 2;
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const InvalidInput& e) {
      std::cerr << "invalid input: " << e.what() << "\n";
      return 2;
    } catch (const Unsupported& e) {
      std::cerr << "unsupported: " << e.what() << "\n";
      return 2;
    } catch (const UndefinedMetric& e) {
      std::cerr << "undefined metric: " << e.what() << "\n";
      return 2;
    } catch (const TrainingError& e) {
      std::cerr << "training error: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << "\n";
      return 1;
    }
  }

 private:
  // Arguments to replay this run exactly: the original ones plus the
  // resolved seed, so an environment-provided seed is not lost.
  void pin_seed() {
    if (!seed_opt_) {
      run_.argv.push_back("--seed");
      run_.argv.push_back(std::to_string(run_.seed));
    }
  }

  void finish(const std::string& primary) {
    pin_seed();
    write_manifest(run_, primary);
  }

  void setup_gen() {
    auto* gen = app_.add_subcommand("gen", "Generate synthetic data");
    gen->require_subcommand(1);

    auto* toy = gen->add_subcommand("toy", "Two-Gaussian toy inputs: x,true_class");
    toy->add_option("--n", toy_.n_samples, "Number of samples")->check(CLI::PositiveNumber);
    toy->add_option("--separation", toy_.class_separation, "Class mean spacing");
    toy->add_option("--out", out_, "Output CSV (default toy.csv)");
    toy->callback([this] {
      action_ = [this] {
        run_.command = "gen toy";
        if (out_.empty()) out_ = "toy.csv";
        check_writable(out_, g_);
        toy_.seed = run_.seed;
        const auto set = gen_toy(toy_);
        run_.config = {{"n", toy_.n_samples}, {"separation", toy_.class_separation}};
        emit(run_, out_, render([&](auto& o) { io::write_toy(o, set); }));
        finish(out_);
      };
    });

    auto* imb = gen->add_subcommand("imbalanced", "Imbalanced five-class softmax scores");
    imb->add_option("--n", imb_.n_samples, "Number of samples")->check(CLI::PositiveNumber);
    imb->add_option("--prevalence", imb_.prevalence, "Class prevalences (sum to 1)");
    imb->add_option("--separation", imb_.separation, "Logit boost of the true class");
    imb->add_option("--spread", imb_.spread, "Logit noise standard deviation");
    imb->add_option("--out", out_, "Output CSV (default imbalanced.csv)");
    imb->callback([this] {
      action_ = [this] {
        run_.command = "gen imbalanced";
        if (out_.empty()) out_ = "imbalanced.csv";
        check_writable(out_, g_);
        imb_.seed = run_.seed;
        const auto ds = gen_imbalanced_scores(imb_);
        run_.config = {{"n", imb_.n_samples},
                       {"prevalence", imb_.prevalence},
                       {"separation", imb_.separation},
                       {"spread", imb_.spread}};
        emit(run_, out_, render([&](auto& o) { io::write_scores(o, ds); }));
        finish(out_);
      };
    });
  }

  void setup_train() {
    auto* c = app_.add_subcommand("train", "Train the toy MLP on x,true_class data");
    c->add_option("--data", in_, "Training CSV (x,true_class)")->required();
    c->add_option("--epochs", train_.epochs, "Epochs (0 keeps the initial weights)");
    c->add_option("--batch-size", train_.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    c->add_option("--lr", train_.adam.learning_rate, "Adam learning rate");
    c->add_option("--hidden", hidden_, "Hidden units")->check(CLI::PositiveNumber);
    c->add_option("--dropout", dropout_, "Dropout rate at test and train time")
        ->check(CLI::Range(0.0, 0.999));
    c->add_option("--dropout-site", dropout_site_, "Apply dropout to the input or hidden units")
        ->check(CLI::IsMember({"hidden", "input"}));
    c->add_option("--out", out_, "Model JSON")->required();
    c->callback([this] {
      action_ = [this] {
        run_.command = "train";
        check_writable(out_, g_);
        const auto data = load_toy(in_, run_);
        train_.seed = derive_seed(run_.seed, 2, 0);
        const Mlp init(1, hidden_, 2, dropout_, derive_seed(run_.seed, 1, 0),
                       dropout_site_from_string(dropout_site_));
        const auto r = mlp_train(init, data, train_);
        run_.config = {{"epochs", train_.epochs},
                       {"batch_size", train_.batch_size},
                       {"lr", train_.adam.learning_rate},
                       {"hidden", hidden_},
                       {"dropout", dropout_},
                       {"dropout_site", dropout_site_}};
        run_.extra["loss_trace"] = r.loss_trace;
        emit(run_, out_, r.model.to_json().dump() + "\n");
        std::cout << "final loss " << r.loss_trace.back() << "\n";
        finish(out_);
      };
    });
  }

  void setup_infer() {
    auto* c = app_.add_subcommand("infer", "Score toy inputs with a trained model");
    c->add_option("--model", model_, "Model JSON")->required();
    c->add_option("--data", in_, "Input CSV (x,true_class)")->required();
    c->add_option("--trials", trials_,
                  "Dropout trials per input; 0 writes one deterministic score row");
    c->add_option("--out", out_, "Score or trial CSV")->required();
    c->callback([this] {
      action_ = [this] {
        run_.command = "infer";
        check_writable(out_, g_);
        check_readable(model_);
        run_.inputs.push_back(model_);
        const auto model = Mlp::from_json(io::read_json(model_));
        const auto data = load_toy(in_, run_);
        run_.config = {{"trials", trials_}};
        if (trials_ == 0) {
          const auto ds = predict_dataset(model, data);
          emit(run_, out_, render([&](auto& o) { io::write_scores(o, ds); }));
        } else {
          std::vector<TrialBlock> blocks;
          std::mutex guard;
          std::map<std::size_t, std::vector<TrialBlock>> by_start;
          parallel_chunks(data.size(), g_.threads, [&](std::size_t b, std::size_t e) {
            ToySet chunk{{data.x.begin() + b, data.x.begin() + e},
                         {data.label.begin() + b, data.label.begin() + e}};
            auto part = run_trials(model, chunk, trials_, run_.seed,
                                   static_cast<std::int64_t>(b));
            std::lock_guard lock(guard);
            by_start.emplace(b, std::move(part));
          });
          for (auto& [b, part] : by_start)
            for (auto& blk : part) blocks.push_back(std::move(blk));
          emit(run_, out_, render([&](auto& o) { io::write_trials(o, blocks); }));
        }
        finish(out_);
      };
    });
  }

  void setup_split() {
    auto* c = app_.add_subcommand("split", "Seeded val-train / val-val partition");
    c->add_option("--in", in_, "Score or trial CSV")->required();
    c->add_option("--val-split", split_, "Fractions VT/VV");
    c->add_option("--out-train", out_, "val-train output CSV")->required();
    c->add_option("--out-val", out2_, "val-val output CSV")->required();
    c->callback([this] {
      action_ = [this] {
        run_.command = "split";
        check_writable(out_, g_);
        check_writable(out2_, g_);
        const auto fractions = parse_split(split_);
        run_.config = {{"val_split", split_}};
        check_readable(in_);
        run_.inputs.push_back(in_);
        if (io::is_trial_file(in_)) {
          auto in = io::open_in(in_);
          const auto blocks = io::read_trials(in);
          const auto labels = split_labels(blocks.size(), fractions, run_.seed);
          std::vector<TrialBlock> vt, vv;
          for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (labels[i] == SplitLabel::val_train) vt.push_back(blocks[i]);
            if (labels[i] == SplitLabel::val_val) vv.push_back(blocks[i]);
          }
          emit(run_, out_, render([&](auto& o) { io::write_trials(o, vt); }));
          emit(run_, out2_, render([&](auto& o) { io::write_trials(o, vv); }));
        } else {
          auto in = io::open_in(in_);
          const auto ds = split_dataset(io::read_scores(in), fractions, run_.seed);
          emit(run_, out_, render([&](auto& o) {
                 io::write_scores(o, ds.select(SplitLabel::val_train));
               }));
          emit(run_, out2_, render([&](auto& o) {
                 io::write_scores(o, ds.select(SplitLabel::val_val));
               }));
        }
        finish(out_);
      };
    });
  }

  void setup_calibrate() {
    auto* cal = app_.add_subcommand("calibrate", "Fit or apply a calibrator");
    cal->require_subcommand(1);

    auto* fit = cal->add_subcommand("fit", "Fit on val-train scores (trial files are flattened)");
    fit->add_option("--scores", in_, "val-train score or trial CSV")->required();
    fit->add_option("--estimator", estimator_, "histogram or knn")
        ->check(CLI::IsMember({"histogram", "hist", "knn"}));
    fit->add_option("--bins", density_.bins_per_dim, "Histogram bins per dimension")
        ->check(CLI::PositiveNumber);
    fit->add_option("--k", density_.k, "Neighbors for knn")->check(CLI::PositiveNumber);
    fit->add_option("--weighting", weighting_, "uniform or inverse-prevalence")
        ->check(CLI::IsMember({"uniform", "inverse-prevalence"}));
    fit->add_flag("--no-reduce", no_reduce_,
                  "Fit softmax scores in all d dims instead of d-1");
    fit->add_option("--fallback-prior", fallback_,
                    "Probability where there is no support (default: val-train accuracy)")
        ->check(CLI::Range(0.0, 1.0));
    fit->add_option("--out", out_, "Calibrator JSON")->required();
    fit->callback([this] {
      action_ = [this] {
        run_.command = "calibrate fit";
        check_writable(out_, g_);
        const auto ds = load_scores_any(in_, run_);
        CalibratorOptions opts;
        opts.density = density_;
        opts.density.kind = estimator_from_string(estimator_);
        opts.density.weighting = weighting_from_string(weighting_);
        opts.reduce_simplex = !no_reduce_;
        opts.fallback_prior = fallback_;
        const auto c = Calibrator::fit(ds, opts);
        if (!c.warning().empty()) std::cerr << "warning: " << c.warning() << "\n";
        run_.config = {{"estimator", std::string(to_string(opts.density.kind))},
                       {"bins", opts.density.bins_per_dim},
                       {"k", opts.density.k},
                       {"weighting", std::string(to_string(opts.density.weighting))},
                       {"reduce_simplex", opts.reduce_simplex},
                       {"fallback_prior", c.fallback_prior()},
                       {"samples", ds.size()}};
        emit(run_, out_, c.to_json().dump() + "\n");
        finish(out_);
      };
    });

    auto* apply = cal->add_subcommand("apply", "Calibrate every row of a score or trial CSV");
    apply->add_option("--calibrator", calibrator_, "Calibrator JSON")->required();
    apply->add_option("--scores", in_, "Score or trial CSV")->required();
    apply->add_option("--out", out_, "Calibrated CSV")->required();
    apply->callback([this] {
      action_ = [this] {
        run_.command = "calibrate apply";
        check_writable(out_, g_);
        const auto c = load_calibrator(calibrator_, run_);
        check_readable(in_);
        run_.inputs.push_back(in_);
        std::vector<std::int64_t> ids;
        Dataset ds;
        if (io::is_trial_file(in_)) {
          auto in = io::open_in(in_);
          const auto blocks = io::read_trials(in);
          for (const auto& b : blocks)
            for (std::size_t t = 0; t < b.size(); ++t) ids.push_back(b.sample_id());
          ds = flatten_trials(blocks);
        } else {
          auto in = io::open_in(in_);
          ds = io::read_scores(in, c.space());
          for (std::size_t i = 0; i < ds.size(); ++i)
            ids.push_back(static_cast<std::int64_t>(i));
        }
        if (ds.class_count() != c.class_count())
          throw ConfigError("score file has " + std::to_string(ds.class_count()) +
                            " classes, calibrator expects " +
                            std::to_string(c.class_count()));
        const auto scores = c.calibrate_batch(ds, g_.threads);
        std::vector<io::CalibratedRow> rows(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i)
          rows[i] = {ids[i], ds.predicted_class(i), ds.true_class(i),
                     scores[i].probability, scores[i].extrapolated};
        emit(run_, out_, render([&](auto& o) { io::write_calibrated(o, rows); }));
        finish(out_);
      };
    });
  }

  void setup_fuse() {
    auto* c = app_.add_subcommand("fuse", "Combine calibrated trials per input");
    c->add_option("--trials", in_, "Trial CSV")->required();
    c->add_option("--calibrator", calibrator_, "Calibrator JSON (not used by baseline)");
    c->add_option("--method", method_, "freq, bayes or baseline")
        ->check(CLI::IsMember({"freq", "frequentist", "bayes", "bayesian",
                               "baseline", "baseline-variance"}));
    c->add_option("--prior", prior_, "Bayesian prior (default 1/d)")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--hypothesis", hypothesis_, "mass or votes")
        ->check(CLI::IsMember({"mass", "votes"}));
    c->add_option("--log-floor", log_floor_, "Floor for per-trial log probabilities");
    c->add_option("--out", out_, "Fused CSV")->required();
    c->callback([this] {
      action_ = [this] {
        run_.command = "fuse";
        check_writable(out_, g_);
        FusionConfig cfg;
        cfg.method = fusion_method_from_string(method_);
        cfg.hypothesis = hypothesis_ == "votes" ? HypothesisRule::calibrated_votes
                                                : HypothesisRule::score_mass;
        cfg.log_floor = log_floor_;
        std::optional<Calibrator> cal;
        if (cfg.method != FusionMethod::baseline_variance) {
          if (calibrator_.empty())
            throw CLI::ValidationError("--calibrator", "required for this method");
          cal = load_calibrator(calibrator_, run_);
        }
        const auto blocks = load_trials(in_, run_);
        if (blocks.empty()) throw InvalidInput("trial file has no rows");
        const auto d = blocks.front().class_count();
        if (cal && cal->class_count() != d)
          throw ConfigError("trials have " + std::to_string(d) +
                            " classes, calibrator expects " +
                            std::to_string(cal->class_count()));
        cfg.prior = prior_.value_or(1.0 / static_cast<double>(d));
        cfg.validate();
        std::vector<io::FusedRow> rows(blocks.size());
        const std::string method(to_string(cfg.method));
        parallel_chunks(blocks.size(), g_.threads, [&](std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            const auto r = fuse_block(blocks[i], cal ? &*cal : nullptr, cfg);
            rows[i] = {blocks[i].sample_id(), r.hypothesis, r.probability, method,
                       blocks[i].size()};
          }
        });
        run_.config = {{"method", method},
                       {"prior", cfg.prior},
                       {"hypothesis", hypothesis_},
                       {"log_floor", cfg.log_floor}};
        emit(run_, out_, render([&](auto& o) { io::write_fused(o, rows); }));
        finish(out_);
      };
    });
  }

  void setup_eval() {
    auto* c = app_.add_subcommand("eval", "Reliability, ECE, accuracy and toy MAPD");
    auto* calibrated = c->add_option("--calibrated", in_, "Calibrated CSV");
    auto* fused = c->add_option("--fused", in2_, "Fused CSV");
    calibrated->excludes(fused);
    c->add_option("--trials", trials_path_, "Trial CSV supplying labels for --fused");
    c->add_option("--bins", bins_, "Reliability bins")->check(CLI::PositiveNumber);
    c->add_option("--min-bin-count", min_bin_count_,
                  "Bins with fewer samples are ignored by max_residual");
    c->add_option("--reliability-out", out_, "Reliability CSV");
    c->add_option("--toy", toy_path_, "Toy inputs, for MAPD against the analytic optimum");
    c->add_option("--x-range", x_range_, "Covariate range for MAPD")->expected(2);
    c->add_option("--curve-bins", curve_bins_, "Covariate bins for MAPD")
        ->check(CLI::PositiveNumber);
    c->add_option("--curve-out", out2_, "Binned curve CSV");
    c->add_option("--summary-out", summary_out_, "Summary JSON");
    c->add_option("--assert", asserts_,
                  "Threshold such as ece<=0.01 or accuracy>=0.9; exit 3 when violated");
    c->callback([this] {
      action_ = [this] { eval(); };
    });
  }

  void eval() {
    run_.command = "eval";
    std::vector<Assertion> checks;
    for (const auto& a : asserts_) checks.push_back(parse_assertion(a));
    for (const auto* p : {&out_, &out2_, &summary_out_})
      if (!p->empty()) check_writable(*p, g_);
    if (in_.empty() == in2_.empty())
      throw CLI::ValidationError("eval", "pass exactly one of --calibrated or --fused");

    std::vector<std::int64_t> ids;
    std::vector<Prediction> preds;
    if (!in_.empty()) {
      check_readable(in_);
      run_.inputs.push_back(in_);
      auto in = io::open_in(in_);
      for (const auto& r : io::read_calibrated(in)) {
        if (!r.true_class)
          throw InvalidInput("row for sample " + std::to_string(r.sample_id) +
                             " has no true_class");
        ids.push_back(r.sample_id);
        preds.push_back({r.probability, r.predicted_class == *r.true_class});
      }
    } else {
      if (trials_path_.empty())
        throw CLI::ValidationError("--trials", "labels for --fused come from the trial CSV");
      check_readable(in2_);
      run_.inputs.push_back(in2_);
      std::map<std::int64_t, int> labels;
      for (const auto& b : load_trials(trials_path_, run_)) {
        if (!b.true_class())
          throw InvalidInput("sample " + std::to_string(b.sample_id()) +
                             " has no true_class");
        labels[b.sample_id()] = *b.true_class();
      }
      auto in = io::open_in(in2_);
      for (const auto& r : io::read_fused(in)) {
        const auto it = labels.find(r.sample_id);
        if (it == labels.end())
          throw ConfigError("fused sample " + std::to_string(r.sample_id) +
                            " is missing from the trial file");
        ids.push_back(r.sample_id);
        preds.push_back({r.probability, r.hypothesis == it->second});
      }
    }

    const auto bins = reliability_bins(preds, bins_);
    json summary;
    summary["n"] = preds.size();
    summary["ece"] = expected_calibration_error(bins);
    std::size_t hits = 0;
    for (const auto& p : preds) hits += p.correct ? 1 : 0;
    summary["accuracy"] =
        static_cast<double>(hits) / static_cast<double>(std::max<std::size_t>(1, preds.size()));
    double worst = 0.0;
    for (const auto& b : bins)
      if (b.count >= min_bin_count_) worst = std::max(worst, std::abs(b.residual()));
    summary["max_residual"] = worst;

    if (!toy_path_.empty()) {
      const auto toy = load_toy(toy_path_, run_);
      std::vector<double> x, v, ref;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= toy.size())
          throw ConfigError("sample " + std::to_string(ids[i]) +
                            " is outside the toy file");
        const double xi = toy.x[static_cast<std::size_t>(ids[i])];
        x.push_back(xi);
        v.push_back(preds[i].probability);
        ref.push_back(analytic_pmax(xi));
      }
      const auto curve = binned_curve(x, v, ref, x_range_[0], x_range_[1], curve_bins_);
      summary["mapd"] = curve_mapd(curve);
      double excess = -1.0;
      for (const auto& b : curve)
        if (b.count > 0) excess = std::max(excess, b.mean_value - b.mean_reference);
      summary["max_excess_over_pmax"] = excess;
      if (!out2_.empty())
        emit(run_, out2_, render([&](auto& o) {
               o << "x_lo,x_hi,count,mean_probability,mean_pmax\n";
               for (const auto& b : curve)
                 o << io::format_double(b.lo) << ',' << io::format_double(b.hi) << ','
                   << b.count << ',' << io::format_double(b.mean_value) << ','
                   << io::format_double(b.mean_reference) << '\n';
             }));
    }

    if (!out_.empty())
      emit(run_, out_, render([&](auto& o) { io::write_reliability(o, bins); }));
    if (!summary_out_.empty()) emit(run_, summary_out_, summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";

    run_.config = {{"bins", bins_}, {"asserts", asserts_}};
    run_.extra["summary"] = summary;
    const std::string primary =
        !summary_out_.empty() ? summary_out_ : !out_.empty() ? out_ : out2_;
    if (!primary.empty()) finish(primary);

    for (const auto& a : checks) {
      if (!summary.contains(a.metric))
        throw CLI::ValidationError("--assert", "unknown or unavailable metric '" +
                                                   a.metric + "'");
      const double value = summary[a.metric].get<double>();
      const bool ok = a.at_most ? value <= a.bound : value >= a.bound;
      if (!ok)
        throw AssertionFailed(a.text + " (observed " + io::format_double(value) + ")");
    }
  }

  void setup_oracle() {
    auto* oracle = app_.add_subcommand("oracle", "Closed-form reference values");
    oracle->require_subcommand(1);
    auto* pmax = oracle->add_subcommand(
        "pmax", "Best achievable probability on the toy problem");
    pmax->add_option("--x", xs_, "Input values to print");
    pmax->add_option("--data", in_, "Toy CSV to tabulate");
    pmax->add_option("--separation", toy_.class_separation, "Class mean spacing");
    pmax->add_option("--out", out_, "Output CSV x,pmax (with --data)");
    pmax->callback([this] {
      action_ = [this] {
        run_.command = "oracle pmax";
        for (double x : xs_)
          std::cout << io::format_double(x) << ','
                    << io::format_double(analytic_pmax(x, toy_.class_separation)) << "\n";
        if (in_.empty()) return;
        if (out_.empty()) throw CLI::ValidationError("--out", "required with --data");
        check_writable(out_, g_);
        const auto toy = load_toy(in_, run_);
        emit(run_, out_, render([&](auto& o) {
               o << "x,pmax\n";
               for (double x : toy.x)
                 o << io::format_double(x) << ','
                   << io::format_double(analytic_pmax(x, toy_.class_separation)) << '\n';
             }));
        run_.config = {{"separation", toy_.class_separation}};
        finish(out_);
      };
    });
  }

  void setup_replay() {
    auto* c = app_.add_subcommand("replay", "Rerun the command recorded in a manifest");
    c->add_option("manifest", in_, "Manifest JSON")->required();
    c->callback([this] {
      action_ = [this] {
        check_readable(in_);
        const auto m = io::read_json(in_);
        std::vector<std::string> args{"ratiocal"};
        for (const auto& a : m.at("argv")) {
          auto s = a.get<std::string>();
          if (s != "--force") args.push_back(std::move(s));
        }
        args.push_back("--force");
        std::vector<const char*> raw;
        for (const auto& a : args) raw.push_back(a.c_str());
        Cli inner;
        const int code = inner.run(static_cast<int>(raw.size()), raw.data());
        if (code != 0) throw std::runtime_error("replayed command exited with " +
                                                std::to_string(code));
      };
    });
  }

  CLI::App app_;
  Globals g_;
  std::optional<std::uint64_t> seed_opt_;
  Run run_;
  std::function<void()> action_;

  std::string in_, in2_, out_, out2_, summary_out_, model_, calibrator_;
  std::string trials_path_, toy_path_;
  ToyConfig toy_;
  ImbalancedConfig imb_;
  TrainConfig train_;
  std::size_t hidden_ = 16;
  double dropout_ = 0.0;
  std::string dropout_site_ = "hidden";
  std::size_t trials_ = 0;
  std::string split_ = "0.8/0.2";
  std::string estimator_ = "histogram";
  std::string weighting_ = "uniform";
  DensityConfig density_;
  bool no_reduce_ = false;
  std::optional<double> fallback_;
  std::string method_ = "freq";
  std::optional<double> prior_;
  std::string hypothesis_ = "mass";
  double log_floor_ = kFloat32LogFloor;
  std::size_t bins_ = 100;
  std::size_t min_bin_count_ = 100;
  std::vector<double> x_range_{-2.0, 5.0};
  std::size_t curve_bins_ = 70;
  std::vector<std::string> asserts_;
  std::vector<double> xs_;
};

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  return cli.run(argc, argv);
}
