// Monte Carlo dropout: calibrate single trials, then combine 25 trials per
// input with the frequentist and Bayesian rules and the variance baseline.

#include <cstdio>

#include "ratiocal/calibrator.hpp"
#include "ratiocal/fusion.hpp"
#include "ratiocal/mlp.hpp"
#include "ratiocal/toy.hpp"

using namespace ratiocal;

int main() {
  TrainConfig train;
  train.epochs = 40;
  const auto model = mlp_train(Mlp::toy(0.2, 1), gen_toy({50'000, 3.0, 2}), train).model;

  const auto vt = run_trials(model, gen_toy({20'000, 3.0, 3}), 25, 10);
  const auto cal = Calibrator::fit(flatten_trials(vt));

  const ToySet probe{{-0.5, 1.0, 1.5, 2.0, 3.5}, {0, 0, 1, 1, 1}};
  const auto blocks = run_trials(model, probe, 25, 11);
  FusionConfig freq, bayes;
  bayes.method = FusionMethod::bayesian;

  std::printf("    x   H  frequentist  bayesian  baseline   pmax\n");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto f = fuse_block(blocks[i], &cal, freq);
    const auto b = fuse_block(blocks[i], &cal, bayes);
    const auto v = baseline_variance_prob(blocks[i]);
    std::printf("%5.2f  %d  %11.4f  %8.4f  %8.4f  %6.4f\n", probe.x[i], f.hypothesis,
                f.probability, b.probability, v.probability, analytic_pmax(probe.x[i]));
  }
}
