// Train the toy MLP, calibrate it on held-out scores with a 100-bin
// histogram, and print a few calibrated scores next to the best achievable
// probability.

#include <cstdio>

#include "ratiocal/calibrator.hpp"
#include "ratiocal/metrics.hpp"
#include "ratiocal/mlp.hpp"
#include "ratiocal/toy.hpp"

using namespace ratiocal;

int main() {
  const auto model = mlp_train(Mlp::toy(0.0, 1), gen_toy({50'000, 3.0, 2}), {}).model;

  const auto cal = Calibrator::fit(predict_dataset(model, gen_toy({1'000'000, 3.0, 3})));
  const auto vv = predict_dataset(model, gen_toy({1'000'000, 3.0, 4}));

  std::vector<Prediction> preds;
  const auto scores = cal.calibrate_batch(vv);
  for (std::size_t i = 0; i < vv.size(); ++i)
    preds.push_back({scores[i].probability, vv.correct(i)});
  std::printf("accuracy %.4f  ECE %.5f\n", accuracy(vv),
              expected_calibration_error(preds));

  std::printf("    x   raw y0  calibrated   pmax\n");
  for (double x : {-1.0, 0.5, 1.0, 1.5, 2.0, 2.5, 4.0}) {
    const auto y = mlp_forward(model, x, false);
    std::printf("%5.2f  %7.4f  %10.4f  %6.4f\n", x, y[0], cal.score(y).probability,
                analytic_pmax(x));
  }
}
