#include "ratiocal/io.hpp"

#include <random>
#include <sstream>

#include "gtest/gtest.h"

namespace ratiocal {
namespace {

template <class F>
ParseError parse_failure(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "expected a parse error";
  return ParseError("none");
}

TEST(FormatDouble, ShortestRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) / (1 + i);
    EXPECT_EQ(std::stod(io::format_double(v)), v);
  }
  EXPECT_EQ(io::format_double(0.7), "0.7");
}

TEST(ScoresCsv, RoundTripIsExact) {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> e;
  std::vector<double> values;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    double a = e(rng), b = e(rng), c = e(rng);
    const double s = a + b + c;
    values.insert(values.end(), {a / s, b / s, c / s});
    labels.push_back(i % 3);
  }
  const Dataset ds(values, 3, labels, SpaceTag::softmax);
  std::stringstream buf;
  io::write_scores(buf, ds);
  const auto back = io::read_scores(buf);
  EXPECT_EQ(back.values(), ds.values());
  EXPECT_EQ(back.true_classes(), ds.true_classes());
  EXPECT_EQ(back.space(), SpaceTag::softmax);
}

TEST(ScoresCsv, DetectsLogits) {
  std::stringstream buf("y_0,y_1,true_class\n2.5,-1,0\n0.1,0.2,1\n");
  EXPECT_EQ(io::read_scores(buf).space(), SpaceTag::logit);
}

TEST(ScoresCsv, ErrorsNameRowAndColumn) {
  auto e = parse_failure([] {
    std::stringstream buf("y_0,y_1,true_class\n0.5,0.5,0\n0.3,abc,1\n");
    io::read_scores(buf);
  });
  EXPECT_EQ(e.row(), 3u);
  EXPECT_EQ(e.column(), 2u);
  EXPECT_NE(std::string(e.what()).find("row 3, column 2"), std::string::npos);

  e = parse_failure([] {
    std::stringstream buf("y_0,y_1,true_class\n0.5,0.5\n");
    io::read_scores(buf);
  });
  EXPECT_EQ(e.row(), 2u);
  EXPECT_EQ(e.column(), 3u);

  e = parse_failure([] {
    std::stringstream buf("y_0,y_1,label\n0.5,0.5,0\n");
    io::read_scores(buf);
  });
  EXPECT_EQ(e.row(), 1u);
  EXPECT_EQ(e.column(), 3u);

  e = parse_failure([] {
    std::stringstream buf("y_0,y_1,true_class\n0.5,0.5,2\n");
    io::read_scores(buf);
  });
  EXPECT_EQ(e.row(), 2u);
  EXPECT_EQ(e.column(), 3u);
}

TEST(TrialsCsv, RoundTripGroupsBySample) {
  std::vector<TrialBlock> blocks;
  blocks.emplace_back(5, std::vector<ScoreVector>{{{0.9, 0.1}, SpaceTag::softmax},
                                                  {{0.6, 0.4}, SpaceTag::softmax}},
                      1);
  blocks.emplace_back(2, std::vector<ScoreVector>{{{0.3, 0.7}, SpaceTag::softmax}});
  std::stringstream buf;
  io::write_trials(buf, blocks);
  const auto back = io::read_trials(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].sample_id(), 5);
  EXPECT_EQ(back[0].trials(), blocks[0].trials());
  EXPECT_EQ(back[0].true_class(), std::optional<int>(1));
  EXPECT_EQ(back[1].sample_id(), 2);
  EXPECT_FALSE(back[1].true_class());
}

TEST(TrialsCsv, ErrorsNameRowAndColumn) {
  const auto e = parse_failure([] {
    std::stringstream buf(
        "sample_id,trial_id,y_0,y_1,true_class\n0,0,0.5,0.5,1\nx,1,0.5,0.5,1\n");
    io::read_trials(buf);
  });
  EXPECT_EQ(e.row(), 3u);
  EXPECT_EQ(e.column(), 1u);
}

TEST(ToyCsv, RoundTrip) {
  ToySet set{{-1.25, 0.1, 3.7}, {0, 0, 1}};
  std::stringstream buf;
  io::write_toy(buf, set);
  EXPECT_EQ(buf.str().substr(0, 13), "x,true_class\n");
  const auto back = io::read_toy(buf);
  EXPECT_EQ(back.x, set.x);
  EXPECT_EQ(back.label, set.label);
}

TEST(CalibratedCsv, RoundTrip) {
  const std::vector<io::CalibratedRow> rows{{0, 1, 1, 0.875, false},
                                            {1, 0, std::nullopt, 0.5, true}};
  std::stringstream buf;
  io::write_calibrated(buf, rows);
  const auto back = io::read_calibrated(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].probability, 0.875);
  EXPECT_EQ(back[0].true_class, std::optional<int>(1));
  EXPECT_FALSE(back[1].true_class);
  EXPECT_TRUE(back[1].extrapolated);
}

TEST(FusedCsv, RoundTrip) {
  const std::vector<io::FusedRow> rows{{3, 1, 0.987804878, "bayesian", 25}};
  std::stringstream buf;
  io::write_fused(buf, rows);
  EXPECT_EQ(buf.str().substr(0, 37), "sample_id,hypothesis,probability,meth");
  const auto back = io::read_fused(buf);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].probability, 0.987804878);
  EXPECT_EQ(back[0].method, "bayesian");
  EXPECT_EQ(back[0].trials, 25u);
}

}  // namespace
}  // namespace ratiocal
