#pragma once

// CSV file formats:
//
//   scores      y_0,...,y_{d-1},true_class
//   trials      sample_id,trial_id,y_0,...,y_{d-1},true_class
//   toy inputs  x,true_class
//   calibrated  sample_id,predicted_class,true_class,probability,extrapolated
//   fused       sample_id,hypothesis,probability,method,T
//   reliability bin_lo,bin_hi,count,mean_confidence,empirical_accuracy,residual
//
// Floats are written in shortest round-trip form, so a reread value is
// bit-identical.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "ratiocal/error.hpp"
#include "ratiocal/metrics.hpp"
#include "ratiocal/score.hpp"
#include "ratiocal/toy.hpp"

namespace ratiocal::io {

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("cannot format number");
  return {buf, end};
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t row,
                           std::size_t col) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError("expected a number, got '" + std::string(s) + "'", row, col);
  return v;
}

inline std::int64_t parse_int(std::string_view s, std::size_t row,
                              std::size_t col) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError("expected an integer, got '" + std::string(s) + "'", row,
                     col);
  return v;
}

// Reads the header line; returns its fields.
inline std::vector<std::string> read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: missing header", 1);
  std::vector<std::string> out;
  for (auto f : split_fields(trim_cr(line))) out.emplace_back(f);
  return out;
}

inline void expect_header(const std::vector<std::string>& got,
                          const std::vector<std::string>& want) {
  if (got.size() != want.size())
    throw ParseError("header has " + std::to_string(got.size()) +
                         " columns, expected " + std::to_string(want.size()),
                     1);
  for (std::size_t c = 0; c < want.size(); ++c)
    if (got[c] != want[c])
      throw ParseError("header column '" + got[c] + "', expected '" + want[c] +
                           "'",
                       1, c + 1);
}

// Counts the y_i columns starting at `first`.
inline std::size_t score_columns(const std::vector<std::string>& header,
                                 std::size_t first) {
  std::size_t d = 0;
  while (first + d < header.size() &&
         header[first + d] == "y_" + std::to_string(d))
    ++d;
  if (d == 0) throw ParseError("header has no y_0 column", 1, first + 1);
  return d;
}

inline SpaceTag resolve_space(std::optional<SpaceTag> requested,
                              const std::vector<double>& values,
                              std::size_t d) {
  if (requested) return *requested;
  for (std::size_t i = 0; i + d <= values.size(); i += d)
    if (!looks_like_simplex(std::span<const double>(values.data() + i, d)))
      return SpaceTag::logit;
  return SpaceTag::softmax;
}

inline std::vector<std::string> score_header(std::size_t d) {
  std::vector<std::string> h;
  for (std::size_t c = 0; c < d; ++c) h.push_back("y_" + std::to_string(c));
  return h;
}

}  // namespace detail

// `space` nullopt detects softmax when every row lies on the simplex.
inline Dataset read_scores(std::istream& in,
                           std::optional<SpaceTag> space = std::nullopt) {
  const auto header = detail::read_header(in);
  const std::size_t d = detail::score_columns(header, 0);
  auto want = detail::score_header(d);
  want.push_back("true_class");
  detail::expect_header(header, want);

  std::vector<double> values;
  std::vector<int> labels;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() != d + 1)
      throw ParseError("expected " + std::to_string(d + 1) + " fields, got " +
                           std::to_string(fields.size()),
                       row, std::min(fields.size(), d + 1) + 1);
    for (std::size_t c = 0; c < d; ++c)
      values.push_back(detail::parse_double(fields[c], row, c + 1));
    const auto label = detail::parse_int(fields[d], row, d + 1);
    if (label < 0 || static_cast<std::size_t>(label) >= d)
      throw ParseError("true_class out of range", row, d + 1);
    labels.push_back(static_cast<int>(label));
  }
  const SpaceTag tag = detail::resolve_space(space, values, d);
  try {
    return Dataset(std::move(values), d, std::move(labels), tag);
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("invalid score rows: ") + e.what());
  }
}

inline void write_scores(std::ostream& out, const Dataset& ds) {
  const auto header = detail::score_header(ds.class_count());
  for (const auto& h : header) out << h << ',';
  out << "true_class\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.score(i)) out << format_double(v) << ',';
    out << ds.true_class(i) << '\n';
  }
}

// Blocks come out in order of first appearance of each sample_id; trials
// within a block keep file order. Rows of one sample need not be contiguous.
inline std::vector<TrialBlock> read_trials(
    std::istream& in, std::optional<SpaceTag> space = std::nullopt) {
  const auto header = detail::read_header(in);
  if (header.size() < 2 || header[0] != "sample_id" || header[1] != "trial_id")
    throw ParseError("trial file must start with sample_id,trial_id", 1, 1);
  const std::size_t d = detail::score_columns(header, 2);
  std::vector<std::string> want{"sample_id", "trial_id"};
  for (auto& h : detail::score_header(d)) want.push_back(h);
  want.push_back("true_class");
  detail::expect_header(header, want);

  struct Pending {
    std::int64_t id;
    std::vector<std::vector<double>> rows;
    std::optional<int> label;
  };
  std::vector<Pending> pending;
  std::map<std::int64_t, std::size_t> slot;
  std::vector<double> all_values;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() != d + 3)
      throw ParseError("expected " + std::to_string(d + 3) + " fields, got " +
                           std::to_string(fields.size()),
                       row, std::min(fields.size(), d + 3) + 1);
    const auto id = detail::parse_int(fields[0], row, 1);
    detail::parse_int(fields[1], row, 2);
    std::vector<double> y(d);
    for (std::size_t c = 0; c < d; ++c)
      y[c] = detail::parse_double(fields[c + 2], row, c + 3);
    std::optional<int> label;
    if (!fields[d + 2].empty()) {
      const auto l = detail::parse_int(fields[d + 2], row, d + 3);
      if (l < 0 || static_cast<std::size_t>(l) >= d)
        throw ParseError("true_class out of range", row, d + 3);
      label = static_cast<int>(l);
    }
    auto [it, inserted] = slot.try_emplace(id, pending.size());
    if (inserted) pending.push_back({id, {}, label});
    auto& p = pending[it->second];
    if (p.label != label)
      throw ParseError("trials of one sample disagree on true_class", row, d + 3);
    all_values.insert(all_values.end(), y.begin(), y.end());
    p.rows.push_back(std::move(y));
  }
  const SpaceTag tag = detail::resolve_space(space, all_values, d);
  std::vector<TrialBlock> blocks;
  blocks.reserve(pending.size());
  for (auto& p : pending) {
    std::vector<ScoreVector> trials;
    trials.reserve(p.rows.size());
    try {
      for (auto& r : p.rows) trials.emplace_back(std::move(r), tag);
    } catch (const InvalidInput& e) {
      throw ParseError("sample " + std::to_string(p.id) + ": " + e.what());
    }
    blocks.emplace_back(p.id, std::move(trials), p.label);
  }
  return blocks;
}

inline void write_trials(std::ostream& out, std::span<const TrialBlock> blocks) {
  if (blocks.empty()) throw InvalidInput("no trial blocks to write");
  out << "sample_id,trial_id,";
  for (const auto& h : detail::score_header(blocks.front().class_count()))
    out << h << ',';
  out << "true_class\n";
  for (const auto& b : blocks)
    for (std::size_t t = 0; t < b.size(); ++t) {
      out << b.sample_id() << ',' << t << ',';
      for (double v : b[t].components()) out << format_double(v) << ',';
      if (b.true_class()) out << *b.true_class();
      out << '\n';
    }
}

inline ToySet read_toy(std::istream& in) {
  detail::expect_header(detail::read_header(in), {"x", "true_class"});
  ToySet out;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() != 2)
      throw ParseError("expected 2 fields, got " + std::to_string(fields.size()),
                       row, std::min<std::size_t>(fields.size(), 2) + 1);
    out.x.push_back(detail::parse_double(fields[0], row, 1));
    const auto label = detail::parse_int(fields[1], row, 2);
    if (label != 0 && label != 1)
      throw ParseError("toy labels must be 0 or 1", row, 2);
    out.label.push_back(static_cast<int>(label));
  }
  return out;
}

inline void write_toy(std::ostream& out, const ToySet& data) {
  out << "x,true_class\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    out << format_double(data.x[i]) << ',' << data.label[i] << '\n';
}

struct CalibratedRow {
  std::int64_t sample_id;
  int predicted_class;
  std::optional<int> true_class;
  double probability;
  bool extrapolated;
};

inline void write_calibrated(std::ostream& out,
                             std::span<const CalibratedRow> rows) {
  out << "sample_id,predicted_class,true_class,probability,extrapolated\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.predicted_class << ',';
    if (r.true_class) out << *r.true_class;
    out << ',' << format_double(r.probability) << ',' << (r.extrapolated ? 1 : 0)
        << '\n';
  }
}

inline std::vector<CalibratedRow> read_calibrated(std::istream& in) {
  detail::expect_header(detail::read_header(in),
                        {"sample_id", "predicted_class", "true_class",
                         "probability", "extrapolated"});
  std::vector<CalibratedRow> rows;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto f = detail::split_fields(text);
    if (f.size() != 5)
      throw ParseError("expected 5 fields, got " + std::to_string(f.size()), row,
                       std::min<std::size_t>(f.size(), 5) + 1);
    CalibratedRow r{};
    r.sample_id = detail::parse_int(f[0], row, 1);
    r.predicted_class = static_cast<int>(detail::parse_int(f[1], row, 2));
    if (!f[2].empty()) r.true_class = static_cast<int>(detail::parse_int(f[2], row, 3));
    r.probability = detail::parse_double(f[3], row, 4);
    r.extrapolated = detail::parse_int(f[4], row, 5) != 0;
    rows.push_back(r);
  }
  return rows;
}

struct FusedRow {
  std::int64_t sample_id;
  int hypothesis;
  double probability;
  std::string method;
  std::size_t trials;
};

inline void write_fused(std::ostream& out, std::span<const FusedRow> rows) {
  out << "sample_id,hypothesis,probability,method,T\n";
  for (const auto& r : rows)
    out << r.sample_id << ',' << r.hypothesis << ','
        << format_double(r.probability) << ',' << r.method << ',' << r.trials
        << '\n';
}

inline std::vector<FusedRow> read_fused(std::istream& in) {
  detail::expect_header(detail::read_header(in),
                        {"sample_id", "hypothesis", "probability", "method", "T"});
  std::vector<FusedRow> rows;
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    const auto f = detail::split_fields(text);
    if (f.size() != 5)
      throw ParseError("expected 5 fields, got " + std::to_string(f.size()), row,
                       std::min<std::size_t>(f.size(), 5) + 1);
    rows.push_back({detail::parse_int(f[0], row, 1),
                    static_cast<int>(detail::parse_int(f[1], row, 2)),
                    detail::parse_double(f[2], row, 3), std::string(f[3]),
                    static_cast<std::size_t>(detail::parse_int(f[4], row, 5))});
  }
  return rows;
}

inline void write_reliability(std::ostream& out,
                              std::span<const ReliabilityBin> bins) {
  out << "bin_lo,bin_hi,count,mean_confidence,empirical_accuracy,residual\n";
  for (const auto& b : bins)
    out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count
        << ',' << format_double(b.mean_confidence) << ','
        << format_double(b.empirical_accuracy) << ','
        << format_double(b.residual()) << '\n';
}

// Whole-file helpers.
inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "' for reading");
  return in;
}

inline nlohmann::json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Peeks at a header to tell trial files from score files.
inline bool is_trial_file(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  return line.rfind("sample_id,trial_id,", 0) == 0;
}

}  // namespace ratiocal::io
