#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "latentdr/error.hpp"
#include "latentdr/matrix.hpp"

namespace latentdr {

// Units are addressed by zero-based position. Periods are numbered 1..T, so the
// pre-treatment window is periods 1..t0 (columns 0..t0-1) and the post periods
// are t0+1..T.

/// Balanced N x T panel of outcomes and absorbing binary treatment. Shape is
/// checked on construction; the treatment-timing invariants are checked by
/// validate() so that inadmissible files can still be inspected.
class Panel {
 public:
  Panel(Matrix<double> outcomes, Matrix<std::uint8_t> treatment, std::size_t t0,
        std::vector<std::string> unit_labels = {}, std::vector<std::string> period_labels = {})
      : outcomes_(std::move(outcomes)),
        treatment_(std::move(treatment)),
        t0_(t0),
        unit_labels_(std::move(unit_labels)),
        period_labels_(std::move(period_labels)) {
    if (outcomes_.rows() != treatment_.rows() || outcomes_.cols() != treatment_.cols()) {
      throw ShapeError(Stage::input, "outcomes are " + dims(outcomes_) + " but treatment is " +
                                         dims(treatment_));
    }
    if (outcomes_.rows() == 0 || outcomes_.cols() == 0) {
      throw ShapeError(Stage::input, "panel has no units or no periods");
    }
    if (t0_ < 1 || t0_ >= outcomes_.cols()) {
      throw ShapeError(Stage::input, "t0 must satisfy 1 <= t0 < T (t0=" + std::to_string(t0_) +
                                         ", T=" + std::to_string(outcomes_.cols()) + ")");
    }
    if (unit_labels_.empty()) {
      for (std::size_t i = 0; i < units(); ++i) unit_labels_.push_back(std::to_string(i + 1));
    }
    if (period_labels_.empty()) {
      for (std::size_t t = 1; t <= periods(); ++t) period_labels_.push_back("p" + std::to_string(t));
    }
    if (unit_labels_.size() != units() || period_labels_.size() != periods()) {
      throw ShapeError(Stage::input, "label count does not match panel dimensions");
    }
  }

  std::size_t units() const noexcept { return outcomes_.rows(); }
  std::size_t periods() const noexcept { return outcomes_.cols(); }
  std::size_t t0() const noexcept { return t0_; }

  const Matrix<double>& outcomes() const noexcept { return outcomes_; }
  const Matrix<std::uint8_t>& treatment() const noexcept { return treatment_; }
  const std::vector<std::string>& unit_labels() const noexcept { return unit_labels_; }
  const std::vector<std::string>& period_labels() const noexcept { return period_labels_; }

  /// Outcome at unit i, period t (1-based).
  double y(std::size_t i, std::size_t t) const { return outcomes_(i, t - 1); }
  bool treated(std::size_t i, std::size_t t) const { return treatment_(i, t - 1) != 0; }

  /// Pre-treatment history Y_{i,1:t0}.
  std::span<const double> pre_history(std::size_t i) const { return outcomes_.row(i).first(t0_); }

 private:
  template <typename T>
  static std::string dims(const Matrix<T>& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  Matrix<double> outcomes_;
  Matrix<std::uint8_t> treatment_;
  std::size_t t0_;
  std::vector<std::string> unit_labels_;
  std::vector<std::string> period_labels_;
};

struct Violation {
  enum class Kind { non_monotone_treatment, treated_before_t0, non_finite_outcome };

  Kind kind;
  std::size_t unit;    // zero-based position
  std::size_t period;  // 1-based

  std::string message() const {
    switch (kind) {
      case Kind::non_monotone_treatment:
        return "non-monotone treatment at unit " + std::to_string(unit) + " (switches off at period " +
               std::to_string(period) + ")";
      case Kind::treated_before_t0:
        return "treatment before T0+1 at unit " + std::to_string(unit) + " (period " +
               std::to_string(period) + ")";
      case Kind::non_finite_outcome:
        return "non-finite outcome at unit " + std::to_string(unit) + ", period " +
               std::to_string(period);
    }
    return {};
  }
};

/// Every violated structural invariant, with coordinates. Empty means admissible.
inline std::vector<Violation> validate(const Panel& panel) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < panel.units(); ++i) {
    for (std::size_t t = 1; t <= panel.periods(); ++t) {
      if (!std::isfinite(panel.y(i, t))) out.push_back({Violation::Kind::non_finite_outcome, i, t});
      if (t <= panel.t0() && panel.treated(i, t)) {
        out.push_back({Violation::Kind::treated_before_t0, i, t});
      }
      if (t > 1 && panel.treated(i, t - 1) && !panel.treated(i, t)) {
        out.push_back({Violation::Kind::non_monotone_treatment, i, t});
      }
    }
  }
  return out;
}

inline void require_admissible(const Panel& panel) {
  auto v = validate(panel);
  if (v.empty()) return;
  std::string msg = std::to_string(v.size()) + " panel violation(s): " + v.front().message();
  throw ValidationError(Stage::validation, msg);
}

/// Cross-section of the panel at one post-treatment period.
struct PeriodSlice {
  std::size_t t = 0;
  std::vector<double> y;
  std::vector<std::uint8_t> w;
  std::size_t n1 = 0;

  std::size_t units() const noexcept { return y.size(); }
};

/// Build the slice for post period t (t0 < t <= T). Both treatment groups must be nonempty.
inline PeriodSlice slice_period(const Panel& panel, std::size_t t) {
  if (t <= panel.t0() || t > panel.periods()) {
    throw ConfigError(Stage::input, "period " + std::to_string(t) + " is outside the post-treatment range " +
                                        std::to_string(panel.t0() + 1) + ".." +
                                        std::to_string(panel.periods()));
  }
  PeriodSlice s;
  s.t = t;
  s.y.resize(panel.units());
  s.w.resize(panel.units());
  for (std::size_t i = 0; i < panel.units(); ++i) {
    s.y[i] = panel.y(i, t);
    s.w[i] = panel.treated(i, t) ? 1 : 0;
    s.n1 += s.w[i];
  }
  if (s.n1 == 0 || s.n1 == panel.units()) {
    throw ValidationError(Stage::input, "degenerate treatment composition at period " + std::to_string(t) +
                                            ": " + std::to_string(s.n1) + " of " +
                                            std::to_string(panel.units()) + " units treated");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Wide CSV I/O: header `unit,p1,...,pT`, one row per unit.

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

struct WideTable {
  std::vector<std::string> header;  // period labels (without the unit column)
  std::vector<std::string> units;
  std::vector<std::vector<std::string>> cells;
};

inline WideTable read_wide_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(Stage::input, "cannot open " + path);
  WideTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      if (cells.size() < 2) throw ParseError(Stage::input, path + ": header needs a unit column and at least one period");
      for (std::size_t c = 1; c < cells.size(); ++c) table.header.emplace_back(cells[c]);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size() + 1) {
      throw ParseError(Stage::input, path + ": ragged row at line " + std::to_string(line_no) + " (" +
                                         std::to_string(cells.size()) + " cells, expected " +
                                         std::to_string(table.header.size() + 1) + ")");
    }
    table.units.emplace_back(cells[0]);
    std::vector<std::string> row;
    for (std::size_t c = 1; c < cells.size(); ++c) row.emplace_back(cells[c]);
    table.cells.push_back(std::move(row));
  }
  if (!have_header) throw ParseError(Stage::input, path + ": empty file");
  if (table.units.empty()) throw ParseError(Stage::input, path + ": no unit rows");
  return table;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::string format_double(double v, int significant = 17) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, significant);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parse the two wide CSV files without checking treatment-timing invariants.
inline Panel read_csv(const std::string& outcomes_path, const std::string& treatment_path, std::size_t t0) {
  auto yt = detail::read_wide_csv(outcomes_path);
  auto wt = detail::read_wide_csv(treatment_path);
  if (yt.units.size() != wt.units.size() || yt.header.size() != wt.header.size()) {
    throw ShapeError(Stage::input, "outcomes are " + std::to_string(yt.units.size()) + "x" +
                                       std::to_string(yt.header.size()) + " but treatment is " +
                                       std::to_string(wt.units.size()) + "x" +
                                       std::to_string(wt.header.size()));
  }
  const std::size_t n = yt.units.size();
  const std::size_t periods = yt.header.size();
  if (t0 >= periods) {
    throw ShapeError(Stage::input, "t0=" + std::to_string(t0) + " must be below T=" + std::to_string(periods));
  }
  Matrix<double> y(n, periods);
  Matrix<std::uint8_t> w(n, periods);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < periods; ++c) {
      // Data rows start at file line 2; columns are reported 1-based with the unit column as 1.
      const std::string where = "row " + std::to_string(i + 2) + ", column " + std::to_string(c + 2);
      if (!detail::parse_double(yt.cells[i][c], y(i, c))) {
        throw ParseError(Stage::input, outcomes_path + ": non-numeric outcome '" + yt.cells[i][c] + "' at " + where);
      }
      const auto& cell = wt.cells[i][c];
      if (cell == "0") {
        w(i, c) = 0;
      } else if (cell == "1") {
        w(i, c) = 1;
      } else {
        throw ParseError(Stage::input, treatment_path + ": treatment cell '" + cell + "' at " + where +
                                           " is not 0 or 1");
      }
    }
  }
  return Panel(std::move(y), std::move(w), t0, std::move(yt.units), std::move(yt.header));
}

/// read_csv followed by validation; any violation is raised as ValidationError.
inline Panel load_csv(const std::string& outcomes_path, const std::string& treatment_path, std::size_t t0) {
  Panel p = read_csv(outcomes_path, treatment_path, t0);
  require_admissible(p);
  return p;
}

/// Write both wide CSV files. Outcomes use 17 significant digits so load_csv round-trips exactly.
inline void write_csv(const Panel& panel, const std::string& outcomes_path, const std::string& treatment_path) {
  std::ofstream yo(outcomes_path), wo(treatment_path);
  if (!yo || !wo) throw ConfigError(Stage::report, "cannot write panel csv");
  yo << "unit";
  wo << "unit";
  for (const auto& p : panel.period_labels()) {
    yo << ',' << p;
    wo << ',' << p;
  }
  yo << '\n';
  wo << '\n';
  for (std::size_t i = 0; i < panel.units(); ++i) {
    yo << panel.unit_labels()[i];
    wo << panel.unit_labels()[i];
    for (std::size_t t = 1; t <= panel.periods(); ++t) {
      yo << ',' << detail::format_double(panel.y(i, t));
      wo << ',' << (panel.treated(i, t) ? '1' : '0');
    }
    yo << '\n';
    wo << '\n';
  }
}

}  // namespace latentdr
