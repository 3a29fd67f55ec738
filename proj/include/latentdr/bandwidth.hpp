#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "latentdr/error.hpp"
#include "latentdr/impute.hpp"

namespace latentdr {

/// Strictly increasing positive bandwidth candidates.
class BandwidthGrid {
 public:
  explicit BandwidthGrid(std::vector<double> candidates) : candidates_(std::move(candidates)) {
    if (candidates_.empty()) throw ConfigError(Stage::bandwidth, "bandwidth grid is empty");
    for (std::size_t c = 0; c < candidates_.size(); ++c) {
      if (!(candidates_[c] > 0.0) || !std::isfinite(candidates_[c])) {
        throw ConfigError(Stage::bandwidth, "bandwidth candidates must be positive and finite");
      }
      if (c > 0 && !(candidates_[c] > candidates_[c - 1])) {
        throw ConfigError(Stage::bandwidth, "bandwidth candidates must be strictly increasing");
      }
    }
  }

  /// `count` points spaced evenly in log(h) from lo to hi inclusive.
  static BandwidthGrid geometric(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0) || !(hi > lo)) throw ConfigError(Stage::bandwidth, "grid needs 0 < lo < hi");
    if (count < 1) throw ConfigError(Stage::bandwidth, "grid needs at least one point");
    if (count == 1) return BandwidthGrid({lo});
    std::vector<double> v(count);
    const double step = std::log(hi / lo) / static_cast<double>(count - 1);
    for (std::size_t c = 0; c < count; ++c) v[c] = lo * std::exp(step * static_cast<double>(c));
    v.back() = hi;
    return BandwidthGrid(std::move(v));
  }

  /// 30 geometric points on [0.05, 5].
  static BandwidthGrid standard() { return geometric(0.05, 5.0, 30); }

  const std::vector<double>& candidates() const noexcept { return candidates_; }
  std::size_t size() const noexcept { return candidates_.size(); }
  double operator[](std::size_t c) const { return candidates_[c]; }

 private:
  std::vector<double> candidates_;
};

/// Least-squares cross-validation error: mean over all units of the squared
/// residual against the unit's own-group imputation (mu1 for treated, mu0 for
/// controls). nullopt when any own-group imputation or any phat is infeasible.
inline std::optional<double> cv_error(const ImputationSet& imp, const PeriodSlice& slice) {
  const std::size_t n = slice.units();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& fit = slice.w[i] ? imp.mu1[i] : imp.mu0[i];
    if (!fit || !imp.phat[i]) return std::nullopt;
    const double r = slice.y[i] - *fit;
    sum += r * r;
  }
  return sum / static_cast<double>(n);
}

inline std::optional<double> cv_error(const DistanceMatrix& dist, const PeriodSlice& slice, const KernelSpec& spec,
                                      double h, double eps_trim = 0.01) {
  return cv_error(impute(dist, slice, spec, h, eps_trim), slice);
}

struct CvReport {
  std::vector<double> candidates;
  std::vector<std::optional<double>> errors;
  std::size_t selected = 0;
  double h_cv = 0.0;
  std::vector<std::size_t> skipped;  // infeasible candidates
  std::string rule = "argmin CV(h) over feasible candidates, ties to smallest h";

  /// Feasible candidates ordered by (CV error, h): the selection and its fallbacks.
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < errors.size(); ++c) {
      if (errors[c]) idx.push_back(c);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return *errors[a] < *errors[b]; });
    return idx;
  }
};

inline CvReport select(const BandwidthGrid& grid, const std::vector<std::optional<double>>& cv) {
  if (cv.size() != grid.size()) {
    throw ShapeError(Stage::bandwidth, "CV error count does not match the bandwidth grid");
  }
  CvReport rep;
  rep.candidates = grid.candidates();
  rep.errors = cv;
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < cv.size(); ++c) {
    if (!cv[c] || !std::isfinite(*cv[c])) {
      rep.errors[c].reset();
      rep.skipped.push_back(c);
      continue;
    }
    if (!best || *cv[c] < *cv[*best]) best = c;  // strict: ties keep the smaller h
  }
  if (!best) {
    throw ComputeError(Stage::bandwidth,
                       "every bandwidth candidate is infeasible (some unit has no donor within reach); "
                       "widen the bandwidth grid");
  }
  rep.selected = *best;
  rep.h_cv = grid[*best];
  return rep;
}

}  // namespace latentdr
