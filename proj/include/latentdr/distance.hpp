#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "latentdr/crossfit.hpp"
#include "latentdr/error.hpp"
#include "latentdr/matrix.hpp"
#include "latentdr/panel.hpp"

namespace latentdr {

/// Distances from each target unit (row) to each permitted donor (column).
/// Pairs the fold plan forbids are flagged as not computed and have no value.
class DistanceMatrix {
 public:
  DistanceMatrix(std::size_t n, FoldPlan plan, std::size_t t0)
      : values_(n, n, 0.0), computed_(n, n, 0), plan_(std::move(plan)), t0_(t0) {}

  std::size_t units() const noexcept { return values_.rows(); }
  const FoldPlan& plan() const noexcept { return plan_; }
  std::size_t t0() const noexcept { return t0_; }

  bool computed(std::size_t i, std::size_t j) const { return computed_(i, j) != 0; }

  double at(std::size_t i, std::size_t j) const {
    if (!computed(i, j)) {
      throw ComputeError(Stage::distance, "distance (" + std::to_string(i) + "," + std::to_string(j) +
                                              ") was not computed under this fold plan");
    }
    return values_(i, j);
  }

  /// Raw row access for hot loops; entries where computed() is false are meaningless.
  std::span<const double> raw_row(std::size_t i) const { return values_.row(i); }
  std::span<const std::uint8_t> mask_row(std::size_t i) const { return computed_.row(i); }

  void set(std::size_t i, std::size_t j, double d) {
    values_(i, j) = d;
    computed_(i, j) = 1;
  }

 private:
  Matrix<double> values_;
  Matrix<std::uint8_t> computed_;
  FoldPlan plan_;
  std::size_t t0_;
};

/// G(k,i) = <Y_k, Y_i> / t0 over the pre-treatment window. Each entry is one
/// fixed-order dot product, so identical histories give identical columns and
/// G is symmetric to the bit.
inline Matrix<double> gram(const Panel& panel) {
  const std::size_t n = panel.units();
  const double scale = 1.0 / static_cast<double>(panel.t0());
  Matrix<double> g(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto ya = panel.pre_history(a);
    for (std::size_t b = a; b < n; ++b) {
      const auto yb = panel.pre_history(b);
      double s = 0.0;
      for (std::size_t t = 0; t < ya.size(); ++t) s += ya[t] * yb[t];
      g(a, b) = g(b, a) = s * scale;
    }
  }
  return g;
}

namespace detail {

inline void check_plan(const FoldPlan& plan, std::size_t n) {
  if (plan.units() != n) {
    throw ShapeError(Stage::distance, "fold plan covers " + std::to_string(plan.units()) +
                                          " units but the panel has " + std::to_string(n));
  }
}

}  // namespace detail

/// Pseudo-distance over pre-treatment histories:
///   d(i,j) = max_{l in D(i), l != i,j} |G(l,i) - G(l,j)|
/// for every target i and donor j in D(i), where D(i) is the donor set of the
/// plan (all other units when there is no cross-fitting).
inline DistanceMatrix pseudo_distances(const Panel& panel, const FoldPlan& plan) {
  const std::size_t n = panel.units();
  detail::check_plan(plan, n);
  DistanceMatrix out(n, plan, panel.t0());
  const Matrix<double> g = gram(panel);

  std::vector<std::size_t> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    pool.clear();
    for (std::size_t l = 0; l < n; ++l) {
      if (plan.is_donor(i, l)) pool.push_back(l);
    }
    if (pool.size() < 3) {
      throw ComputeError(Stage::distance, "donor set of unit " + std::to_string(i) + " has " +
                                              std::to_string(pool.size()) + " units; at least 3 are required");
    }
    // G is symmetric, so column i is row i.
    const auto gi = g.row(i);
    for (std::size_t j : pool) {
      const auto gj = g.row(j);
      double best = 0.0;
      for (std::size_t l : pool) {
        if (l == j) continue;  // l == i never occurs: i is not its own donor
        const double diff = std::abs(gi[l] - gj[l]);
        if (diff > best) best = diff;
      }
      out.set(i, j, best);
    }
  }
  return out;
}

/// Oracle distance ||alpha_i - alpha_j||_2 between known latent factors.
inline DistanceMatrix oracle_l2_distances(const std::vector<std::vector<double>>& alphas, const FoldPlan& plan) {
  const std::size_t n = alphas.size();
  detail::check_plan(plan, n);
  const std::size_t dim = n ? alphas.front().size() : 0;
  for (const auto& a : alphas) {
    if (a.size() != dim) throw ShapeError(Stage::distance, "latent factor vectors differ in dimension");
  }
  DistanceMatrix out(n, plan, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!plan.is_donor(i, j)) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = alphas[i][c] - alphas[j][c];
        s += d * d;
      }
      out.set(i, j, std::sqrt(s));
    }
  }
  return out;
}

/// Scalar-factor convenience overload.
inline DistanceMatrix oracle_l2_distances(std::span<const double> alphas, const FoldPlan& plan) {
  std::vector<std::vector<double>> v;
  v.reserve(alphas.size());
  for (double a : alphas) v.push_back({a});
  return oracle_l2_distances(v, plan);
}

/// Debug dump: square CSV with unit labels; forbidden pairs are empty cells.
inline void dump_distances(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError(Stage::report, "cannot write " + path);
  out << "unit";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < dist.units(); ++i) {
    out << labels[i];
    for (std::size_t j = 0; j < dist.units(); ++j) {
      out << ',';
      if (dist.computed(i, j)) out << detail::format_double(dist.at(i, j));
    }
    out << '\n';
  }
}

}  // namespace latentdr
