#pragma once

#include <optional>
#include <vector>

#include "latentdr/distance.hpp"
#include "latentdr/error.hpp"
#include "latentdr/kernel.hpp"
#include "latentdr/panel.hpp"

namespace latentdr {

/// Kernel-smoothed nuisances for one post period at one bandwidth. An empty
/// optional marks a zero kernel denominator; such entries carry no value.
struct ImputationSet {
  std::vector<std::optional<double>> mu0;   // control-outcome mean
  std::vector<std::optional<double>> mu1;   // treated-outcome mean
  std::vector<std::optional<double>> phat;  // treatment share, after clipping
  std::vector<std::optional<double>> phat_raw;
  double h = 0.0;
  double eps_trim = 0.0;
  std::size_t n_clipped = 0;

  std::size_t units() const noexcept { return mu0.size(); }
};

struct ImputeOptions {
  /// Let each unit act as its own donor at distance zero. Only meaningful for
  /// the no-cross-fitting plan, where it reproduces the plain full-sample
  /// smoother; every other plan already excludes i from its own donor set.
  bool include_self = false;
};

/// Nadaraya-Watson imputation over each unit's permitted donors:
/// mu0 from donor controls, mu1 from donor treated, phat from all donors.
inline ImputationSet impute(const DistanceMatrix& dist, const PeriodSlice& slice, const KernelSpec& spec,
                            double h, double eps_trim, ImputeOptions opts = {}) {
  const std::size_t n = slice.units();
  if (dist.units() != n) {
    throw ShapeError(Stage::imputation, "distance matrix and period slice disagree on unit count");
  }
  if (!(h > 0.0)) throw ConfigError(Stage::imputation, "bandwidth must be positive");
  if (!(eps_trim >= 0.0 && eps_trim < 0.5)) {
    throw ConfigError(Stage::imputation, "trimming level must lie in [0, 0.5)");
  }

  ImputationSet out;
  out.mu0.resize(n);
  out.mu1.resize(n);
  out.phat.resize(n);
  out.phat_raw.resize(n);
  out.h = h;
  out.eps_trim = eps_trim;

  const double reach = h * spec.support_radius;
  const double p_max = 1.0 - eps_trim;
  const double k0 = weight(spec, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double num0 = 0.0, den0 = 0.0, num1 = 0.0, den1 = 0.0;
    const auto d = dist.raw_row(i);
    const auto mask = dist.mask_row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j] || d[j] > reach) continue;
      const double k = weight(spec, d[j] / h);
      if (slice.w[j]) {
        num1 += k * slice.y[j];
        den1 += k;
      } else {
        num0 += k * slice.y[j];
        den0 += k;
      }
    }
    if (opts.include_self && !mask[i]) {
      if (slice.w[i]) {
        num1 += k0 * slice.y[i];
        den1 += k0;
      } else {
        num0 += k0 * slice.y[i];
        den0 += k0;
      }
    }
    if (den0 > 0.0) out.mu0[i] = num0 / den0;
    if (den1 > 0.0) out.mu1[i] = num1 / den1;
    const double den = den0 + den1;
    if (den > 0.0) {
      const double p = den1 / den;
      out.phat_raw[i] = p;
      if (p > p_max) {
        out.phat[i] = p_max;
        ++out.n_clipped;
      } else {
        out.phat[i] = p;
      }
    }
  }
  return out;
}

}  // namespace latentdr
