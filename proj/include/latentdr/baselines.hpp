#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentdr/error.hpp"
#include "latentdr/panel.hpp"
#include "latentdr/stats.hpp"

namespace latentdr {

struct TwfeEstimate {
  double tau = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

enum class TwfeSe { robust, iid };

/// Inclusive 1-based period window.
struct PeriodRange {
  std::size_t first = 1;
  std::size_t last = 0;
};

/// Two-way fixed effects regression Y_it = a_i + l_t + tau w_it + e_it over
/// a period window, solved by double demeaning (exact on a balanced panel).
/// `robust` gives HC1 standard errors; `iid` the homoskedastic ones.
inline TwfeEstimate twfe(const Panel& panel, PeriodRange range, double alpha = 0.05, TwfeSe se_kind = TwfeSe::robust) {
  if (range.first < 1 || range.last > panel.periods() || range.first > range.last) {
    throw ConfigError(Stage::baseline, "TWFE period range is outside 1..T");
  }
  const std::size_t n = panel.units();
  const std::size_t tn = range.last - range.first + 1;

  std::vector<double> ybar_i(n, 0.0), wbar_i(n, 0.0), ybar_t(tn, 0.0), wbar_t(tn, 0.0);
  double ybar = 0.0, wbar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < tn; ++c) {
      const double y = panel.y(i, range.first + c);
      const double w = panel.treated(i, range.first + c) ? 1.0 : 0.0;
      ybar_i[i] += y;
      wbar_i[i] += w;
      ybar_t[c] += y;
      wbar_t[c] += w;
      ybar += y;
      wbar += w;
    }
  }
  for (auto& v : ybar_i) v /= static_cast<double>(tn);
  for (auto& v : wbar_i) v /= static_cast<double>(tn);
  for (auto& v : ybar_t) v /= static_cast<double>(n);
  for (auto& v : wbar_t) v /= static_cast<double>(n);
  const double nobs = static_cast<double>(n * tn);
  ybar /= nobs;
  wbar /= nobs;

  std::vector<double> yd(n * tn), wd(n * tn);
  double sww = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < tn; ++c) {
      const std::size_t k = i * tn + c;
      yd[k] = panel.y(i, range.first + c) - ybar_i[i] - ybar_t[c] + ybar;
      wd[k] = (panel.treated(i, range.first + c) ? 1.0 : 0.0) - wbar_i[i] - wbar_t[c] + wbar;
      sww += wd[k] * wd[k];
      swy += wd[k] * yd[k];
    }
  }
  if (!(sww > 1e-12 * nobs)) {
    throw ComputeError(Stage::baseline, "TWFE design is singular: treatment has no variation net of unit and period effects");
  }

  TwfeEstimate est;
  est.tau = swy / sww;
  const double params = static_cast<double>(n + tn);  // unit effects, period effects (one dropped), tau
  const double dof = nobs - params;
  if (!(dof > 0.0)) throw ComputeError(Stage::baseline, "TWFE has no residual degrees of freedom");
  double see = 0.0, swwee = 0.0;
  for (std::size_t k = 0; k < yd.size(); ++k) {
    const double e = yd[k] - est.tau * wd[k];
    see += e * e;
    swwee += wd[k] * wd[k] * e * e;
  }
  const double var = se_kind == TwfeSe::robust ? nobs / dof * swwee / (sww * sww) : see / dof / sww;
  est.se = std::sqrt(var);
  const double half = critical_value(alpha) * est.se;
  est.ci_low = est.tau - half;
  est.ci_high = est.tau + half;
  return est;
}

inline TwfeEstimate twfe(const Panel& panel, double alpha = 0.05, TwfeSe se_kind = TwfeSe::robust) {
  return twfe(panel, PeriodRange{1, panel.periods()}, alpha, se_kind);
}

}  // namespace latentdr
