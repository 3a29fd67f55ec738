#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentdr/bandwidth.hpp"
#include "latentdr/crossfit.hpp"
#include "latentdr/distance.hpp"
#include "latentdr/error.hpp"
#include "latentdr/impute.hpp"
#include "latentdr/kernel.hpp"
#include "latentdr/panel.hpp"
#include "latentdr/stats.hpp"

namespace latentdr {

struct AttDiagnostics {
  std::size_t n_clipped = 0;
  std::vector<double> skipped_bandwidths;  // CV-infeasible candidates
  std::optional<double> cv_winner;         // set when the CV winner was replaced by a feasible fallback
  std::string fold_plan = "none";
  std::uint64_t fold_seed = 0;
};

struct AttEstimate {
  double att = 0.0;
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
  double h_used = 0.0;
  std::size_t n = 0;
  std::size_t n1 = 0;
  AttDiagnostics diagnostics;

  /// Standard error of the estimate, sqrt(V/N).
  double se() const { return std::sqrt(variance / static_cast<double>(n)); }

  friend bool operator==(const AttEstimate& a, const AttEstimate& b) {
    return a.att == b.att && a.variance == b.variance && a.ci_low == b.ci_low && a.ci_high == b.ci_high &&
           a.alpha == b.alpha && a.h_used == b.h_used && a.n == b.n && a.n1 == b.n1 &&
           a.diagnostics.n_clipped == b.diagnostics.n_clipped &&
           a.diagnostics.skipped_bandwidths == b.diagnostics.skipped_bandwidths &&
           a.diagnostics.cv_winner == b.diagnostics.cv_winner && a.diagnostics.fold_plan == b.diagnostics.fold_plan &&
           a.diagnostics.fold_seed == b.diagnostics.fold_seed;
  }
};

/// Per-unit doubly robust scores. psi is the ATT score,
///   psi_i = Y_i w_i - [(1-w_i) Y_i p_i + (w_i - p_i) mu0_i] / (1 - p_i),
/// and phi_i = Y_i w_i - psi_i is the matching score for E[Y(0) | treated].
struct ScoreVector {
  std::vector<double> psi;
  std::vector<double> phi;
};

inline ScoreVector scores(const PeriodSlice& slice, const ImputationSet& imp) {
  const std::size_t n = slice.units();
  if (imp.units() != n) throw ShapeError(Stage::estimation, "imputations and slice disagree on unit count");
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < n; ++i) {
    if (!imp.mu0[i] || !imp.phat[i]) missing.push_back(i);
  }
  if (!missing.empty()) {
    std::string units;
    for (std::size_t c = 0; c < missing.size() && c < 10; ++c) units += (c ? "," : "") + std::to_string(missing[c]);
    if (missing.size() > 10) units += ",...";
    throw ComputeError(Stage::estimation, std::to_string(missing.size()) +
                                              " unit(s) lack a feasible mu0 or phat: " + units);
  }
  ScoreVector s;
  s.psi.resize(n);
  s.phi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = *imp.phat[i];
    if (!(p < 1.0)) {
      throw ComputeError(Stage::estimation, "propensity of unit " + std::to_string(i) +
                                                " is 1 after trimming; the score is undefined");
    }
    const double w = slice.w[i] ? 1.0 : 0.0;
    const double y = slice.y[i];
    s.phi[i] = ((1.0 - w) * y * p + (w - p) * *imp.mu0[i]) / (1.0 - p);
    s.psi[i] = y * w - s.phi[i];
  }
  return s;
}

namespace detail {

/// Mean of a score over N1 and its variance N/N1^2 * sum (s_i - N1/N * mean)^2.
inline std::pair<double, double> score_moments(const std::vector<double>& score, std::size_t n1) {
  const double n = static_cast<double>(score.size());
  const double m = static_cast<double>(n1);
  double sum = 0.0;
  for (double v : score) sum += v;
  const double est = sum / m;
  const double centre = m / n * est;
  double ss = 0.0;
  for (double v : score) ss += (v - centre) * (v - centre);
  return {est, n / (m * m) * ss};
}

}  // namespace detail

/// Doubly robust ATT with variance and normal confidence interval at level 1-alpha.
inline AttEstimate dr_att(const PeriodSlice& slice, const ImputationSet& imp, double alpha = 0.05) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(Stage::estimation, "alpha must lie in (0, 1)");
  if (slice.n1 == 0) throw ComputeError(Stage::estimation, "no treated units");
  const ScoreVector s = scores(slice, imp);
  auto [att, var] = detail::score_moments(s.psi, slice.n1);
  AttEstimate est;
  est.att = att;
  est.variance = var;
  est.alpha = alpha;
  est.h_used = imp.h;
  est.n = slice.units();
  est.n1 = slice.n1;
  est.diagnostics.n_clipped = imp.n_clipped;
  const double half = critical_value(alpha) * est.se();
  est.ci_low = att - half;
  est.ci_high = att + half;
  return est;
}

/// Counterfactual mean E[Y(0) | treated] with its own interval.
struct CounterfactualEstimate {
  double mean = 0.0;
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

inline double treated_mean(const PeriodSlice& slice) {
  if (slice.n1 == 0) throw ComputeError(Stage::estimation, "no treated units");
  double s = 0.0;
  for (std::size_t i = 0; i < slice.units(); ++i) {
    if (slice.w[i]) s += slice.y[i];
  }
  return s / static_cast<double>(slice.n1);
}

/// Point estimate: treated-group mean outcome minus the ATT.
inline double counterfactual_mean(const PeriodSlice& slice, const AttEstimate& est) {
  return treated_mean(slice) - est.att;
}

enum class CounterfactualVariance {
  ratio,   // N/N1^2 * sum (phi_i - w_i * CM)^2, the influence function of sum(phi)/N1
  score,   // N/N1^2 * sum (phi_i - N1/N * CM)^2, the ATT formula applied to phi
  shared,  // reuse the ATT variance, shifting the ATT interval
};

/// Counterfactual mean with interval. The point estimate always equals
/// counterfactual_mean(); the variance source is selectable.
inline CounterfactualEstimate dr_counterfactual_mean(const PeriodSlice& slice, const ImputationSet& imp,
                                                     const AttEstimate& est,
                                                     CounterfactualVariance mode = CounterfactualVariance::ratio) {
  CounterfactualEstimate cm;
  cm.mean = counterfactual_mean(slice, est);
  if (mode == CounterfactualVariance::shared) {
    cm.variance = est.variance;
  } else if (mode == CounterfactualVariance::score) {
    cm.variance = detail::score_moments(scores(slice, imp).phi, slice.n1).second;
  } else {
    const ScoreVector s = scores(slice, imp);
    const double n = static_cast<double>(slice.units()), m = static_cast<double>(slice.n1);
    double ss = 0.0;
    for (std::size_t i = 0; i < slice.units(); ++i) {
      const double r = s.phi[i] - (slice.w[i] ? cm.mean : 0.0);
      ss += r * r;
    }
    cm.variance = n / (m * m) * ss;
  }
  const double half = critical_value(est.alpha) * std::sqrt(cm.variance / static_cast<double>(slice.units()));
  cm.ci_low = cm.mean - half;
  cm.ci_high = cm.mean + half;
  return cm;
}

/// Replace estimated propensities with known ones (clipped like estimates).
inline void override_propensity(ImputationSet& imp, const std::vector<double>& p) {
  if (p.size() != imp.units()) throw ShapeError(Stage::imputation, "true propensity vector has the wrong length");
  const double p_max = 1.0 - imp.eps_trim;
  imp.n_clipped = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw ConfigError(Stage::imputation, "true propensity outside [0, 1]");
    imp.phat_raw[i] = p[i];
    if (p[i] > p_max) {
      imp.phat[i] = p_max;
      ++imp.n_clipped;
    } else {
      imp.phat[i] = p[i];
    }
  }
}

enum class DistanceSource { pseudo, oracle_l2 };

struct EstimatorConfig {
  FoldSpec folds{FoldMode::kfold, 2};
  KernelSpec kernel{};
  BandwidthGrid grid = BandwidthGrid::standard();
  std::optional<double> fixed_bandwidth;
  double alpha = 0.05;
  double eps_trim = 0.01;
  std::uint64_t seed = 0;
  DistanceSource distance_source = DistanceSource::pseudo;
  std::vector<std::vector<double>> oracle_alphas;  // used with DistanceSource::oracle_l2
  std::optional<std::vector<double>> true_propensity;
  /// Without cross-fitting, let each unit be its own donor in the final
  /// imputations. Bandwidth selection still leaves the unit out.
  bool self_donor_without_crossfit = false;
};

/// Everything produced for one period: the estimate plus the intermediate
/// objects it was built from.
struct PeriodFit {
  AttEstimate estimate;
  PeriodSlice slice;
  FoldPlan plan;
  ImputationSet imputation;
  std::optional<CvReport> cv;
};

namespace detail {

inline bool estimation_feasible(const ImputationSet& imp) {
  for (std::size_t i = 0; i < imp.units(); ++i) {
    if (!imp.mu0[i] || !imp.phat[i] || !(*imp.phat[i] < 1.0)) return false;
  }
  return true;
}

}  // namespace detail

/// Full cross-fitted pipeline for one post period: fold partition, distances,
/// per-bandwidth imputation, CV selection, doubly robust estimate and interval.
inline PeriodFit estimate_period_detailed(const Panel& panel, std::size_t t, const EstimatorConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError(Stage::config, "alpha must lie in (0, 1)");
  if (!(cfg.eps_trim >= 0.0 && cfg.eps_trim < 0.5)) throw ConfigError(Stage::config, "trim must lie in [0, 0.5)");
  require_admissible(panel);

  PeriodFit fit;
  fit.slice = slice_period(panel, t);
  const std::size_t n = panel.units();
  fit.plan = make_plan(cfg.folds, n, cfg.seed);

  const DistanceMatrix dist = cfg.distance_source == DistanceSource::pseudo
                                  ? pseudo_distances(panel, fit.plan)
                                  : oracle_l2_distances(cfg.oracle_alphas, fit.plan);

  const bool self_donor = cfg.self_donor_without_crossfit && fit.plan.mode == FoldMode::none;
  auto final_imputation = [&](double h, const ImputationSet* cv_imp) {
    ImputationSet imp = (self_donor || !cv_imp) ? impute(dist, fit.slice, cfg.kernel, h, cfg.eps_trim,
                                                         {.include_self = self_donor})
                                                : *cv_imp;
    if (cfg.true_propensity) override_propensity(imp, *cfg.true_propensity);
    return imp;
  };

  AttDiagnostics diag;
  diag.fold_plan = fit.plan.describe();
  diag.fold_seed = fit.plan.seed;

  if (cfg.fixed_bandwidth) {
    fit.imputation = final_imputation(*cfg.fixed_bandwidth, nullptr);
    if (!detail::estimation_feasible(fit.imputation)) {
      throw ComputeError(Stage::bandwidth, "fixed bandwidth " + detail::format_double(*cfg.fixed_bandwidth, 6) +
                                               " leaves some unit without a feasible mu0 or phat");
    }
  } else {
    std::vector<ImputationSet> per_h;
    std::vector<std::optional<double>> errors;
    per_h.reserve(cfg.grid.size());
    for (double h : cfg.grid.candidates()) {
      ImputationSet imp = impute(dist, fit.slice, cfg.kernel, h, cfg.eps_trim);
      if (cfg.true_propensity) override_propensity(imp, *cfg.true_propensity);
      errors.push_back(cv_error(imp, fit.slice));
      per_h.push_back(std::move(imp));
    }
    CvReport rep = select(cfg.grid, errors);
    for (std::size_t c : rep.skipped) diag.skipped_bandwidths.push_back(cfg.grid[c]);
    bool found = false;
    for (std::size_t c : rep.ranking()) {
      ImputationSet imp = final_imputation(cfg.grid[c], &per_h[c]);
      if (!detail::estimation_feasible(imp)) continue;
      if (c != rep.selected) diag.cv_winner = rep.h_cv;
      fit.imputation = std::move(imp);
      found = true;
      break;
    }
    if (!found) {
      throw ComputeError(Stage::bandwidth,
                         "no bandwidth candidate gives every unit a feasible mu0 and phat; widen the grid");
    }
    fit.cv = std::move(rep);
  }

  fit.estimate = dr_att(fit.slice, fit.imputation, cfg.alpha);
  diag.n_clipped = fit.imputation.n_clipped;
  fit.estimate.diagnostics = std::move(diag);
  return fit;
}

inline AttEstimate estimate_period(const Panel& panel, std::size_t t, const EstimatorConfig& cfg) {
  return estimate_period_detailed(panel, t, cfg).estimate;
}

}  // namespace latentdr
