#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "latentdr/baselines.hpp"
#include "latentdr/error.hpp"
#include "latentdr/estimator.hpp"
#include "latentdr/panel.hpp"
#include "latentdr/rng.hpp"
#include "latentdr/stats.hpp"

namespace latentdr {

// ---------------------------------------------------------------------------
// Data-generating processes

enum class DgpModel {
  m1_additive = 1,
  m2_interactive = 2,
  m3_nonlinear_factor = 3,
  m4_gaussian_kernel = 4,
  m5_exponential_kernel = 5,
};

inline bool is_fixed_effects(DgpModel m) { return m == DgpModel::m1_additive || m == DgpModel::m2_interactive; }

inline DgpModel parse_model(int m) {
  if (m < 1 || m > 5) throw ConfigError(Stage::config, "model must be 1..5");
  return static_cast<DgpModel>(m);
}

/// What the harness scores each method against under models 3-5.
enum class EstimandConvention {
  conditional_mean,  // mean over treated of alpha + alpha^2
  realized,          // mean over treated of the realized Y(0), epsilon included
};

struct DgpSpec {
  DgpModel model = DgpModel::m1_additive;
  std::size_t n = 250;
  std::size_t t0 = 250;
  double tau = 0.5;            // treatment effect, models 1-2
  double noise_sd = 0.5;       // u_it
  double post_noise_sd = 1.0;  // epsilon_iT, models 3-5
  std::uint64_t seed = 0;
  EstimandConvention convention = EstimandConvention::conditional_mean;
  /// Re-seed only the treatment stream (for independence checks).
  std::uint64_t treatment_salt = 0;
};

struct SyntheticPanel {
  Panel panel;
  std::vector<double> alphas;
  std::vector<double> true_p;
  std::vector<double> mu0_post;  // E[Y_iT(0) | alpha_i, lambda_T]
  double true_estimand = 0.0;
  std::size_t resamples = 0;  // degenerate treatment draws replaced
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Treatment probability at the post period given the unit factor.
inline double propensity(DgpModel model, double alpha) {
  if (is_fixed_effects(model)) return logistic(alpha);
  const double c = alpha - 0.5;
  return logistic(c + c * c);
}

/// Untreated mean outcome in the pre-treatment window.
inline double pre_mean(DgpModel model, double alpha, double lambda) {
  switch (model) {
    case DgpModel::m1_additive: return alpha + lambda;
    case DgpModel::m2_interactive: return alpha * lambda;
    case DgpModel::m3_nonlinear_factor: return (alpha - lambda) * (alpha - lambda);
    case DgpModel::m4_gaussian_kernel:
      return std::exp(-100.0 * (alpha - lambda) * (alpha - lambda)) / (0.1 * std::sqrt(2.0 * std::numbers::pi));
    case DgpModel::m5_exponential_kernel: return std::exp(-10.0 * std::abs(alpha - lambda));
  }
  return 0.0;
}

namespace stream {
inline constexpr std::uint64_t alpha = 1, lambda = 2, u = 3, eps = 4, w = 5;
}

inline SyntheticPanel generate(const DgpSpec& spec) {
  if (spec.n < 4) throw ConfigError(Stage::simulation, "DGP needs n >= 4");
  if (spec.t0 < 2) throw ConfigError(Stage::simulation, "DGP needs t0 >= 2");
  const std::size_t n = spec.n, periods = spec.t0 + 1, t_post = periods;
  const bool fe = is_fixed_effects(spec.model);
  const double lo = fe ? -1.0 : 0.0;

  Rng ra(derive_seed(spec.seed, 0, stream::alpha));
  Rng rl(derive_seed(spec.seed, 0, stream::lambda));
  Rng ru(derive_seed(spec.seed, 0, stream::u));
  Rng re(derive_seed(spec.seed, 0, stream::eps));

  SyntheticPanel out{Panel(Matrix<double>(1, 2), Matrix<std::uint8_t>(1, 2), 1), {}, {}, {}, 0.0, 0};
  out.alphas.resize(n);
  for (auto& a : out.alphas) a = ra.uniform(lo, 1.0);
  std::vector<double> lambdas(periods);
  for (auto& l : lambdas) l = rl.uniform(lo, 1.0);

  Matrix<double> y(n, periods);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < periods; ++c) y(i, c) = ru.normal(0.0, spec.noise_sd);
  }
  std::vector<double> eps(n);
  for (auto& e : eps) e = re.normal(0.0, spec.post_noise_sd);

  out.true_p.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.true_p[i] = propensity(spec.model, out.alphas[i]);

  // Treatment draw; a draw with nobody or everybody treated is redrawn from a bumped stream.
  std::vector<std::uint8_t> w(n);
  constexpr std::size_t max_attempts = 64;
  std::size_t attempt = 0;
  for (;; ++attempt) {
    if (attempt == max_attempts) {
      throw ComputeError(Stage::simulation, "could not draw a nondegenerate treatment assignment");
    }
    Rng rw(derive_seed(spec.seed ^ spec.treatment_salt, attempt, stream::w));
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = rw.bernoulli(out.true_p[i]) ? 1 : 0;
      n1 += w[i];
    }
    if (n1 > 0 && n1 < n) break;
  }
  out.resamples = attempt;

  Matrix<std::uint8_t> treat(n, periods, 0);
  out.mu0_post.resize(n);
  double target = 0.0;
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = out.alphas[i];
    for (std::size_t c = 0; c < spec.t0; ++c) y(i, c) += pre_mean(spec.model, a, lambdas[c]);
    treat(i, t_post - 1) = w[i];
    double y0, y1;
    if (fe) {
      out.mu0_post[i] = pre_mean(spec.model, a, lambdas[t_post - 1]);
      y0 = out.mu0_post[i] + y(i, t_post - 1);
      y1 = y0 + spec.tau;
    } else {
      out.mu0_post[i] = a + a * a;
      y0 = out.mu0_post[i] + eps[i];
      y1 = 2.0 * a + a * a + 1.0 + eps[i];
    }
    y(i, t_post - 1) = w[i] ? y1 : y0;
    if (w[i]) {
      ++n1;
      target += spec.convention == EstimandConvention::realized ? y0 : out.mu0_post[i];
    }
  }
  out.true_estimand = fe ? spec.tau : target / static_cast<double>(n1);
  out.panel = Panel(std::move(y), std::move(treat), spec.t0);
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

enum class MethodKind { dr_pseudo, dr_oracle_alpha, dr_true_p, twfe };

/// One estimator variant in a simulation cell.
/// dr_oracle_alpha: oracle alpha distances, estimated propensity (default LOO).
/// dr_true_p: oracle alpha distances and the true propensity (default no cross-fitting).
struct MethodConfig {
  MethodKind kind = MethodKind::dr_pseudo;
  FoldSpec folds{FoldMode::kfold, 2};
  std::string name;
};

inline MethodConfig parse_method(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::optional<std::string> tail =
      colon == std::string::npos ? std::nullopt : std::optional<std::string>(text.substr(colon + 1));
  MethodConfig m;
  if (head == "dr_pseudo") {
    m.kind = MethodKind::dr_pseudo;
    m.folds = tail ? parse_folds(*tail) : FoldSpec{FoldMode::kfold, 2};
  } else if (head == "dr_oracle_alpha") {
    m.kind = MethodKind::dr_oracle_alpha;
    m.folds = tail ? parse_folds(*tail) : FoldSpec{FoldMode::leave_one_out, 0};
  } else if (head == "dr_true_p") {
    m.kind = MethodKind::dr_true_p;
    m.folds = tail ? parse_folds(*tail) : FoldSpec{FoldMode::none, 1};
  } else if (head == "twfe") {
    if (tail) throw ConfigError(Stage::config, "twfe takes no fold option");
    m.kind = MethodKind::twfe;
  } else {
    throw ConfigError(Stage::config, "unknown method '" + text +
                                         "' (expected dr_pseudo[:folds], dr_oracle_alpha[:folds], "
                                         "dr_true_p[:folds] or twfe)");
  }
  m.name = m.kind == MethodKind::twfe ? "twfe" : head + ":" + to_string(m.folds);
  return m;
}

inline std::vector<MethodConfig> parse_methods(const std::string& list) {
  std::vector<MethodConfig> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_method(item));
  }
  if (out.empty()) throw ConfigError(Stage::config, "method list is empty");
  return out;
}

inline EstimatorConfig simulation_defaults() {
  EstimatorConfig cfg;
  cfg.self_donor_without_crossfit = true;
  return cfg;
}

struct SimOptions {
  EstimatorConfig base = simulation_defaults();  // grid, kernel, alpha, trim, self-donor policy
  CounterfactualVariance cm_variance = CounterfactualVariance::ratio;
  TwfeSe twfe_se = TwfeSe::robust;
  double max_failure_rate = 0.02;
  unsigned jobs = 1;
};

/// One method's outcome in one replication.
struct RepResult {
  bool ok = false;
  double estimate = 0.0;
  double truth = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string error;

  double abs_dev() const { return std::abs(estimate - truth); }
  bool covers() const { return ci_low <= truth && truth <= ci_high; }
  double ci_length() const { return ci_high - ci_low; }
};

/// Run one method on one synthetic panel, scoring it against the DGP's estimand.
inline RepResult run_method(const SyntheticPanel& data, DgpModel model, const MethodConfig& method,
                            const SimOptions& opts, std::uint64_t fold_seed) {
  RepResult r;
  r.truth = data.true_estimand;
  const std::size_t t = data.panel.periods();
  const bool att_target = is_fixed_effects(model);
  try {
    if (method.kind == MethodKind::twfe) {
      const TwfeEstimate est = twfe(data.panel, opts.base.alpha, opts.twfe_se);
      if (att_target) {
        r.estimate = est.tau;
        r.ci_low = est.ci_low;
        r.ci_high = est.ci_high;
      } else {
        // Counterfactual mean = treated mean - tau; the interval is reflected with it.
        const double tm = treated_mean(slice_period(data.panel, t));
        r.estimate = tm - est.tau;
        r.ci_low = tm - est.ci_high;
        r.ci_high = tm - est.ci_low;
      }
    } else {
      EstimatorConfig cfg = opts.base;
      cfg.folds = method.folds;
      cfg.seed = fold_seed;
      if (method.kind != MethodKind::dr_pseudo) {
        cfg.distance_source = DistanceSource::oracle_l2;
        cfg.oracle_alphas.clear();
        for (double a : data.alphas) cfg.oracle_alphas.push_back({a});
      }
      if (method.kind == MethodKind::dr_true_p) cfg.true_propensity = data.true_p;
      const PeriodFit fit = estimate_period_detailed(data.panel, t, cfg);
      if (att_target) {
        r.estimate = fit.estimate.att;
        r.ci_low = fit.estimate.ci_low;
        r.ci_high = fit.estimate.ci_high;
      } else {
        const CounterfactualEstimate cm = dr_counterfactual_mean(fit.slice, fit.imputation, fit.estimate, opts.cm_variance);
        r.estimate = cm.mean;
        r.ci_low = cm.ci_low;
        r.ci_high = cm.ci_high;
      }
    }
    r.ok = true;
  } catch (const Error& e) {
    r.error = std::string(to_string(e.stage())) + ": " + e.what();
  }
  return r;
}

struct MethodStats {
  std::string name;
  double median_abs_dev = 0.0;
  double coverage = 0.0;
  double median_ci_length = 0.0;
  std::size_t replications = 0;  // successful
  std::size_t failures = 0;
  std::vector<RepResult> runs;  // per replication, in replication order (empty when loaded from CSV)
};

struct SimReport {
  DgpModel model = DgpModel::m1_additive;
  std::size_t n = 0;
  std::size_t t0 = 0;
  std::vector<MethodStats> methods;
};

inline MethodStats summarize(std::string name, std::vector<RepResult> runs) {
  MethodStats s;
  s.name = std::move(name);
  std::vector<double> dev, len;
  std::size_t covered = 0;
  for (const auto& r : runs) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    dev.push_back(r.abs_dev());
    len.push_back(r.ci_length());
    covered += r.covers() ? 1 : 0;
  }
  s.replications = dev.size();
  if (!dev.empty()) {
    s.median_abs_dev = median(dev);
    s.median_ci_length = median(len);
    s.coverage = static_cast<double>(covered) / static_cast<double>(dev.size());
  }
  s.runs = std::move(runs);
  return s;
}

/// Seed of the synthetic data in replication `rep`; shared by every method.
inline std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t rep) {
  return derive_seed(base_seed, rep, 11);
}
inline std::uint64_t fold_seed(std::uint64_t base_seed, std::size_t rep) { return derive_seed(base_seed, rep, 12); }

/// Generate `reps` datasets and run every method on each. Replication seeds are
/// a pure function of (base_seed, rep), so the report does not depend on `jobs`.
inline SimReport run_cell(const DgpSpec& dgp, const std::vector<MethodConfig>& methods, std::size_t reps,
                          std::uint64_t base_seed, const SimOptions& opts = {}) {
  if (reps < 1) throw ConfigError(Stage::simulation, "need at least one replication");
  if (methods.empty()) throw ConfigError(Stage::simulation, "need at least one method");

  std::vector<std::vector<RepResult>> results(methods.size(), std::vector<RepResult>(reps));
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::optional<std::string> fatal;

  auto worker = [&] {
    for (std::size_t rep = next++; rep < reps; rep = next++) {
      try {
        DgpSpec spec = dgp;
        spec.seed = replication_seed(base_seed, rep);
        const SyntheticPanel data = generate(spec);
        for (std::size_t m = 0; m < methods.size(); ++m) {
          results[m][rep] = run_method(data, dgp.model, methods[m], opts, fold_seed(base_seed, rep));
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!fatal) fatal = "replication " + std::to_string(rep) + ": " + e.what();
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(opts.jobs, static_cast<unsigned>(reps)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (fatal) throw ComputeError(Stage::simulation, *fatal);

  SimReport report;
  report.model = dgp.model;
  report.n = dgp.n;
  report.t0 = dgp.t0;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodStats s = summarize(methods[m].name, std::move(results[m]));
    const double rate = static_cast<double>(s.failures) / static_cast<double>(reps);
    if (rate > opts.max_failure_rate) {
      std::string first;
      for (const auto& r : s.runs) {
        if (!r.ok) {
          first = r.error;
          break;
        }
      }
      throw ComputeError(Stage::simulation, "method " + s.name + " failed on " + std::to_string(s.failures) + " of " +
                                                std::to_string(reps) + " replications (first: " + first + ")");
    }
    report.methods.push_back(std::move(s));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report tables

enum class TableFormat { csv, text };

inline TableFormat parse_table_format(const std::string& s) {
  if (s == "csv") return TableFormat::csv;
  if (s == "text") return TableFormat::text;
  throw ConfigError(Stage::report, "unknown table format '" + s + "' (expected csv or text)");
}

/// CSV: one row per method in registration order. Text: the three statistics
/// as rows and methods as columns, 6 significant digits.
inline std::string emit_table(const SimReport& report, TableFormat format) {
  if (report.methods.empty()) throw ConfigError(Stage::report, "report has no methods");
  std::ostringstream out;
  if (format == TableFormat::csv) {
    out << "model,n,t0,method,replications,failures,median_abs_dev,coverage,median_ci_length\n";
    for (const auto& m : report.methods) {
      out << static_cast<int>(report.model) << ',' << report.n << ',' << report.t0 << ',' << m.name << ','
          << m.replications << ',' << m.failures << ',' << detail::format_double(m.median_abs_dev) << ','
          << detail::format_double(m.coverage) << ',' << detail::format_double(m.median_ci_length) << '\n';
    }
    return out.str();
  }
  std::vector<std::string> rows = {"Median Abs. Dev.", "95% CI Coverage", "Median CI Length", "Replications"};
  std::size_t label_w = 0;
  for (const auto& r : rows) label_w = std::max(label_w, r.size());
  std::vector<std::vector<std::string>> cols;
  std::vector<std::size_t> widths;
  for (const auto& m : report.methods) {
    std::vector<std::string> c = {m.name, detail::format_double(m.median_abs_dev, 6), detail::format_double(m.coverage, 6),
                                  detail::format_double(m.median_ci_length, 6), std::to_string(m.replications)};
    std::size_t w = 0;
    for (const auto& s : c) w = std::max(w, s.size());
    widths.push_back(w);
    cols.push_back(std::move(c));
  }
  out << "Model " << static_cast<int>(report.model) << ", N=" << report.n << ", T0=" << report.t0 << '\n';
  out << std::left << std::setw(static_cast<int>(label_w)) << "";
  for (std::size_t m = 0; m < cols.size(); ++m) out << "  " << std::right << std::setw(static_cast<int>(widths[m])) << cols[m][0];
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << std::left << std::setw(static_cast<int>(label_w)) << rows[r];
    for (std::size_t m = 0; m < cols.size(); ++m) {
      out << "  " << std::right << std::setw(static_cast<int>(widths[m])) << cols[m][r + 1];
    }
    out << '\n';
  }
  return out.str();
}

/// Inverse of emit_table(csv). Also used to merge externally produced method
/// columns (same layout) into a report.
inline SimReport load_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(Stage::report, "empty report");
  SimReport report;
  bool first = true;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 9) throw ParseError(Stage::report, "report row has " + std::to_string(cells.size()) + " cells, expected 9");
    MethodStats m;
    double model = 0, n = 0, t0 = 0, reps = 0, fails = 0;
    if (!detail::parse_double(cells[0], model) || !detail::parse_double(cells[1], n) || !detail::parse_double(cells[2], t0) ||
        !detail::parse_double(cells[4], reps) || !detail::parse_double(cells[5], fails) ||
        !detail::parse_double(cells[6], m.median_abs_dev) || !detail::parse_double(cells[7], m.coverage) ||
        !detail::parse_double(cells[8], m.median_ci_length)) {
      throw ParseError(Stage::report, "non-numeric field in report row: " + line);
    }
    m.name = std::string(cells[3]);
    m.replications = static_cast<std::size_t>(reps);
    m.failures = static_cast<std::size_t>(fails);
    if (first) {
      report.model = parse_model(static_cast<int>(model));
      report.n = static_cast<std::size_t>(n);
      report.t0 = static_cast<std::size_t>(t0);
      first = false;
    }
    report.methods.push_back(std::move(m));
  }
  if (report.methods.empty()) throw ParseError(Stage::report, "report has no method rows");
  return report;
}

/// Append method columns from another report of the same cell (e.g. an external baseline).
inline void merge_columns(SimReport& into, const SimReport& extra) {
  if (extra.model != into.model || extra.n != into.n || extra.t0 != into.t0) {
    throw ConfigError(Stage::report, "external results describe a different simulation cell");
  }
  for (const auto& m : extra.methods) into.methods.push_back(m);
}

// ---------------------------------------------------------------------------
// Table manifest: one cell per line,
//   <table> model=<1..5> n=<N> t0=<T0> methods=<m1,m2,...> [reps=<R>]
// '#' starts a comment.

struct ManifestCell {
  std::string table;
  DgpModel model = DgpModel::m1_additive;
  std::size_t n = 0;
  std::size_t t0 = 0;
  std::string methods;
  std::optional<std::size_t> reps;

  std::string file_stem() const {
    return table + "_model" + std::to_string(static_cast<int>(model)) + "_n" + std::to_string(n) + "_t0" + std::to_string(t0);
  }
};

inline std::vector<ManifestCell> parse_manifest(std::istream& in) {
  std::vector<ManifestCell> cells;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    ManifestCell cell;
    if (!(ls >> cell.table)) continue;
    std::string kv;
    bool have_model = false, have_n = false, have_t0 = false;
    while (ls >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError(Stage::config, "manifest line " + std::to_string(line_no) + ": expected key=value");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      try {
        if (key == "model") {
          cell.model = parse_model(std::stoi(value));
          have_model = true;
        } else if (key == "n") {
          cell.n = std::stoul(value);
          have_n = true;
        } else if (key == "t0") {
          cell.t0 = std::stoul(value);
          have_t0 = true;
        } else if (key == "methods") {
          cell.methods = value;
        } else if (key == "reps") {
          cell.reps = std::stoul(value);
        } else {
          throw ParseError(Stage::config, "manifest line " + std::to_string(line_no) + ": unknown key " + key);
        }
      } catch (const std::logic_error&) {
        throw ParseError(Stage::config, "manifest line " + std::to_string(line_no) + ": bad value for " + key);
      }
    }
    if (!have_model || !have_n || !have_t0 || cell.methods.empty()) {
      throw ParseError(Stage::config, "manifest line " + std::to_string(line_no) + ": needs model, n, t0 and methods");
    }
    parse_methods(cell.methods);  // validate early
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace latentdr
