#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "latentdr/distance.hpp"
#include "latentdr/error.hpp"
#include "latentdr/estimator.hpp"
#include "latentdr/panel.hpp"
#include "latentdr/simulate.hpp"

#ifndef LATENTDR_VERSION
#define LATENTDR_VERSION "0.0.0-dev"
#endif
#ifndef LATENTDR_DEFAULT_MANIFEST
#define LATENTDR_DEFAULT_MANIFEST "share/tables.cfg"
#endif

namespace latentdr::cli {

inline constexpr const char* version_string = "latentdr " LATENTDR_VERSION;

struct RunConfig {
  std::string command;  // estimate, simulate, validate, reproduce-tables, help, version
  std::string help_text;

  std::string outcomes;
  std::string treatment;
  std::size_t t0 = 250;
  std::vector<std::size_t> periods;  // empty: every post period

  EstimatorConfig estimator;
  std::optional<std::uint64_t> seed;
  std::string dump_distances;

  DgpModel model = DgpModel::m1_additive;
  std::size_t n = 250;
  std::size_t reps = 500;
  std::optional<std::size_t> reps_override;
  std::string methods;
  TableFormat format = TableFormat::csv;
  TwfeSe twfe_se = TwfeSe::robust;
  CounterfactualVariance cm_variance = CounterfactualVariance::ratio;
  EstimandConvention estimand = EstimandConvention::conditional_mean;
  std::string external;
  unsigned jobs = 1;

  std::string manifest = LATENTDR_DEFAULT_MANIFEST;
  std::vector<std::string> cells;
  std::string out;
};

/// Default method list: every DR variant, plus TWFE for the fixed-effects models.
inline std::string default_methods(DgpModel model) {
  const std::string dr = "dr_true_p,dr_oracle_alpha,dr_pseudo:none,dr_pseudo:loo,dr_pseudo:2";
  return is_fixed_effects(model) ? "twfe," + dr : dr;
}

namespace detail {

inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) throw std::invalid_argument("expected a nonnegative integer, got '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s) {
  double v = 0.0;
  if (!latentdr::detail::parse_double(s, v) || !std::isfinite(v)) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    const auto t = latentdr::detail::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline BandwidthGrid parse_grid(const std::string& s) {
  const auto parts = split(s, ':');
  if (parts.size() != 3) throw std::invalid_argument("expected lo:hi:count, got '" + s + "'");
  const double lo = parse_real(parts[0]), hi = parse_real(parts[1]);
  const auto count = parse_u64(parts[2]);
  if (!(lo > 0.0)) throw std::invalid_argument("grid lo must be positive");
  if (!(lo < hi)) throw std::invalid_argument("grid lo must be below hi");
  if (count < 1) throw std::invalid_argument("grid count must be at least 1");
  return BandwidthGrid::geometric(lo, hi, count);
}

inline std::optional<double> parse_bandwidth(const std::string& s) {
  if (s == "cv") return std::nullopt;
  if (s.rfind("fixed:", 0) != 0) throw std::invalid_argument("expected cv or fixed:H, got '" + s + "'");
  const double h = parse_real(s.substr(6));
  if (!(h > 0.0)) throw std::invalid_argument("fixed bandwidth must be positive");
  return h;
}

inline bool parse_switch(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw std::invalid_argument("expected on or off, got '" + s + "'");
}

/// key = value lines; '#' comments; blank lines ignored.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(Stage::config, "cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto t = latentdr::detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(Stage::config, path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(latentdr::detail::trim(t.substr(0, eq)));
    std::string value(latentdr::detail::trim(t.substr(eq + 1)));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    kv[key] = value;
  }
  return kv;
}

// Options shared by the estimator-running subcommands.
inline const std::vector<std::string> estimator_keys = {"folds", "kernel", "bandwidth-grid", "bandwidth", "alpha",
                                                        "trim",  "seed",   "self-donor"};

}  // namespace detail

/// Parse argv (without the program name). Throws ConfigError with every
/// problem listed when the configuration is invalid.
inline RunConfig parse_args(const std::vector<std::string>& args) {
  CLI::App app{"Doubly robust ATT estimation for panels with latent confounders", "latentdr"};
  app.set_version_flag("--version", std::string(version_string));
  app.require_subcommand(0, 1);

  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::App*> owner;
  std::string config_path;

  auto opt = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_option("--" + key, raw[sub->get_name() + "." + key], help);
  };
  auto estimator_opts = [&](CLI::App* sub) {
    opt(sub, "folds", "cross-fitting: K (>= 2), loo or none [2]");
    opt(sub, "kernel", "epanechnikov, uniform or triangular [epanechnikov]");
    opt(sub, "bandwidth-grid", "CV grid lo:hi:count, geometric [0.05:5:30]");
    opt(sub, "bandwidth", "cv or fixed:H [cv]");
    opt(sub, "alpha", "1 - confidence level [0.05]");
    opt(sub, "trim", "propensity clipping at 1 - trim [0.01]");
    opt(sub, "seed", "seed for fold partitions and simulated data");
    opt(sub, "self-donor", "without cross-fitting, use each unit as its own donor: on or off");
  };

  CLI::App* est = app.add_subcommand("estimate", "estimate the ATT per post period from CSV panels");
  opt(est, "outcomes", "outcomes CSV (unit,p1,...,pT)");
  opt(est, "treatment", "treatment CSV with 0/1 cells");
  opt(est, "t0", "number of pre-treatment periods");
  opt(est, "period", "post period(s): t, t1,t2,... or all [all]");
  opt(est, "out", "report CSV path [stdout]");
  opt(est, "dump-distances", "write the pseudo-distance matrix to this CSV");
  estimator_opts(est);

  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo coverage study for one DGP cell");
  opt(sim, "model", "DGP model 1..5 [1]");
  opt(sim, "n", "units [250]");
  opt(sim, "t0", "pre-treatment periods [250]");
  opt(sim, "reps", "replications [500]");
  opt(sim, "methods", "comma list of twfe, dr_true_p[:folds], dr_oracle_alpha[:folds], dr_pseudo[:folds]");
  opt(sim, "jobs", "worker threads [hardware concurrency]");
  opt(sim, "format", "csv or text [csv]");
  opt(sim, "out", "table path [stdout]");
  opt(sim, "twfe-se", "robust or iid [robust]");
  opt(sim, "cm-variance", "counterfactual-mean variance: ratio, score or shared [ratio]");
  opt(sim, "estimand", "models 3-5 target: conditional or realized [conditional]");
  opt(sim, "external", "CSV of externally computed method columns to append");
  estimator_opts(sim);

  CLI::App* val = app.add_subcommand("validate", "check a CSV panel for admissibility");
  opt(val, "outcomes", "outcomes CSV");
  opt(val, "treatment", "treatment CSV");
  opt(val, "t0", "number of pre-treatment periods");

  CLI::App* rep = app.add_subcommand("reproduce-tables", "run every simulation cell of a table manifest");
  opt(rep, "manifest", "table manifest [bundled tables.cfg]");
  opt(rep, "cells", "comma list of tables (table1) or cell names to run [all]");
  opt(rep, "reps", "override every cell's replication count");
  opt(rep, "jobs", "worker threads [hardware concurrency]");
  opt(rep, "format", "csv or text [csv]");
  opt(rep, "out", "output directory [tables]");
  opt(rep, "twfe-se", "robust or iid [robust]");
  opt(rep, "cm-variance", "ratio, score or shared [ratio]");
  opt(rep, "estimand", "conditional or realized [conditional]");
  estimator_opts(rep);

  for (auto* sub : {est, sim, val, rep}) sub->add_option("--config", config_path, "key = value file; flags take precedence");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    RunConfig cfg;
    cfg.command = "help";
    cfg.help_text = app.help();
    for (auto* sub : app.get_subcommands()) cfg.help_text = sub->help();
    return cfg;
  } catch (const CLI::CallForAllHelp&) {
    RunConfig cfg;
    cfg.command = "help";
    cfg.help_text = app.help("", CLI::AppFormatMode::All);
    return cfg;
  } catch (const CLI::CallForVersion&) {
    RunConfig cfg;
    cfg.command = "version";
    cfg.help_text = version_string;
    return cfg;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(Stage::config, e.what());
  }

  RunConfig cfg;
  const auto subs = app.get_subcommands();
  if (subs.empty()) {
    cfg.command = "help";
    cfg.help_text = app.help();
    return cfg;
  }
  CLI::App* sub = subs.front();
  cfg.command = sub->get_name();
  const std::string prefix = cfg.command + ".";

  // Values given on the command line, then config-file values for the rest.
  std::map<std::string, std::string> value;
  for (const auto& [k, v] : raw) {
    if (k.rfind(prefix, 0) != 0) continue;
    const std::string key = k.substr(prefix.size());
    if (sub->count("--" + key) > 0) value[key] = v;
  }
  std::vector<std::string> problems;
  if (!config_path.empty()) {
    for (const auto& [key, v] : detail::read_config_file(config_path)) {
      if (!raw.contains(prefix + key)) {
        problems.push_back("config file: unknown key '" + key + "' for " + cfg.command);
        continue;
      }
      value.try_emplace(key, v);
    }
  }

  auto field = [&](const std::string& key, auto&& apply) {
    auto it = value.find(key);
    if (it == value.end()) return;
    try {
      apply(it->second);
    } catch (const std::exception& e) {
      problems.push_back("--" + key + ": " + e.what());
    }
  };
  auto required = [&](const std::string& key) {
    if (!value.contains(key)) problems.push_back("--" + key + " is required");
  };

  field("folds", [&](const std::string& s) { cfg.estimator.folds = parse_folds(s); });
  field("kernel", [&](const std::string& s) { cfg.estimator.kernel = KernelSpec{parse_kernel(s)}; });
  field("bandwidth-grid", [&](const std::string& s) { cfg.estimator.grid = detail::parse_grid(s); });
  field("bandwidth", [&](const std::string& s) { cfg.estimator.fixed_bandwidth = detail::parse_bandwidth(s); });
  field("alpha", [&](const std::string& s) {
    const double a = detail::parse_real(s);
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    cfg.estimator.alpha = a;
  });
  field("trim", [&](const std::string& s) {
    const double e = detail::parse_real(s);
    if (!(e >= 0.0 && e < 0.5)) throw std::invalid_argument("trim must lie in [0, 0.5)");
    cfg.estimator.eps_trim = e;
  });
  field("seed", [&](const std::string& s) { cfg.seed = detail::parse_u64(s); });
  cfg.estimator.self_donor_without_crossfit = cfg.command == "simulate" || cfg.command == "reproduce-tables";
  field("self-donor", [&](const std::string& s) { cfg.estimator.self_donor_without_crossfit = detail::parse_switch(s); });

  field("outcomes", [&](const std::string& s) { cfg.outcomes = s; });
  field("treatment", [&](const std::string& s) { cfg.treatment = s; });
  field("t0", [&](const std::string& s) {
    cfg.t0 = detail::parse_u64(s);
    if (cfg.t0 < 1) throw std::invalid_argument("t0 must be at least 1");
  });
  field("period", [&](const std::string& s) {
    if (s == "all") return;
    for (const auto& p : detail::split(s, ',')) cfg.periods.push_back(detail::parse_u64(p));
    if (cfg.periods.empty()) throw std::invalid_argument("no period given");
  });
  field("out", [&](const std::string& s) { cfg.out = s; });
  field("dump-distances", [&](const std::string& s) { cfg.dump_distances = s; });

  field("model", [&](const std::string& s) { cfg.model = parse_model(static_cast<int>(detail::parse_u64(s))); });
  field("n", [&](const std::string& s) {
    cfg.n = detail::parse_u64(s);
    if (cfg.n < 4) throw std::invalid_argument("n must be at least 4");
  });
  field("reps", [&](const std::string& s) {
    const auto r = detail::parse_u64(s);
    if (r < 1) throw std::invalid_argument("reps must be at least 1");
    cfg.reps = r;
    cfg.reps_override = r;
  });
  field("jobs", [&](const std::string& s) {
    const auto j = detail::parse_u64(s);
    if (j < 1) throw std::invalid_argument("jobs must be at least 1");
    cfg.jobs = static_cast<unsigned>(j);
  });
  if (!value.contains("jobs")) cfg.jobs = std::max(1u, std::thread::hardware_concurrency());
  field("format", [&](const std::string& s) { cfg.format = parse_table_format(s); });
  field("twfe-se", [&](const std::string& s) {
    if (s == "robust") cfg.twfe_se = TwfeSe::robust;
    else if (s == "iid") cfg.twfe_se = TwfeSe::iid;
    else throw std::invalid_argument("expected robust or iid, got '" + s + "'");
  });
  field("cm-variance", [&](const std::string& s) {
    if (s == "ratio") cfg.cm_variance = CounterfactualVariance::ratio;
    else if (s == "score") cfg.cm_variance = CounterfactualVariance::score;
    else if (s == "shared") cfg.cm_variance = CounterfactualVariance::shared;
    else throw std::invalid_argument("expected ratio, score or shared, got '" + s + "'");
  });
  field("estimand", [&](const std::string& s) {
    if (s == "conditional") cfg.estimand = EstimandConvention::conditional_mean;
    else if (s == "realized") cfg.estimand = EstimandConvention::realized;
    else throw std::invalid_argument("expected conditional or realized, got '" + s + "'");
  });
  field("external", [&](const std::string& s) { cfg.external = s; });
  field("manifest", [&](const std::string& s) { cfg.manifest = s; });
  field("cells", [&](const std::string& s) { cfg.cells = detail::split(s, ','); });

  cfg.methods = default_methods(cfg.model);
  field("methods", [&](const std::string& s) {
    parse_methods(s);
    cfg.methods = s;
  });

  if (cfg.command == "estimate" || cfg.command == "validate") {
    required("outcomes");
    required("treatment");
    required("t0");
  }
  if (cfg.command == "reproduce-tables" && cfg.out.empty()) cfg.out = "tables";
  if (cfg.estimator.fixed_bandwidth && value.contains("bandwidth-grid")) {
    problems.push_back("--bandwidth fixed:H and --bandwidth-grid are mutually exclusive");
  }

  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " configuration problem(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(Stage::config, msg);
  }
  return cfg;
}

inline int exit_code(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 3;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e)) {
    return 2;
  }
  return 1;
}

inline const char* error_kind(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  return "compute";
}

namespace detail {

inline std::uint64_t resolve_seed(const RunConfig& cfg, std::ostream& err) {
  if (cfg.seed) return *cfg.seed;
  const std::uint64_t s = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
  err << "seed: " << s << '\n';
  return s;
}

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError(Stage::report, "cannot write " + path);
  f << text;
  if (!f) throw ComputeError(Stage::report, "write failed for " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(Stage::config, "cannot open " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline SimOptions sim_options(const RunConfig& cfg) {
  SimOptions o;
  o.base = cfg.estimator;
  o.cm_variance = cfg.cm_variance;
  o.twfe_se = cfg.twfe_se;
  o.jobs = cfg.jobs;
  return o;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline int run_validate(const RunConfig& cfg, std::ostream& out) {
  const Panel panel = read_csv(cfg.outcomes, cfg.treatment, cfg.t0);
  const auto violations = validate(panel);
  if (violations.empty()) {
    out << "ok: " << panel.units() << " units, " << panel.periods() << " periods, t0=" << panel.t0() << '\n';
    return 0;
  }
  for (const auto& v : violations) out << "violation: " << v.message() << '\n';
  out << violations.size() << " violation(s)\n";
  return 2;
}

inline int run_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Panel panel = load_csv(cfg.outcomes, cfg.treatment, cfg.t0);
  EstimatorConfig ec = cfg.estimator;
  ec.seed = detail::resolve_seed(cfg, err);

  std::vector<std::size_t> periods = cfg.periods;
  if (periods.empty()) {
    for (std::size_t t = panel.t0() + 1; t <= panel.periods(); ++t) periods.push_back(t);
  }

  if (!cfg.dump_distances.empty()) {
    const DistanceMatrix d = pseudo_distances(panel, make_plan(ec.folds, panel.units(), ec.seed));
    dump_distances(d, panel.unit_labels(), cfg.dump_distances);
  }

  std::ostringstream csv;
  csv << "period,att,se,ci_low,ci_high,h_cv,n1,n_clipped\n";
  using latentdr::detail::format_double;
  for (std::size_t t : periods) {
    const AttEstimate e = estimate_period(panel, t, ec);
    csv << t << ',' << format_double(e.att) << ',' << format_double(e.se()) << ',' << format_double(e.ci_low) << ','
        << format_double(e.ci_high) << ',' << format_double(e.h_used) << ',' << e.n1 << ',' << e.diagnostics.n_clipped
        << '\n';
    if (e.diagnostics.cv_winner) {
      err << "note: period " << t << ": CV winner h=" << format_double(*e.diagnostics.cv_winner, 6)
          << " leaves some unit without mu0 or phat; used h=" << format_double(e.h_used, 6) << '\n';
    }
    if (e.diagnostics.n_clipped > 0) {
      err << "note: period " << t << ": " << e.diagnostics.n_clipped << " propensity value(s) clipped\n";
    }
  }
  detail::write_text(cfg.out, csv.str(), out);
  return 0;
}

inline int run_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  DgpSpec dgp;
  dgp.model = cfg.model;
  dgp.n = cfg.n;
  dgp.t0 = cfg.t0;
  dgp.convention = cfg.estimand;
  const std::uint64_t seed = detail::resolve_seed(cfg, err);
  SimReport report = run_cell(dgp, parse_methods(cfg.methods), cfg.reps, seed, detail::sim_options(cfg));
  if (!cfg.external.empty()) merge_columns(report, load_report_csv(detail::read_text(cfg.external)));
  detail::write_text(cfg.out, emit_table(report, cfg.format), out);
  return 0;
}

inline int run_reproduce(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::ifstream in(cfg.manifest);
  if (!in) throw ConfigError(Stage::config, "cannot open manifest " + cfg.manifest);
  std::vector<ManifestCell> cells = parse_manifest(in);
  if (!cfg.cells.empty()) {
    std::vector<ManifestCell> keep;
    for (auto& c : cells) {
      if (std::find(cfg.cells.begin(), cfg.cells.end(), c.table) != cfg.cells.end() ||
          std::find(cfg.cells.begin(), cfg.cells.end(), c.file_stem()) != cfg.cells.end()) {
        keep.push_back(std::move(c));
      }
    }
    if (keep.empty()) throw ConfigError(Stage::config, "no manifest cell matches --cells");
    cells = std::move(keep);
  }
  const std::uint64_t seed = detail::resolve_seed(cfg, err);
  std::filesystem::create_directories(cfg.out);
  const std::string ext = cfg.format == TableFormat::csv ? ".csv" : ".txt";
  for (const auto& c : cells) {
    DgpSpec dgp;
    dgp.model = c.model;
    dgp.n = c.n;
    dgp.t0 = c.t0;
    dgp.convention = cfg.estimand;
    const std::size_t reps = cfg.reps_override.value_or(c.reps.value_or(500));
    const SimReport report = run_cell(dgp, parse_methods(c.methods), reps,
                                      derive_seed(seed, detail::fnv1a(c.file_stem()), 13), detail::sim_options(cfg));
    const std::string path = (std::filesystem::path(cfg.out) / (c.file_stem() + ext)).string();
    detail::write_text(path, emit_table(report, cfg.format), out);
    out << path << '\n';
  }
  return 0;
}

/// Parse, dispatch and map failures to exit codes: 0 success, 1 computation
/// error, 2 invalid input, 3 invalid configuration. Errors are reported on
/// `err` as one line: error<TAB>kind=...<TAB>stage=...<TAB>exit=...<TAB>message.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = parse_args(args);
    if (cfg.command == "help" || cfg.command == "version") {
      out << cfg.help_text << '\n';
      return 0;
    }
    if (cfg.command == "validate") return run_validate(cfg, out);
    if (cfg.command == "estimate") return run_estimate(cfg, out, err);
    if (cfg.command == "simulate") return run_simulate(cfg, out, err);
    return run_reproduce(cfg, out, err);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ';');
    const int code = exit_code(e);
    err << "error\tkind=" << error_kind(e) << "\tstage=" << to_string(e.stage()) << "\texit=" << code << '\t' << msg
        << '\n';
    return code;
  } catch (const std::exception& e) {
    err << "error\tkind=internal\tstage=report\texit=1\t" << e.what() << '\n';
    return 1;
  }
}

}  // namespace latentdr::cli
