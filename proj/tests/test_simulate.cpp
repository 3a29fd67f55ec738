#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "latentdr/simulate.hpp"

using namespace latentdr;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DgpSpec small(DgpModel m, std::uint64_t seed) {
  DgpSpec s;
  s.model = m;
  s.n = 40;
  s.t0 = 12;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("noiseless model 1 is additive in the pre period", "[simulate]") {
  auto spec = small(DgpModel::m1_additive, 1);
  spec.noise_sd = 0.0;
  const auto d = generate(spec);
  const auto& p = d.panel;
  for (std::size_t t = 1; t <= p.t0(); ++t) {
    const double lambda = p.y(0, t) - d.alphas[0];
    for (std::size_t i = 0; i < p.units(); ++i) CHECK_THAT(p.y(i, t), WithinAbs(d.alphas[i] + lambda, 1e-14));
  }
}

TEST_CASE("propensity models hit the quoted ranges", "[simulate]") {
  CHECK(propensity(DgpModel::m1_additive, 0.0) == 0.5);
  CHECK_THAT(propensity(DgpModel::m1_additive, 1.0), WithinAbs(0.7311, 5e-5));
  CHECK_THAT(propensity(DgpModel::m2_interactive, -1.0), WithinAbs(0.2689, 5e-5));
  CHECK_THAT(propensity(DgpModel::m3_nonlinear_factor, 0.0), WithinAbs(0.4378, 5e-5));
  CHECK_THAT(propensity(DgpModel::m5_exponential_kernel, 1.0), WithinAbs(0.6792, 5e-5));
}

TEST_CASE("generation is deterministic given the seed", "[simulate]") {
  for (int m = 1; m <= 5; ++m) {
    const auto spec = small(parse_model(m), 9);
    const auto a = generate(spec), b = generate(spec);
    CHECK(a.panel.outcomes() == b.panel.outcomes());
    CHECK(a.panel.treatment() == b.panel.treatment());
    CHECK(a.true_estimand == b.true_estimand);
  }
}

TEST_CASE("the treatment stream does not touch pre-period outcomes", "[simulate]") {
  auto spec = small(DgpModel::m4_gaussian_kernel, 5);
  const auto a = generate(spec);
  spec.treatment_salt = 0xabcdef;
  const auto b = generate(spec);
  CHECK(a.panel.treatment() != b.panel.treatment());
  for (std::size_t i = 0; i < a.panel.units(); ++i) {
    for (std::size_t t = 1; t <= a.panel.t0(); ++t) CHECK(a.panel.y(i, t) == b.panel.y(i, t));
  }
}

TEST_CASE("one post period, treated only there", "[simulate]") {
  const auto d = generate(small(DgpModel::m2_interactive, 2));
  CHECK(d.panel.periods() == d.panel.t0() + 1);
  CHECK(validate(d.panel).empty());
  const auto s = slice_period(d.panel, d.panel.periods());
  CHECK(s.n1 > 0);
  CHECK(s.n1 < s.units());
}

TEST_CASE("true estimands follow the model family", "[simulate]") {
  CHECK(generate(small(DgpModel::m1_additive, 3)).true_estimand == 0.5);
  CHECK(generate(small(DgpModel::m2_interactive, 3)).true_estimand == 0.5);
  auto spec = small(DgpModel::m3_nonlinear_factor, 3);
  const auto d = generate(spec);
  const std::size_t t = d.panel.periods();
  double cond = 0.0, real = 0.0;
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < d.panel.units(); ++i) {
    if (!d.panel.treated(i, t)) continue;
    const double a = d.alphas[i];
    cond += a + a * a;
    real += d.panel.y(i, t) - (a + 1.0);  // Y(1) - Y(0) = a + 1
    ++n1;
  }
  CHECK_THAT(d.true_estimand, WithinRel(cond / n1, 1e-12));
  spec.convention = EstimandConvention::realized;
  CHECK_THAT(generate(spec).true_estimand, WithinRel(real / n1, 1e-12));
}

TEST_CASE("generate checks sizes", "[simulate]") {
  auto spec = small(DgpModel::m1_additive, 1);
  spec.n = 3;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec.n = 10;
  spec.t0 = 1;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  CHECK_THROWS_AS(parse_model(6), ConfigError);
}

TEST_CASE("methods parse with their default fold plans", "[simulate]") {
  const auto m = parse_methods("twfe,dr_true_p,dr_oracle_alpha,dr_pseudo,dr_pseudo:loo");
  REQUIRE(m.size() == 5);
  CHECK(m[0].name == "twfe");
  CHECK(m[1].name == "dr_true_p:none");
  CHECK(m[2].name == "dr_oracle_alpha:loo");
  CHECK(m[3].name == "dr_pseudo:2");
  CHECK(m[4].folds.mode == FoldMode::leave_one_out);
  CHECK_THROWS_AS(parse_method("lasso"), ConfigError);
  CHECK_THROWS_AS(parse_method("twfe:2"), ConfigError);
  CHECK_THROWS_AS(parse_methods(""), ConfigError);
}

TEST_CASE("a single replication reports its own values", "[simulate]") {
  const auto spec = small(DgpModel::m1_additive, 0);
  const auto rep = run_cell(spec, parse_methods("twfe,dr_pseudo:loo"), 1, 31);
  for (const auto& m : rep.methods) {
    REQUIRE(m.runs.size() == 1);
    const auto& r = m.runs[0];
    CHECK(m.replications == 1);
    CHECK(m.median_abs_dev == r.abs_dev());
    CHECK(m.median_ci_length == r.ci_length());
    CHECK(m.coverage == (r.covers() ? 1.0 : 0.0));
  }
}

TEST_CASE("reports do not depend on the worker count", "[simulate]") {
  const auto spec = small(DgpModel::m3_nonlinear_factor, 0);
  SimOptions serial, parallel;
  parallel.jobs = 3;
  const auto a = run_cell(spec, parse_methods("dr_pseudo:2,dr_true_p"), 7, 12, serial);
  const auto b = run_cell(spec, parse_methods("dr_pseudo:2,dr_true_p"), 7, 12, parallel);
  CHECK(emit_table(a, TableFormat::csv) == emit_table(b, TableFormat::csv));
}

TEST_CASE("a method failing too often fails the cell", "[simulate]") {
  SimOptions opts;
  opts.base.grid = BandwidthGrid({1e-9});
  CHECK_THROWS_AS(run_cell(small(DgpModel::m1_additive, 0), parse_methods("dr_pseudo:loo"), 3, 1, opts), ComputeError);
  CHECK_THROWS_AS(run_cell(small(DgpModel::m1_additive, 0), parse_methods("twfe"), 0, 1), ConfigError);
}

TEST_CASE("tables round trip and keep method order", "[simulate]") {
  const auto rep = run_cell(small(DgpModel::m2_interactive, 0), parse_methods("dr_pseudo:loo,twfe,dr_true_p"), 3, 4);
  const std::string csv = emit_table(rep, TableFormat::csv);
  const auto back = load_report_csv(csv);
  CHECK(emit_table(back, TableFormat::csv) == csv);
  REQUIRE(back.methods.size() == 3);
  CHECK(back.methods[0].name == "dr_pseudo:loo");
  CHECK(back.methods[1].name == "twfe");
  const std::string text = emit_table(rep, TableFormat::text);
  CHECK(text.find("95% CI Coverage") != std::string::npos);
  CHECK(text.find("dr_pseudo:loo") < text.find("twfe"));
  CHECK_THROWS_AS(emit_table(SimReport{}, TableFormat::csv), ConfigError);
  CHECK_THROWS_AS(parse_table_format("xml"), ConfigError);
}

TEST_CASE("external columns merge into a matching cell only", "[simulate]") {
  auto rep = run_cell(small(DgpModel::m3_nonlinear_factor, 0), parse_methods("dr_true_p"), 2, 4);
  auto ext = load_report_csv("model,n,t0,method,replications,failures,median_abs_dev,coverage,median_ci_length\n"
                             "3,40,12,local_pca,500,0,0.2,0.9,0.8\n");
  merge_columns(rep, ext);
  CHECK(rep.methods.back().name == "local_pca");
  ext.n = 41;
  CHECK_THROWS_AS(merge_columns(rep, ext), ConfigError);
}

TEST_CASE("the bundled manifest lists every table cell", "[simulate]") {
  std::ifstream in(LATENTDR_DEFAULT_MANIFEST);
  REQUIRE(in);
  const auto cells = parse_manifest(in);
  CHECK(cells.size() == 26);
  std::set<std::string> stems;
  for (const auto& c : cells) {
    stems.insert(c.file_stem());
    const auto methods = parse_methods(c.methods);
    const bool has_twfe = methods.front().kind == MethodKind::twfe;
    CHECK(has_twfe == is_fixed_effects(c.model));
    CHECK(methods.size() == (has_twfe ? 6u : 5u));
  }
  CHECK(stems.size() == cells.size());
  CHECK(stems.contains("table5_model5_n250_t050"));
  CHECK(stems.contains("table1_model1_n50_t050"));
}

TEST_CASE("manifest lines are checked", "[simulate]") {
  std::istringstream bad("table1 model=1 n=50 methods=twfe\n");
  CHECK_THROWS_AS(parse_manifest(bad), ParseError);
  std::istringstream unknown("table1 model=1 n=50 t0=50 methods=twfe colour=red\n");
  CHECK_THROWS_AS(parse_manifest(unknown), ParseError);
  std::istringstream ok("# comment\n\ntable9 model=2 n=8 t0=5 methods=twfe reps=3 # trailing\n");
  const auto cells = parse_manifest(ok);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].reps == 3u);
}
