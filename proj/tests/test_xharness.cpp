#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "shom/xharness.hpp"

using namespace shom;
using nlohmann::json;

namespace {

std::vector<std::array<double, 2>> sample(const std::vector<double>& eps, double (*f)(double)) {
  std::vector<std::array<double, 2>> pts;
  for (double e : eps) pts.push_back({e, f(e)});
  return pts;
}

const std::vector<double> kDyadic = {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};

}  // namespace

TEST_CASE("rate fits recover exact power laws") {
  const RateFit f1 = fit_rate(sample(kDyadic, [](double e) { return 3.0 * e; }));
  CHECK(f1.slope == doctest::Approx(1.0));
  CHECK(f1.intercept == doctest::Approx(std::log(3.0)));
  CHECK(f1.r2 == doctest::Approx(1.0));
  CHECK(f1.slope_stderr < 1e-10);
  const RateFit f2 = fit_rate(sample(kDyadic, [](double e) { return 0.5 * e * e; }));
  CHECK(f2.slope == doctest::Approx(2.0));
  CHECK(f2.points() == 6);
}

TEST_CASE("eps log(1/eps) fits to a slope between its local slopes") {
  // The local log-log slope is 1 - 1 / log(1/eps), between 0.52 and 0.82 on this range.
  const RateFit f = fit_rate(sample(kDyadic, [](double e) { return e * std::log(1.0 / e); }));
  CHECK(f.slope > 1.0 - 1.0 / std::log(8.0));
  CHECK(f.slope < 1.0 - 1.0 / std::log(256.0));
}

TEST_CASE("rate fits drop non-positive points and need three") {
  std::vector<std::array<double, 2>> pts = {{0.5, 0.5}, {0.25, 0.0}, {0.125, 0.125}, {0.0625, 0.0625}};
  const RateFit f = fit_rate(pts);
  CHECK(f.points() == 3);
  CHECK_FALSE(f.notes.empty());
  CHECK(f.slope == doctest::Approx(1.0));
  pts = {{0.5, 0.5}, {0.25, -1.0}, {0.125, 0.125}};
  CHECK_THROWS_AS(fit_rate(pts), FitError);
  const RateFit r = RateFit::from_json(f.to_json());
  CHECK(r.slope == f.slope);
  CHECK(r.notes == f.notes);
}

TEST_CASE("growth models") {
  const std::vector<double> eps = {0.25, 0.125, 0.0625, 0.03125};
  std::vector<double> ylog, ypow;
  for (double e : eps) {
    ylog.push_back(2.0 + 3.0 * std::log(1.0 / e));
    ypow.push_back(5.0 * std::pow(e, -0.5));
  }
  const GrowthModels g = compare_growth_models(eps, ylog);
  CHECK(g.a == doctest::Approx(2.0));
  CHECK(g.b == doctest::Approx(3.0));
  CHECK(g.log_rss < 1e-20);
  CHECK(g.power_rss > g.log_rss);
  const GrowthModels h = compare_growth_models(eps, ypow);
  CHECK(h.c == doctest::Approx(5.0));
  CHECK(h.power_rss < 1e-20);
  CHECK(h.log_rss > h.power_rss);
}

TEST_CASE("verdicts") {
  CHECK(make_verdict("a", 1.0, ">=", 0.9).passed);
  CHECK_FALSE(make_verdict("a", 0.8, ">=", 0.9).passed);
  CHECK(make_verdict("a", 2.0, "in", 1.6, 2.6).passed);
  CHECK_FALSE(make_verdict("a", 2.7, "in", 1.6, 2.6).passed);
  CHECK_FALSE(make_verdict("a", NAN, "<=", 1.0).passed);
  CHECK_THROWS_AS(make_verdict("a", 1.0, "~", 1.0), ConfigError);
  const Verdict v = Verdict::from_json(make_verdict("b", 0.5, "<", 1.0).to_json());
  CHECK(v.name == "b");
  CHECK(v.passed);
}

TEST_CASE("config validation") {
  json base = {{"kind", "rates"}, {"eps", {0.25, 0.125, 0.0625}}, {"resolution", {{"rule", "fixed"}, {"n", 128}}}};
  CHECK_NOTHROW(ExperimentConfig::from_json(base));
  json j = base;
  j["eps"] = {0.25, 0.1};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j["eps"] = {0.125, 0.25};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["resolution"]["n"] = 64;  // h = 1/64 > eps_min / 8
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["colour"] = "red";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["thresholds"] = {{"rates.l2_slope", 0.8}};
  CHECK(ExperimentConfig::from_json(j).thresholds.at("rates.l2_slope") == 0.8);
  j["thresholds"] = {{"rates.nonsense", 0.8}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["kind"] = "tea";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  const ExperimentConfig c = ExperimentConfig::from_json(base);
  CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("per-period resolution") {
  Resolution r;
  r.rule = "per-period";
  r.cells_per_period = 8;
  CHECK(r.cells(0.125) == 64);
  CHECK(r.cells(1.0 / 32) == 256);
}

TEST_CASE("summary round trip and report files") {
  ReportBundle b;
  ExperimentResult r;
  r.name = "demo";
  r.kind = ExperimentKind::Rates;
  r.tables.push_back({"rates", {"eps", "l2_err", "h1_err", "pressure_err"}, {{0.25, 1.0, 2.0, NAN}}});
  r.fits["l2"] = fit_rate(sample(kDyadic, [](double e) { return e; }));
  r.verdicts.push_back(make_verdict("l2", 1.0, ">=", 0.9));
  r.constants["C"] = {{"value", 1.5}, {"sweep", "eps in [1/8, 1/256]"}};
  b.experiments.push_back(r);
  const ReportBundle back = bundle_from_summary(summary_json(b));
  REQUIRE(back.experiments.size() == 1u);
  CHECK(back.experiments[0].name == "demo");
  CHECK(back.experiments[0].fits.at("l2").slope == doctest::Approx(1.0));
  CHECK(back.experiments[0].verdicts[0].passed);
  CHECK(back.passed());

  const auto dir = std::filesystem::temp_directory_path() / "shom_test_report";
  std::filesystem::remove_all(dir);
  emit_report(b, dir.string());
  std::ifstream csv(dir / "demo_rates.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "eps,l2_err,h1_err,pressure_err");
  CHECK(row.find("nan") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "demo_rates.dat"));
  CHECK(read_summary((dir / "summary.json").string())["format"] == "shom-summary");
  std::filesystem::remove_all(dir);
}

TEST_CASE("an empty bundle passes") {
  ReportBundle b;
  CHECK(b.passed());
  CHECK_FALSE(b.solver_error());
}

TEST_CASE("rates with constant coefficients are degenerate and deterministic") {
  json j = {{"kind", "rates"},
            {"coefficient", {{"family", "constant"}}},
            {"eps", {0.25, 0.125, 0.0625}},
            {"resolution", {{"rule", "fixed"}, {"n", 128}}},
            {"probes", {{"force", "random"}}},
            {"seed", 7}};
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  const ExperimentResult r1 = run_experiment(c);
  CHECK(r1.errors.empty());
  REQUIRE_FALSE(r1.verdicts.empty());
  for (const auto& v : r1.verdicts) {
    if (v.name.rfind("rates.", 0) == 0 && v.name.find("slope") != std::string::npos) CHECK(v.name.find("degenerate") != std::string::npos);
  }
  const ExperimentResult r2 = run_experiment(c);
  REQUIRE(r1.tables.size() == r2.tables.size());
  for (std::size_t k = 0; k < r1.tables.size(); ++k) CHECK(r1.tables[k].rows == r2.tables[k].rows);
}

TEST_CASE("mollifier preserves constants") {
  const BoxDomain dom = BoxDomain::cube(2, 32);
  const Vec one(1024, 1.0);
  for (double v : mollify(dom, one, 0.1)) CHECK(v == doctest::Approx(1.0));
  CHECK_THROWS_AS(mollify(dom, one, 0.0), ConfigError);
}
