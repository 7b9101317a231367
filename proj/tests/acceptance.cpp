// Acceptance suite: runs the twelve acceptance criteria and prints one
// PASS/FAIL line per criterion. Tolerances come from the versioned threshold
// table. The exit status is 0 once every criterion has run (failures are
// reported, not fatal); --strict makes any failure exit 1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "shom/expand.hpp"
#include "shom/green.hpp"
#include "shom/torus.hpp"
#include "shom/xharness.hpp"

using namespace shom;
using nlohmann::json;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

const Thresholds& T() { return default_thresholds(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Every verdict of a harness run, compactly.
std::string verdict_text(const ExperimentResult& r) {
  std::ostringstream s;
  for (const auto& v : r.verdicts) s << (s.tellp() ? "; " : "") << v.name << " = " << fmt("%.4g", v.value) << " (" << v.rule << ")";
  for (const auto& e : r.errors) s << "; error: " << e;
  return s.str();
}

std::string g_out;  // report directory, empty for none

ExperimentResult run(const json& j) {
  ExperimentResult r = run_experiment(ExperimentConfig::from_json(j));
  if (!g_out.empty()) {
    ReportBundle b;
    b.experiments.push_back(r);
    emit_report(b, g_out + "/" + r.name);
  }
  return r;
}

Outcome from_result(const ExperimentResult& r) { return {r.passed(), verdict_text(r)}; }

const json kTrig = {{"family", "trig"}, {"params", {{"rho", 0.5}}}};

// --- 1 ---------------------------------------------------------------------

Outcome constant_degeneracy() {
  const double zero = T().at("zero_error");
  const int d = 2;
  // a non-symmetric constant tensor: 1.5 I plus 0.3 in the (0, 1, 0, 1) entry
  json tensor = json::array();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int al = 0; al < d; ++al)
        for (int be = 0; be < d; ++be)
          tensor.push_back((i == j && al == be ? 1.5 : 0.0) + (i == 0 && j == 1 && al == 0 && be == 1 ? 0.3 : 0.0));
  const auto a = make_coefficient("constant", {{"tensor", tensor}}, d);
  const Tensor4 A = a.constant_value();
  double worst = 0.0;
  auto take = [&](double v) { worst = std::max(worst, std::abs(v)); };

  TorusGrid g;
  g.d = d;
  g.n = 32;
  const CorrectorSet c = homogenize(a, g);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      take(c.pi(i, j).max_abs());
      for (int k = 0; k < d; ++k) {
        take(c.chi(i, j, k).max_abs());
        take(c.q(i, j, k).max_abs());
        for (int al = 0; al < d; ++al) {
          take(c.b(i, j, k, al).max_abs());
          for (int be = 0; be < d; ++be) take(c.phi(i, j, k, al, be).max_abs());
        }
      }
    }
  Tensor4 diff = c.effective();
  diff -= A;
  take(diff.max_abs());

  const BoxDomain dom = BoxDomain::cube(d, 32);
  const double eps = 0.25;
  const CorrectorSet cell = box_cell_correctors(a, eps, dom);
  const DirichletCorrectorSet dc = solve_dirichlet_correctors(a, eps, dom, cell);
  take(corrector_deviation(dc));
  StokesProblem pb;
  pb.domain = dom;
  pb.coefficient = a;
  pb.eps = eps;
  pb.force = [](const double* x, double* F) {
    F[0] = std::sin(kPi * x[0]) * x[1];
    F[1] = std::cos(2.0 * x[0] + x[1]);
  };
  const StokesSolution ue = solve_stokes(pb);
  const StokesSolution u0 = solve_homogenized(pb, cell.effective());
  for (Instantiation tag : {Instantiation::Dirichlet, Instantiation::Periodic}) {
    const ExpansionFields f = build_expansion(ue, u0, cell, &dc, tag, eps);
    take(f.w_max);
    take(f.tau_max);
  }
  const double y[3] = {0.5, 0.5, 0.0};
  GreenExpansionOptions go;
  go.separation_eps = 1.0;
  for (const auto& row : green_expansion_errors(a, eps, dom, y, {0.25}, cell, dc, go)) {
    take(row.eG);
    take(row.eDG);
    take(row.ePi);
    take(row.ePi1);
  }
  const DirichletCorrectorSet dca = solve_dirichlet_correctors(a, eps, dom, cell, {.adjoint = true});
  for (const auto& row : second_derivative_expansion_errors(a, eps, dom, y, {0.25}, cell, dc, dca, go)) {
    take(row.eDDG);
    take(row.eDyPi);
  }
  return {worst <= zero, "max error " + fmt("%.3e", worst) + " (<= " + fmt("%.0e", zero) + ")"};
}

// --- 2, 3 ------------------------------------------------------------------

Outcome cell_problem() {
  Outcome o{true, ""};
  for (const char* scheme : {"fd", "spectral"}) {
    const ExperimentResult r =
        run({{"kind", "cell"}, {"name", std::string("cell_") + scheme}, {"coefficient", kTrig},
             {"probes", {{"scheme", scheme}, {"n", {16, 32, 64, 128}}}}});
    o.passed = o.passed && r.passed();
    o.detail += std::string(o.detail.empty() ? "" : " | ") + scheme + ": " + verdict_text(r);
  }
  return o;
}

Outcome dual_identity() {
  const double tol = T().at("dual.identity");
  Outcome o{true, ""};
  for (int d : {2, 3}) {
    TorusGrid g;
    g.d = d;
    g.n = d == 2 ? 64 : 16;
    const CorrectorSet c = homogenize(make_coefficient("trig", {{"rho", 0.5}, {"skew", 0.3}}, d), g);
    const CellDiagnostics dg = diagnose(c);
    const bool ok = dg.dual_identity <= tol && dg.q_identity <= tol && dg.antisymmetry == 0.0;
    o.passed = o.passed && ok;
    o.detail += (o.detail.empty() ? "" : " | ") + std::string("d=") + std::to_string(d) +
                ": dual " + fmt("%.2e", dg.dual_identity) + ", q " + fmt("%.2e", dg.q_identity) + ", antisymmetry " +
                fmt("%.1e", dg.antisymmetry);
  }
  return o;
}

// --- 4 ---------------------------------------------------------------------

// u = (pi sin^2(pi x) sin(2 pi y), -pi sin(2 pi x) sin^2(pi y)), p = cos(pi x) cos(pi y).
void mms_force(const double* x, double* F) {
  const double P = kPi, X = x[0], Y = x[1];
  const double lap1 = P * (2 * P * P * std::cos(2 * P * X) * std::sin(2 * P * Y) -
                           4 * P * P * std::pow(std::sin(P * X), 2) * std::sin(2 * P * Y));
  const double lap2 = -P * (-4 * P * P * std::sin(2 * P * X) * std::pow(std::sin(P * Y), 2) +
                            2 * P * P * std::sin(2 * P * X) * std::cos(2 * P * Y));
  F[0] = -lap1 - P * std::sin(P * X) * std::cos(P * Y);
  F[1] = -lap2 - P * std::cos(P * X) * std::sin(P * Y);
}

Outcome manufactured_order() {
  std::vector<std::array<double, 2>> pts;
  std::string errs;
  for (int n : {32, 64, 128}) {
    StokesProblem pb;
    pb.domain = BoxDomain::cube(2, n);
    pb.coefficient = make_coefficient("constant", {}, 2);
    pb.force = mms_force;
    const StokesSolution s = solve_stokes(pb);
    const mac::Layout L(pb.domain.grid());
    Vec e = mac::sample_velocity(L, [](int a, const double* x) {
      return a == 0 ? kPi * std::pow(std::sin(kPi * x[0]), 2) * std::sin(2 * kPi * x[1])
                    : -kPi * std::sin(2 * kPi * x[0]) * std::pow(std::sin(kPi * x[1]), 2);
    });
    for (std::size_t k = 0; k < e.size(); ++k) e[k] -= s.u[k];
    pts.push_back({1.0 / n, velocity_l2(pb.domain, e)});
    errs += (errs.empty() ? "" : ", ") + fmt("%.3e", pts.back()[1]);
  }
  const RateFit f = fit_rate(pts, "N in {32, 64, 128}");
  const Verdict v = make_verdict("mms.order", f.slope, "in", T().at("mms.order") - T().at("mms.order_window"),
                                 T().at("mms.order") + T().at("mms.order_window"));
  return {v.passed, "L2 errors " + errs + "; order " + fmt("%.3f", f.slope) + " (" + v.rule + ")"};
}

// --- 5, 6 ------------------------------------------------------------------

const ExperimentResult& rates_run() {
  static const ExperimentResult r = run({{"kind", "rates"},
                                         {"coefficient", kTrig},
                                         {"eps", {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64}},
                                         {"resolution", {{"rule", "fixed"}, {"n", 512}}},
                                         {"probes", {{"force", "smooth"}}}});
  return r;
}

Outcome rate_criterion(const std::string& key) {
  const ExperimentResult& r = rates_run();
  if (!r.errors.empty()) return {false, verdict_text(r)};
  for (const auto& v : r.verdicts)
    if (v.name.rfind(key, 0) == 0) return {v.passed, v.name + " = " + fmt("%.4f", v.value) + " (" + v.rule + ")"};
  return {false, "no verdict " + key};
}

// --- 7 ---------------------------------------------------------------------

Outcome green_symmetry() {
  const auto a = make_coefficient("trig", {{"rho", 0.5}, {"skew", 0.3}}, 2);
  const double eps = 0.125, off = 1.0 / 6.0;
  // one sixth of a cell off the centres at both resolutions
  const double x[3] = {(19.5 + off) / 64, (30.5 + off) / 64, 0}, y[3] = {(42.5 + off) / 64, (33.5 + off) / 64, 0};
  const double s64 = symmetry_check(a, eps, BoxDomain::cube(2, 64), x, y).rel_error;
  const double s128 = symmetry_check(a, eps, BoxDomain::cube(2, 128), x, y).rel_error;
  auto F = [](const double* z, double* f) {
    const double r2 = (std::pow(z[0] - 0.35, 2) + std::pow(z[1] - 0.5, 2)) / 0.04;
    const double b = r2 < 1 ? std::pow(1 - r2, 4) : 0.0;
    f[0] = b;
    f[1] = -0.5 * b;
  };
  const double lo[3] = {0.15, 0.3, 0}, hi[3] = {0.55, 0.7, 0}, px[3] = {0.72, 0.53, 0};
  const RepresentationCheck rep = representation_check(a, eps, BoxDomain::cube(2, 64), F, lo, hi, px, 4);
  const Verdict v1 = make_verdict("symmetry", s64, "<=", T().at("green.symmetry"));
  const Verdict v2 = make_verdict("halving", s64 / s128, "in", T().at("green.symmetry_halving_lo"),
                                  T().at("green.symmetry_halving_hi"));
  return {v1.passed && v2.passed && rep.passed(),
          "symmetry N=64 " + fmt("%.3e", s64) + " (" + v1.rule + "), N=128 " + fmt("%.3e", s128) + ", halving " +
              fmt("%.2f", s64 / s128) + " (" + v2.rule + "); representation error " + fmt("%.3e", rep.error) +
              " <= bound " + fmt("%.3e", rep.bound) + (rep.passed() ? "" : " violated")};
}

// --- 8 - 11 ----------------------------------------------------------------

Outcome green_decay() {
  return from_result(run({{"kind", "green-decay"},
                          {"coefficient", kTrig},
                          {"dim", 3},
                          {"eps", {0.125}},
                          {"resolution", {{"rule", "fixed"}, {"n", 48}}}}));
}

Outcome expansion_scaling() {
  return from_result(run({{"kind", "expansion"},
                          {"coefficient", kTrig},
                          {"dim", 3},
                          {"eps", {0.25, 0.125, 0.0625}},
                          {"resolution", {{"rule", "fixed"}, {"n", 48}}},
                          {"probes", {{"radii", {0.25}}, {"separation_eps", 1.0}}}}));
}

Outcome divergence_log() {
  const ExperimentResult r = run({{"kind", "divergence-log"},
                                  {"eps", {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128}},
                                  {"resolution", {{"rule", "per-period"}, {"cells_per_period", 8}}},
                                  {"probes", {{"psi", "cos"}}}});
  Outcome o = from_result(r);
  if (r.constants.contains("log_model"))
    o.detail += "; power model rss " + fmt("%.3e", r.constants["power_model"]["rss"].get<double>());
  return o;
}

Outcome max_principle() {
  const ExperimentResult r = run({{"kind", "maxprinciple"},
                                  {"coefficient", kTrig},
                                  {"eps", {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64}},
                                  {"resolution", {{"rule", "per-period"}, {"cells_per_period", 8}}}});
  Outcome o = from_result(r);
  if (!r.tables.empty()) {
    std::string s;
    for (const auto& row : r.tables[0].rows) s += (s.empty() ? "" : ", ") + fmt("%.4f", row[3]);
    o.detail += "; ratios " + s;
  }
  return o;
}

// --- 12 --------------------------------------------------------------------

Outcome stokeslet() {
  const int d = 3, n = 48;
  const FundamentalColumn fc = fundamental_column(make_coefficient("constant", {}, d), 1.0, d, 1.0, n, 0);
  const double h = 1.0 / n, r_lo = 8.0 * h, r_hi = fc.measure_radius;
  // the geometric middle third of [8h, L/4]
  const double q = std::cbrt(r_hi / r_lo);
  double ev = 0.0, ep = 0.0;
  for (double r : geometric_radii(r_lo * q, r_lo * q * q, 3)) {
    double pmax = 0.0, pdev = 0.0;
    for (const auto& dir : sphere_directions(d, r / h)) {
      const double rv[3] = {r * dir[0], r * dir[1], r * dir[2]};
      double num = 0.0, den = 0.0;
      for (int al = 0; al < d; ++al) {
        const double s = stokeslet_velocity(d, al, 0, rv);
        num += std::pow(fc.velocity(al, rv) - s, 2);
        den += s * s;
      }
      ev = std::max(ev, std::sqrt(num / den));
      const double ps = stokeslet_pressure(d, 0, rv);
      pmax = std::max(pmax, std::abs(ps));
      pdev = std::max(pdev, std::abs(fc.pressure(rv) - ps));
    }
    ep = std::max(ep, pdev / pmax);
  }
  const Verdict v = make_verdict("velocity", ev, "<=", T().at("stokeslet.velocity"));
  const Verdict p = make_verdict("pressure", ep, "<=", T().at("stokeslet.pressure"));
  return {v.passed && p.passed, "radii [" + fmt("%.4f", r_lo * q) + ", " + fmt("%.4f", r_lo * q * q) +
                                    "]: velocity " + fmt("%.4f", ev) + " (" + v.rule + "), pressure " + fmt("%.4f", ep) +
                                    " (" + p.rule + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shom acceptance suite"};
  std::vector<int> only;
  bool strict = false;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--out", g_out, "write the harness reports under this directory");
  app.add_flag("--strict", strict, "exit 1 when a criterion fails");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"constant-coefficient degeneracy", constant_degeneracy},
      {"cell problem", cell_problem},
      {"dual-corrector identities", dual_identity},
      {"manufactured-solution order", manufactured_order},
      {"L2 homogenization rate", [] { return rate_criterion("rates.l2_slope"); }},
      {"corrected H1 rate", [] { return rate_criterion("rates.corrected_slope"); }},
      {"Green symmetry and representation", green_symmetry},
      {"Green decay exponents", green_decay},
      {"expansion-error scaling", expansion_scaling},
      {"divergence log-growth", divergence_log},
      {"max principle stability", max_principle},
      {"Stokeslet oracle", stokeslet}};
  const std::set<int> wanted(only.begin(), only.end());
  std::printf("threshold table v%d\n", T().version);
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.passed) ++failed;
    std::printf("%-4s %2d %s: %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str(), sec);
    std::fflush(stdout);
  }
  std::printf("%d failed\n", failed);
  return strict && failed > 0 ? 1 : 0;
}
