#include "shom/xharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "shom/coeff.hpp"
#include "shom/expand.hpp"
#include "shom/green.hpp"
#include "shom/torus.hpp"

namespace shom {

// ---------------------------------------------------------------------------
// Kinds and thresholds

namespace {

const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names = {
      {ExperimentKind::Cell, "cell"},
      {ExperimentKind::Rates, "rates"},
      {ExperimentKind::GreenDecay, "green-decay"},
      {ExperimentKind::Expansion, "expansion"},
      {ExperimentKind::DivergenceLog, "divergence-log"},
      {ExperimentKind::MaxPrinciple, "maxprinciple"}};
  return names;
}

}  // namespace

std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  throw ConfigError("unknown experiment kind '" + s +
                    "' (cell | rates | green-decay | expansion | divergence-log | maxprinciple)");
}

const Thresholds& default_thresholds() {
  static const Thresholds t = [] {
    Thresholds d;
    d.version = 1;
    d.values = {
        // constant-coefficient collapse, 10 * solver tolerance
        {"zero_error", 1e-8},
        // cell problem
        {"cell.residual", 1e-8},
        {"cell.fd_order", 2.0},
        {"cell.order_window", 0.3},
        {"cell.spectral_floor", 1e-11},
        {"cell.window_slack", 1e-10},
        {"dual.identity", 1e-8},
        // manufactured solution
        {"mms.order", 2.0},
        {"mms.order_window", 0.2},
        // rates
        {"rates.l2_slope", 0.9},
        {"rates.corrected_slope", 0.85},
        // Green's functions
        {"green.symmetry", 0.05},
        {"green.symmetry_halving_lo", 1.6},
        {"green.symmetry_halving_hi", 2.6},
        {"decay.window_g", 0.25},
        {"decay.window_first", 0.3},
        {"decay.window_second", 0.35},
        {"stokeslet.velocity", 0.10},
        {"stokeslet.pressure", 0.15},
        // expansions
        {"expansion.halving_lo", 1.6},
        {"expansion.halving_hi", 2.6},
        {"expansion.drift", 2.0},
        // max principle
        {"maxprinciple.variation", 1.5},
    };
    return d;
  }();
  return t;
}

double Thresholds::at(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError("no threshold '" + key + "'");
  return it->second;
}

nlohmann::json Thresholds::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  j["version"] = version;
  for (const auto& [k, v] : values) j[k] = v;
  return j;
}

Thresholds Thresholds::from_json(const nlohmann::json& j, const Thresholds& base) {
  Thresholds t = base;
  if (!j.is_object()) throw ConfigError("thresholds must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "version") {
      t.version = it.value().get<int>();
      continue;
    }
    if (!base.values.count(it.key())) throw ConfigError("unknown threshold '" + it.key() + "'");
    t.values[it.key()] = it.value().get<double>();
  }
  return t;
}

// ---------------------------------------------------------------------------
// Config

int Resolution::cells(double eps) const {
  if (rule == "fixed") return n;
  if (rule == "per-period") return static_cast<int>(std::lround(cells_per_period / eps));
  throw ConfigError("unknown resolution rule '" + rule + "' (fixed | per-period)");
}

void ExperimentConfig::validate() const {
  if (dim != 2 && dim != 3) throw ConfigError("dim must be 2 or 3");
  for (std::size_t k = 0; k < eps.size(); ++k) {
    const double e = eps[k];
    if (!(e > 0.0) || e > 1.0) throw ConfigError("eps values must lie in (0, 1]");
    const double l = std::log2(e);
    if (std::abs(l - std::round(l)) > 1e-9) throw ConfigError("eps list must be dyadic");
    if (k > 0 && !(e < eps[k - 1])) throw ConfigError("eps list must be sorted descending");
  }
  if (kind != ExperimentKind::Cell && eps.empty()) throw ConfigError("eps list is empty");
  (void)resolution.cells(1.0);
  if (kind == ExperimentKind::Rates || kind == ExperimentKind::MaxPrinciple ||
      kind == ExperimentKind::DivergenceLog) {
    for (double e : eps)
      if (1.0 / resolution.cells(e) > e / 8.0 * (1.0 + 1e-12))
        throw ConfigError("resolution violates h <= eps / 8 at eps = " + std::to_string(e));
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"name", name},
          {"coefficient", coefficient},
          {"dim", dim},
          {"eps", eps},
          {"resolution", {{"rule", resolution.rule}, {"n", resolution.n}, {"cells_per_period", resolution.cells_per_period}}},
          {"probes", probes},
          {"out_dir", out_dir},
          {"seed", seed},
          {"threads", threads},
          {"cache_dir", cache_dir},
          {"thresholds", thresholds.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys = {"kind",  "name",    "coefficient", "dim",       "eps",       "resolution",
                                                "probes", "out_dir", "seed",        "threads",   "cache_dir", "thresholds"};
  if (!j.is_object()) throw ConfigError("experiment config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) throw ConfigError("unknown config key '" + it.key() + "'");
  ExperimentConfig c;
  try {
    c.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    c.name = j.value("name", to_string(c.kind));
    if (c.name.empty()) c.name = to_string(c.kind);
    if (j.contains("coefficient")) c.coefficient = j["coefficient"];
    c.dim = j.value("dim", 2);
    if (j.contains("eps")) c.eps = j["eps"].get<std::vector<double>>();
    if (j.contains("resolution")) {
      const auto& r = j["resolution"];
      c.resolution.rule = r.value("rule", std::string("fixed"));
      c.resolution.n = r.value("n", 64);
      c.resolution.cells_per_period = r.value("cells_per_period", 8);
    }
    if (j.contains("probes")) c.probes = j["probes"];
    c.out_dir = j.value("out_dir", std::string("."));
    c.seed = j.value("seed", std::uint64_t{0});
    c.threads = j.value("threads", 1);
    c.cache_dir = j.value("cache_dir", std::string());
    if (j.contains("thresholds")) c.thresholds = Thresholds::from_json(j["thresholds"], default_thresholds());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "': " + std::strerror(errno));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Fits

nlohmann::json RateFit::to_json() const {
  return {{"log_x", x},
          {"log_y", y},
          {"slope", slope},
          {"intercept", intercept},
          {"slope_stderr", slope_stderr},
          {"r2", r2},
          {"window", window},
          {"notes", notes}};
}

RateFit RateFit::from_json(const nlohmann::json& j) {
  RateFit f;
  f.x = j.at("log_x").get<std::vector<double>>();
  f.y = j.at("log_y").get<std::vector<double>>();
  f.slope = j.at("slope").get<double>();
  f.intercept = j.at("intercept").get<double>();
  f.slope_stderr = j.at("slope_stderr").get<double>();
  f.r2 = j.at("r2").get<double>();
  f.window = j.at("window").get<std::string>();
  f.notes = j.at("notes").get<std::vector<std::string>>();
  return f;
}

RateFit fit_rate(const std::vector<std::array<double, 2>>& points, const std::string& window) {
  RateFit f;
  f.window = window;
  for (const auto& p : points) {
    if (!(p[0] > 0.0) || !(p[1] > 0.0)) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "point (%.6g, %.6g) excluded: non-positive", p[0], p[1]);
      f.notes.emplace_back(buf);
      continue;
    }
    f.x.push_back(std::log(p[0]));
    f.y.push_back(std::log(p[1]));
  }
  const int n = f.points();
  if (n < 3) throw FitError("rate fit needs at least 3 positive points, got " + std::to_string(n));
  double mx = 0.0, my = 0.0;
  for (int k = 0; k < n; ++k) {
    mx += f.x[k];
    my += f.y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int k = 0; k < n; ++k) {
    sxx += (f.x[k] - mx) * (f.x[k] - mx);
    sxy += (f.x[k] - mx) * (f.y[k] - my);
    syy += (f.y[k] - my) * (f.y[k] - my);
  }
  if (sxx == 0.0) throw FitError("rate fit needs distinct abscissae");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (int k = 0; k < n; ++k) rss += std::pow(f.y[k] - f.intercept - f.slope * f.x[k], 2);
  f.slope_stderr = n > 2 ? std::sqrt(rss / (n - 2) / sxx) : 0.0;
  f.r2 = syy > 0.0 ? 1.0 - rss / syy : 1.0;
  return f;
}

GrowthModels compare_growth_models(const std::vector<double>& eps, const std::vector<double>& y, double eta) {
  if (eps.size() != y.size() || eps.size() < 3) throw FitError("growth models need at least 3 points");
  const std::size_t n = eps.size();
  GrowthModels g;
  g.eta = eta;
  double ml = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ml += std::log(1.0 / eps[k]);
    my += y[k];
  }
  ml /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double l = std::log(1.0 / eps[k]);
    sxx += (l - ml) * (l - ml);
    sxy += (l - ml) * (y[k] - my);
  }
  g.b = sxy / sxx;
  g.a = my - g.b * ml;
  double spp = 0.0, spy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double p = std::pow(eps[k], -eta);
    spp += p * p;
    spy += p * y[k];
    g.log_rss += std::pow(y[k] - g.a - g.b * std::log(1.0 / eps[k]), 2);
  }
  g.c = spy / spp;
  for (std::size_t k = 0; k < n; ++k) g.power_rss += std::pow(y[k] - g.c * std::pow(eps[k], -eta), 2);
  return g;
}

// ---------------------------------------------------------------------------
// Verdicts and bundles

nlohmann::json Verdict::to_json() const { return {{"name", name}, {"value", value}, {"rule", rule}, {"passed", passed}}; }

Verdict Verdict::from_json(const nlohmann::json& j) {
  Verdict v;
  v.name = j.at("name").get<std::string>();
  v.value = j.at("value").get<double>();
  v.rule = j.at("rule").get<std::string>();
  v.passed = j.at("passed").get<bool>();
  return v;
}

Verdict make_verdict(const std::string& name, double value, const std::string& op, double lo, double hi) {
  Verdict v;
  v.name = name;
  v.value = value;
  char buf[96];
  if (op == "in") {
    std::snprintf(buf, sizeof buf, "in [%.6g, %.6g]", lo, hi);
    v.passed = value >= lo && value <= hi;
  } else {
    std::snprintf(buf, sizeof buf, "%s %.6g", op.c_str(), lo);
    if (op == ">=")
      v.passed = value >= lo;
    else if (op == "<=")
      v.passed = value <= lo;
    else if (op == "<")
      v.passed = value < lo;
    else if (op == ">")
      v.passed = value > lo;
    else
      throw ConfigError("unknown verdict operator '" + op + "'");
  }
  v.rule = buf;
  if (!std::isfinite(value)) v.passed = false;
  return v;
}

bool ExperimentResult::passed() const {
  if (!errors.empty()) return false;
  for (const auto& v : verdicts)
    if (!v.passed) return false;
  return true;
}

bool ReportBundle::passed() const {
  for (const auto& e : experiments)
    if (!e.passed()) return false;
  return true;
}

bool ReportBundle::solver_error() const {
  for (const auto& e : experiments)
    if (!e.errors.empty()) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

CoefficientField coefficient_of(const ExperimentConfig& c) {
  nlohmann::json j = c.coefficient;
  if (!j.contains("dim")) j["dim"] = c.dim;
  return coefficient_from_config(j);
}

// Smooth body force. "smooth" is a fixed field; "random" draws a few Fourier
// modes from the seed.
PointFn body_force(const ExperimentConfig& c) {
  const int d = c.dim;
  const std::string kind = c.probes.value("force", std::string("smooth"));
  if (kind == "smooth")
    return [d](const double* x, double* F) {
      F[0] = std::sin(kPi * x[0]) * x[1];
      F[1] = std::cos(2.0 * x[0] + x[1]);
      if (d == 3) F[2] = std::sin(kPi * x[2]) * (x[0] - x[1]);
    };
  if (kind == "random") {
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> amp(static_cast<std::size_t>(3 * 3 * 3));
    for (double& a : amp) a = u(rng);
    return [d, amp](const double* x, double* F) {
      for (int al = 0; al < d; ++al) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k)
          for (int a = 0; a < d; ++a) s += amp[(al * 3 + k) * 3 + a] * std::sin((k + 1) * kPi * x[a]);
        F[al] = s;
      }
    };
  }
  throw ConfigError("unknown force '" + kind + "' (smooth | random)");
}

std::string sweep_text(const std::vector<double>& eps) {
  std::ostringstream s;
  s << "eps in {";
  for (std::size_t k = 0; k < eps.size(); ++k) s << (k ? ", " : "") << "1/" << std::lround(1.0 / eps[k]);
  s << "}";
  return s.str();
}

void capture(ExperimentResult& r, const std::string& where, const std::exception& e) {
  r.errors.push_back(where + ": " + e.what());
}

// Fit y against eps, or a degenerate verdict when every y is below the zero tolerance.
void rate_verdict(ExperimentResult& r, const std::string& key, const std::vector<double>& eps,
                  const std::vector<double>& y, double min_slope, double zero, const std::string& window) {
  const double ymax = *std::max_element(y.begin(), y.end());
  if (ymax <= zero) {
    r.verdicts.push_back(make_verdict(key + " (degenerate: zero error)", ymax, "<=", zero));
    return;
  }
  std::vector<std::array<double, 2>> pts;
  for (std::size_t k = 0; k < eps.size(); ++k) pts.push_back({eps[k], y[k]});
  try {
    const RateFit f = fit_rate(pts, window);
    r.fits[key] = f;
    r.verdicts.push_back(make_verdict(key, f.slope, ">=", min_slope));
  } catch (const FitError& e) {
    capture(r, key, e);
  }
}

// --- cell ------------------------------------------------------------------

void run_cell(const ExperimentConfig& c, ExperimentResult& r) {
  const CoefficientField a = coefficient_of(c);
  const CellScheme scheme = cell_scheme_from_string(c.probes.value("scheme", std::string("spectral")));
  const auto ns = c.probes.value("n", std::vector<int>{16, 32, 64, 128});
  const Thresholds& t = c.thresholds;
  CellOptions opt;
  opt.scheme = scheme;
  opt.threads = c.threads;
  opt.tol = c.probes.value("tol", 1e-10);
  Table tab{"cell", {"n", "max_residual", "ahat_change", "ahat_lo", "ahat_hi", "dual_identity", "q_identity"}, {}};
  std::vector<Tensor4> ahat;
  double max_res = 0.0, max_dual = 0.0;
  for (int n : ns) {
    TorusGrid g;
    g.d = c.dim;
    g.n = n;
    try {
      const CorrectorSet cs = homogenize(a, g, opt);
      const CellDiagnostics dg = diagnose(cs);
      CoefficientField::Info info;
      info.family = "homogenized";
      const EllipticityBounds w = check_ellipticity(CoefficientField::constant(cs.effective(), info), 1);
      double change = NAN;
      if (!ahat.empty()) {
        Tensor4 dlt = cs.effective();
        dlt -= ahat.back();
        change = dlt.max_abs();
      }
      ahat.push_back(cs.effective());
      max_res = std::max(max_res, dg.max_residual);
      const double dual = scheme == CellScheme::Spectral ? dg.dual_identity : NAN;
      if (scheme == CellScheme::Spectral) max_dual = std::max({max_dual, dg.dual_identity, dg.q_identity});
      tab.rows.push_back({double(n), dg.max_residual, change, w.lo, w.hi, dual, dg.q_identity});
      r.constants["ahat_n" + std::to_string(n)] = std::vector<double>(cs.effective().raw().begin(),
                                                                     cs.effective().raw().begin() + 81);
    } catch (const Error& e) {
      capture(r, "n=" + std::to_string(n), e);
    }
  }
  r.tables.push_back(tab);
  if (tab.rows.empty()) return;
  r.verdicts.push_back(make_verdict("cell.residual", max_res, "<=", t.at("cell.residual")));
  const EllipticityBounds win = a.info().bounds;
  const double slack = t.at("cell.window_slack");
  double lo = 1e300, hi = -1e300;
  for (const auto& row : tab.rows) {
    lo = std::min(lo, row[3]);
    hi = std::max(hi, row[4]);
  }
  r.verdicts.push_back(make_verdict("cell.ahat_lo", lo, ">=", win.lo - slack));
  r.verdicts.push_back(make_verdict("cell.ahat_hi", hi, "<=", win.hi + slack));
  if (scheme == CellScheme::Spectral) r.verdicts.push_back(make_verdict("cell.dual_identity", max_dual, "<=", t.at("dual.identity")));
  // self-convergence of successive changes
  std::vector<double> changes;
  for (std::size_t k = 1; k < tab.rows.size(); ++k) changes.push_back(tab.rows[k][2]);
  if (changes.size() < 2) {
    r.notes.push_back("self-convergence needs at least three resolutions");
    return;
  }
  if (scheme == CellScheme::FiniteDifference) {
    const double order = std::log2(changes[changes.size() - 2] / changes.back());
    const double want = t.at("cell.fd_order"), w = t.at("cell.order_window");
    r.verdicts.push_back(make_verdict("cell.fd_order", order, "in", want - w, want + w));
  } else {
    // spectral: every change at least halves until it reaches the floor
    const double floor = t.at("cell.spectral_floor");
    double worst = 0.0;
    for (std::size_t k = 1; k < changes.size(); ++k)
      if (changes[k] > floor) worst = std::max(worst, changes[k] / std::max(changes[k - 1], floor));
    r.verdicts.push_back(make_verdict("cell.spectral_decay", worst, "<=", 0.5));
  }
}

// --- rates -----------------------------------------------------------------

void run_rates(const ExperimentConfig& c, ExperimentResult& r) {
  const CoefficientField a = coefficient_of(c);
  const PointFn force = body_force(c);
  const Thresholds& t = c.thresholds;
  const double margin = c.probes.value("interior_margin", 0.25);
  Table rates{"rates", {"eps", "l2_err", "h1_err", "pressure_err"}, {}};
  Table extra{"rates_detail",
              {"eps", "n", "grad_diff_l2", "pressure_diff_l2_0", "w_l2", "w_max", "tau_max", "w_interior_dirichlet",
               "w_interior_periodic", "periodic_h1", "periodic_tau", "corrector_dev_over_eps", "lambda_constant",
               "iterations"},
              {}};
  std::vector<double> eps, l2, corrected, dev, inst;
  double max_res = 0.0;
  for (double e : c.eps) {
    const int n = c.resolution.cells(e);
    const BoxDomain dom = BoxDomain::cube(c.dim, n);
    try {
      const CorrectorSet cell = box_cell_correctors(a, e, dom);
      DirichletOptions dopt;
      dopt.threads = c.threads;
      const DirichletCorrectorSet dc = solve_dirichlet_correctors(a, e, dom, cell, dopt);
      StokesProblem pb;
      pb.domain = dom;
      pb.coefficient = a;
      pb.eps = e;
      pb.force = force;
      const StokesSolution ue = solve_stokes(pb);
      const StokesSolution u0 = solve_homogenized(pb, cell.effective());
      const ExpansionFields ex = build_expansion(ue, u0, cell, &dc, Instantiation::Dirichlet, e, margin);
      const ExpansionFields ep = build_expansion(ue, u0, cell, nullptr, Instantiation::Periodic, e, margin);
      max_res = std::max({max_res, ue.momentum_residual, u0.momentum_residual, dc.max_residual});
      const double lam = lambda_interior_constant(dc, cell, margin);
      eps.push_back(e);
      l2.push_back(ex.diff_l2);
      corrected.push_back(ex.w_h1 + ex.tau_l2_0);
      dev.push_back(corrector_deviation(dc) / e);
      inst.push_back(std::abs(ex.w_interior_l2 - ep.w_interior_l2) / e);
      rates.rows.push_back({e, ex.diff_l2, ex.w_h1, ex.tau_l2_0});
      extra.rows.push_back({e, double(n), ex.diff_h1, ex.pressure_l2_0, ex.w_l2, ex.w_max, ex.tau_max, ex.w_interior_l2,
                            ep.w_interior_l2, ep.w_h1, ep.tau_l2_0, dev.back(), lam,
                            double(ue.iterations + u0.iterations + dc.iterations)});
    } catch (const Error& err) {
      capture(r, "eps=" + std::to_string(e), err);
    }
  }
  r.tables.push_back(rates);
  r.tables.push_back(extra);
  r.stats["max_residual"] = max_res;
  if (eps.empty()) return;
  const std::string window = sweep_text(eps);
  const double zero = t.at("zero_error");
  rate_verdict(r, "rates.l2_slope", eps, l2, t.at("rates.l2_slope"), zero, window);
  rate_verdict(r, "rates.corrected_slope", eps, corrected, t.at("rates.corrected_slope"), zero, window);
  const auto cmax = [](const std::vector<double>& v, const std::vector<double>& e) {
    double m = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) m = std::max(m, v[k] / e[k]);
    return m;
  };
  r.constants["l2_over_eps"] = {{"value", cmax(l2, eps)}, {"sweep", window}};
  r.constants["corrected_over_eps"] = {{"value", cmax(corrected, eps)}, {"sweep", window}};
  const double dmax = *std::max_element(dev.begin(), dev.end()), dmin = *std::min_element(dev.begin(), dev.end());
  r.constants["corrector_dev_over_eps"] = {{"max", dmax}, {"min", dmin}, {"sweep", window}};
  r.constants["instantiation_interior_gap_over_eps"] = {{"value", *std::max_element(inst.begin(), inst.end())},
                                                        {"sweep", window}};
}

// --- green decay -----------------------------------------------------------

void run_green_decay(const ExperimentConfig& c, ExperimentResult& r) {
  const CoefficientField a = coefficient_of(c);
  const Thresholds& t = c.thresholds;
  const int d = c.dim;
  const double e = c.eps.front();
  const int n = c.resolution.cells(e);
  const double h = 1.0 / n;
  const double r_lo = c.probes.value("r_min", 8.0 * h), r_hi = c.probes.value("r_max", 0.25);
  const auto radii = geometric_radii(r_lo, r_hi, c.probes.value("radii", 5));
  GreenOptions go;
  go.threads = c.threads;
  go.cache_dir = c.cache_dir;
  DecayStudy st;
  try {
    st = whole_space_decay(a, e, d, n, 1.0, radii, go, c.probes.value("extrapolate", true));
  } catch (const Error& err) {
    capture(r, "decay", err);
    return;
  }
  r.notes.insert(r.notes.end(), st.notes.begin(), st.notes.end());
  r.stats["max_residual"] = st.max_residual;
  r.stats["columns"] = st.columns;
  Table g{"green", {"r", "absG", "absDxG", "absDyG", "oscPi"}, {}};
  Table g2{"green_second", {"r", "absDxDyG", "oscDyPi"}, {}};
  for (const auto& row : st.rows) {
    g.rows.push_back({row.r, row.absG, row.absDxG, row.absDyG, row.oscPi});
    g2.rows.push_back({row.r, row.absDxDyG, row.oscDyPi});
  }
  r.tables.push_back(g);
  r.tables.push_back(g2);
  char window[96];
  std::snprintf(window, sizeof window, "r in [%.6g, %.6g], %d radii", r_lo, r_hi, static_cast<int>(st.rows.size()));
  struct Q {
    const char* key;
    double DecayRow::*field;
    double expected;
    const char* tol;
  };
  const Q qs[] = {{"decay.absG", &DecayRow::absG, 2.0 - d, "decay.window_g"},
                  {"decay.absDxG", &DecayRow::absDxG, 1.0 - d, "decay.window_first"},
                  {"decay.oscPi", &DecayRow::oscPi, 1.0 - d, "decay.window_first"},
                  {"decay.absDyG", &DecayRow::absDyG, 1.0 - d, "decay.window_first"},
                  {"decay.absDxDyG", &DecayRow::absDxDyG, -1.0 * d, "decay.window_second"},
                  {"decay.oscDyPi", &DecayRow::oscDyPi, -1.0 * d, "decay.window_second"}};
  for (const Q& q : qs) {
    std::vector<std::array<double, 2>> pts;
    for (const auto& row : st.rows) pts.push_back({row.r, row.*(q.field)});
    try {
      const RateFit f = fit_rate(pts, window);
      r.fits[q.key] = f;
      const double w = t.at(q.tol);
      r.verdicts.push_back(make_verdict(q.key, f.slope, "in", q.expected - w, q.expected + w));
    } catch (const FitError& err) {
      capture(r, q.key, err);
    }
  }
}

// --- expansion -------------------------------------------------------------

double drift(const std::vector<double>& v) {
  const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
  return lo > 0.0 ? hi / lo : INFINITY;
}

void run_expansion(const ExperimentConfig& c, ExperimentResult& r) {
  const CoefficientField a = coefficient_of(c);
  const Thresholds& t = c.thresholds;
  const int d = c.dim;
  const auto radii = c.probes.value("radii", std::vector<double>{0.25});
  const bool second = c.probes.value("second_derivatives", false);
  std::vector<double> y = c.probes.value("source", std::vector<double>(static_cast<std::size_t>(d), 0.5));
  y.resize(3, 0.0);
  GreenExpansionOptions go;
  go.green.threads = c.threads;
  go.green.cache_dir = c.cache_dir;
  go.separation_eps = c.probes.value("separation_eps", 2.0);
  const char* cols_names[] = {"G", "DG", "Pi", "Pi1", "DDG", "DyPi"};
  std::map<std::string, Table> tabs;
  for (const char* nm : cols_names)
    tabs[nm] = Table{std::string("expansion_") + nm, {"eps", "r", "raw_error", "envelope", "ratio", "fit_window_id"}, {}};
  // per radius: raw errors and ratios over the sweep
  std::map<std::string, std::map<double, std::vector<double>>> raw, ratio;
  std::vector<double> swept;
  double max_res = 0.0;
  for (double e : c.eps) {
    const int n = c.resolution.cells(e);
    const BoxDomain dom = BoxDomain::cube(d, n);
    try {
      const CorrectorSet cell = box_cell_correctors(a, e, dom);
      DirichletOptions dopt;
      dopt.threads = c.threads;
      const DirichletCorrectorSet dc = solve_dirichlet_correctors(a, e, dom, cell, dopt);
      max_res = std::max(max_res, dc.max_residual);
      std::vector<std::string> notes;
      const auto rows = green_expansion_errors(a, e, dom, y.data(), radii, cell, dc, go, &notes);
      for (const auto& s : notes) r.notes.push_back("eps=" + std::to_string(e) + ": " + s);
      for (const auto& row : rows) {
        const int wid = static_cast<int>(std::find(radii.begin(), radii.end(), row.r) - radii.begin());
        const std::pair<const char*, std::array<double, 2>> q[] = {{"G", {row.eG, row.envG}},
                                                                   {"DG", {row.eDG, row.envDG}},
                                                                   {"Pi", {row.ePi, row.envPi}},
                                                                   {"Pi1", {row.ePi1, row.envPi1}}};
        for (const auto& [nm, v] : q) {
          tabs[nm].rows.push_back({e, row.r, v[0], v[1], v[0] / v[1], double(wid)});
          raw[nm][row.r].push_back(v[0]);
          ratio[nm][row.r].push_back(v[0] / v[1]);
        }
      }
      if (second) {
        DirichletOptions aopt = dopt;
        aopt.adjoint = true;
        const CorrectorSet cell_adj = box_cell_correctors(a.transposed(), e, dom);
        const DirichletCorrectorSet dca = solve_dirichlet_correctors(a, e, dom, cell_adj, aopt);
        const auto rows2 = second_derivative_expansion_errors(a, e, dom, y.data(), radii, cell, dc, dca, go, nullptr);
        for (const auto& row : rows2) {
          const int wid = static_cast<int>(std::find(radii.begin(), radii.end(), row.r) - radii.begin());
          tabs["DDG"].rows.push_back({e, row.r, row.eDDG, row.envDDG, row.ratioDDG(), double(wid)});
          tabs["DyPi"].rows.push_back({e, row.r, row.eDyPi, row.envDyPi, row.ratioDyPi(), double(wid)});
          ratio["DDG"][row.r].push_back(row.ratioDDG());
          ratio["DyPi"][row.r].push_back(row.ratioDyPi());
        }
      }
      swept.push_back(e);
    } catch (const Error& err) {
      capture(r, "eps=" + std::to_string(e), err);
    }
  }
  for (const char* nm : cols_names)
    if (!tabs[nm].rows.empty()) r.tables.push_back(tabs[nm]);
  r.stats["max_residual"] = max_res;
  const std::string window = sweep_text(swept);
  const double zero = t.at("zero_error");
  // verdicts for radii seen at every eps
  for (const auto& [rad, errs] : raw["G"]) {
    if (errs.size() != c.eps.size()) continue;
    char tag[32];
    std::snprintf(tag, sizeof tag, "r=%.4g", rad);
    const double emax = *std::max_element(errs.begin(), errs.end());
    if (emax <= zero) {
      r.verdicts.push_back(make_verdict(std::string("expansion.zero ") + tag, emax, "<=", zero));
      continue;
    }
    for (std::size_t k = 1; k < errs.size(); ++k) {
      char key[96];
      std::snprintf(key, sizeof key, "expansion.eG_halving %s eps=1/%ld", tag, std::lround(1.0 / c.eps[k]));
      r.verdicts.push_back(make_verdict(key, errs[k - 1] / errs[k], "in", t.at("expansion.halving_lo"),
                                        t.at("expansion.halving_hi")));
    }
    for (const char* nm : {"DG", "Pi"}) {
      const auto& v = ratio[nm][rad];
      r.verdicts.push_back(make_verdict(std::string("expansion.") + nm + "_drift " + tag, drift(v), "<",
                                        t.at("expansion.drift")));
    }
    for (const char* nm : {"Pi1", "DDG", "DyPi"}) {
      const auto it = ratio[nm].find(rad);
      if (it != ratio[nm].end() && it->second.size() == c.eps.size())
        r.constants[std::string(nm) + "_drift " + tag] = {{"value", drift(it->second)}, {"sweep", window}};
    }
  }
}

// --- divergence log-growth -------------------------------------------------

ScalarPointFn oscillatory_datum(const std::string& kind, double eps, int d) {
  if (kind == "cos")
    return [eps, d](const double* x) {
      double v = 1.0;
      for (int a = 0; a < d; ++a) v *= std::cos(2.0 * kPi * x[a] / eps);
      return v;
    };
  if (kind == "sin")
    return [eps, d](const double* x) {
      double v = 1.0;
      for (int a = 0; a < d; ++a) v *= std::sin(2.0 * kPi * x[a] / eps);
      return v;
    };
  throw ConfigError("unknown divergence datum '" + kind + "' (cos | sin)");
}

void run_divergence(const ExperimentConfig& c, ExperimentResult& r) {
  const std::string kind = c.probes.value("psi", std::string("cos"));
  Table tab{"divlog", {"eps", "n", "grad_max", "div_residual", "iterations"}, {}};
  std::vector<double> eps, g;
  for (double e : c.eps) {
    const int n = c.resolution.cells(e);
    try {
      const BoxDomain dom = BoxDomain::cube(c.dim, n);
      const StokesSolution s = solve_divergence(oscillatory_datum(kind, e, c.dim), dom);
      eps.push_back(e);
      g.push_back(gradient_max(dom, s.u));
      tab.rows.push_back({e, double(n), g.back(), s.divergence_residual, double(s.iterations)});
    } catch (const Error& err) {
      capture(r, "eps=" + std::to_string(e), err);
    }
  }
  r.tables.push_back(tab);
  if (eps.size() < 3) return;
  const GrowthModels m = compare_growth_models(eps, g, 0.5);
  r.constants["log_model"] = {{"a", m.a}, {"b", m.b}, {"rss", m.log_rss}, {"sweep", sweep_text(eps)}};
  r.constants["power_model"] = {{"c", m.c}, {"eta", m.eta}, {"rss", m.power_rss}, {"sweep", sweep_text(eps)}};
  Verdict v = make_verdict("divlog.log_rss_below_power_rss", m.log_rss, "<", m.power_rss);
  r.verdicts.push_back(v);
}

// --- max principle ---------------------------------------------------------

void run_max_principle(const ExperimentConfig& c, ExperimentResult& r) {
  const CoefficientField a = coefficient_of(c);
  const int d = c.dim;
  Table tab{"maxprinciple", {"eps", "u_max", "f_max", "ratio", "interior_ratio", "iterations"}, {}};
  std::vector<double> ratios;
  for (double e : c.eps) {
    const int n = c.resolution.cells(e);
    try {
      const BoxDomain dom = BoxDomain::cube(d, n);
      StokesProblem pb;
      pb.domain = dom;
      pb.coefficient = a;
      pb.eps = e;
      // rigid rotation in the (x0, x1) plane: zero flux through the walls
      pb.boundary = [d](const double* x, double* f) {
        for (int k = 0; k < d; ++k) f[k] = 0.0;
        f[0] = x[1] - 0.5;
        f[1] = -(x[0] - 0.5);
      };
      const StokesSolution s = solve_stokes(pb);
      const mac::Layout L(dom.grid());
      double fmax = 0.0, umax = 0.0, imax = 0.0;
      for (int al = 0; al < d; ++al)
        for (std::size_t k = 0; k < L.vel_count(al); ++k) {
          const std::size_t g = L.vel_offset(al) + k;
          const double v = std::abs(s.u[g]);
          umax = std::max(umax, v);
          if (!L.vel_mask()[g])
            fmax = std::max(fmax, v);
          else
            imax = std::max(imax, v);
        }
      ratios.push_back(umax / fmax);
      tab.rows.push_back({e, umax, fmax, umax / fmax, imax / fmax, double(s.iterations)});
    } catch (const Error& err) {
      capture(r, "eps=" + std::to_string(e), err);
    }
  }
  r.tables.push_back(tab);
  if (ratios.empty()) return;
  r.verdicts.push_back(make_verdict("maxprinciple.variation", drift(ratios), "<", c.thresholds.at("maxprinciple.variation")));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult r;
  r.name = cfg.name.empty() ? to_string(cfg.kind) : cfg.name;
  r.kind = cfg.kind;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    switch (cfg.kind) {
      case ExperimentKind::Cell: run_cell(cfg, r); break;
      case ExperimentKind::Rates: run_rates(cfg, r); break;
      case ExperimentKind::GreenDecay: run_green_decay(cfg, r); break;
      case ExperimentKind::Expansion: run_expansion(cfg, r); break;
      case ExperimentKind::DivergenceLog: run_divergence(cfg, r); break;
      case ExperimentKind::MaxPrinciple: run_max_principle(cfg, r); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    capture(r, "experiment", e);
  }
  r.seconds = seconds_since(t0);
  r.stats["seconds"] = r.seconds;
  r.stats["seed"] = cfg.seed;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json summary_json(const ReportBundle& b) {
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : b.experiments) {
    nlohmann::json fits = nlohmann::json::object();
    for (const auto& [k, f] : e.fits) fits[k] = f.to_json();
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : e.verdicts) verdicts.push_back(v.to_json());
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& t : e.tables) tables.push_back({{"name", t.name}, {"columns", t.columns}, {"rows", t.rows.size()}});
    ex.push_back({{"name", e.name},
                  {"kind", to_string(e.kind)},
                  {"passed", e.passed()},
                  {"verdicts", verdicts},
                  {"fits", fits},
                  {"constants", e.constants},
                  {"stats", e.stats},
                  {"errors", e.errors},
                  {"notes", e.notes},
                  {"tables", tables}});
  }
  return {{"format", "shom-summary"},
          {"threshold_version", b.threshold_version},
          {"experiments", ex},
          {"passed", b.passed()},
          {"solver_error", b.solver_error()}};
}

ReportBundle bundle_from_summary(const nlohmann::json& j) {
  ReportBundle b;
  try {
    b.threshold_version = j.at("threshold_version").get<int>();
    for (const auto& e : j.at("experiments")) {
      ExperimentResult r;
      r.name = e.at("name").get<std::string>();
      r.kind = experiment_kind_from_string(e.at("kind").get<std::string>());
      for (const auto& v : e.at("verdicts")) r.verdicts.push_back(Verdict::from_json(v));
      for (auto it = e.at("fits").begin(); it != e.at("fits").end(); ++it) r.fits[it.key()] = RateFit::from_json(it.value());
      r.constants = e.at("constants");
      r.stats = e.at("stats");
      r.seconds = r.stats.value("seconds", 0.0);
      r.errors = e.at("errors").get<std::vector<std::string>>();
      r.notes = e.at("notes").get<std::vector<std::string>>();
      for (const auto& t : e.at("tables"))
        r.tables.push_back(Table{t.at("name").get<std::string>(), t.at("columns").get<std::vector<std::string>>(), {}});
      b.experiments.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed summary: ") + e.what());
  }
  return b;
}

nlohmann::json read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "': " + std::strerror(errno));
  nlohmann::json j;
  in >> j;
  return j;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "': " + std::strerror(errno));
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

void write_csv(const std::string& path, const Table& t) {
  auto out = open_out(path);
  for (std::size_t k = 0; k < t.columns.size(); ++k) out << (k ? "," : "") << t.columns[k];
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << fmt(row[k]);
    out << "\n";
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

void emit_report(const ReportBundle& b, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
  for (const auto& e : b.experiments)
    for (const auto& t : e.tables) {
      const std::string stem = dir + "/" + e.name + "_" + t.name;
      write_csv(stem + ".csv", t);
      auto dat = open_out(stem + ".dat");
      dat << "#";
      for (const auto& c : t.columns) dat << " " << c;
      dat << "\n";
      for (const auto& row : t.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) dat << (k ? " " : "") << fmt(row[k]);
        dat << "\n";
      }
    }
  auto out = open_out(dir + "/summary.json");
  out << summary_json(b).dump(2) << "\n";
  if (!out) throw Error("write failed for '" + dir + "/summary.json'");
}

// ---------------------------------------------------------------------------
// Mollifier

Vec mollify(const BoxDomain& dom, const Vec& f, double r) {
  if (!(r > 0.0)) throw ConfigError("mollifier radius must be positive");
  const int d = dom.d;
  const int w = std::max(1, static_cast<int>(std::floor(r / dom.h)));
  // kernel weights on the offset lattice
  std::vector<std::array<int, 3>> off;
  std::vector<double> wt;
  for (int a = -w; a <= w; ++a)
    for (int b = -w; b <= w; ++b)
      for (int c = (d == 3 ? -w : 0); c <= (d == 3 ? w : 0); ++c) {
        const double q = (a * a + b * b + c * c) * dom.h * dom.h / (r * r);
        if (q >= 1.0) continue;
        const double v = std::exp(-1.0 / (1.0 - q));
        off.push_back({a, b, c});
        wt.push_back(v);
      }
  if (off.empty()) return f;
  const auto& n = dom.cells;
  Vec out(f.size(), 0.0);
  for (int i0 = 0; i0 < n[0]; ++i0)
    for (int i1 = 0; i1 < n[1]; ++i1)
      for (int i2 = 0; i2 < n[2]; ++i2) {
        double s = 0.0, m = 0.0;
        for (std::size_t k = 0; k < off.size(); ++k) {
          const int j0 = i0 + off[k][0], j1 = i1 + off[k][1], j2 = i2 + off[k][2];
          if (j0 < 0 || j1 < 0 || j2 < 0 || j0 >= n[0] || j1 >= n[1] || j2 >= n[2]) continue;
          s += wt[k] * f[(static_cast<std::size_t>(j0) * n[1] + j1) * n[2] + j2];
          m += wt[k];
        }
        // renormalised next to the walls
        out[(static_cast<std::size_t>(i0) * n[1] + i1) * n[2] + i2] = m > 0.0 ? s / m : 0.0;
      }
  return out;
}

}  // namespace shom
