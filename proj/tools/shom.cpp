// Command-line front end: cell, effective, solve, green, rates, expand, divlog, report.
//
// Exit codes: 0 when every verdict passes, 1 on a verdict failure, 2 on a
// solver, configuration or I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "shom/coeff.hpp"
#include "shom/snapshot.hpp"
#include "shom/stokes_bvp.hpp"
#include "shom/torus.hpp"
#include "shom/xharness.hpp"

using namespace shom;

namespace {

struct Globals {
  std::string config;
  std::string out;
  int threads = 0;  // 0: keep the config value
  long long seed = -1;
};

nlohmann::json read_json(const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

std::string out_dir(const Globals& g, const nlohmann::json& j) {
  std::string dir = !g.out.empty() ? g.out : j.value("out_dir", std::string("."));
  std::filesystem::create_directories(dir);
  return dir;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

nlohmann::json tensor_json(const Tensor4& t) {
  const int d = t.dim();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < d * d; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < d * d; ++c) row.push_back(t.m(r, c));
    rows.push_back(row);
  }
  return rows;
}

CorrectorSet cell_from_config(const nlohmann::json& j, const Globals& g) {
  nlohmann::json cj = j.at("coefficient");
  const int d = j.value("dim", cj.value("dim", 2));
  cj["dim"] = d;
  const CoefficientField a = coefficient_from_config(cj);
  TorusGrid grid;
  grid.d = d;
  grid.n = j.value("n", 64);
  CellOptions opt;
  opt.scheme = cell_scheme_from_string(j.value("scheme", std::string("spectral")));
  opt.tol = j.value("tol", 1e-10);
  opt.threads = g.threads > 0 ? g.threads : j.value("threads", 1);
  return homogenize(a, grid, opt);
}

int cmd_cell(const Globals& g) {
  const auto j = read_json(g.config);
  const CorrectorSet c = cell_from_config(j, g);
  const std::string dir = out_dir(g, j);
  write_snapshot(dir + "/correctors.shom", to_snapshot(c));
  const CellDiagnostics dg = diagnose(c);
  write_json(dir + "/cell.json", {{"effective", tensor_json(c.effective())},
                                  {"max_residual", dg.max_residual},
                                  {"max_divergence", dg.max_divergence},
                                  {"flux_identity", dg.flux_identity},
                                  {"dual_identity", dg.dual_identity},
                                  {"q_identity", dg.q_identity},
                                  {"antisymmetry", dg.antisymmetry}});
  std::printf("cell: n=%d scheme=%s residual=%.3e -> %s\n", c.grid().n, to_string(c.scheme()).c_str(), dg.max_residual,
              dir.c_str());
  return 0;
}

int cmd_effective(const Globals& g) {
  const auto j = read_json(g.config);
  const CorrectorSet c = cell_from_config(j, g);
  const nlohmann::json out = {{"effective", tensor_json(c.effective())}};
  std::cout << out.dump(2) << "\n";
  if (!g.out.empty()) write_json(out_dir(g, j) + "/effective.json", out);
  return 0;
}

int cmd_solve(const Globals& g) {
  const auto j = read_json(g.config);
  nlohmann::json cj = j.at("coefficient");
  const int d = j.value("dim", cj.value("dim", 2));
  cj["dim"] = d;
  StokesProblem pb;
  pb.domain = BoxDomain::cube(d, j.value("n", 64));
  pb.coefficient = coefficient_from_config(cj);
  pb.eps = j.value("eps", 1.0);
  const std::string force = j.value("force", std::string("smooth"));
  if (force == "smooth")
    pb.force = [d](const double* x, double* F) {
      F[0] = std::sin(kPi * x[0]) * x[1];
      F[1] = std::cos(2.0 * x[0] + x[1]);
      if (d == 3) F[2] = std::sin(kPi * x[2]) * (x[0] - x[1]);
    };
  else if (force != "none")
    throw ConfigError("unknown force '" + force + "' (smooth | none)");
  const std::string bc = j.value("boundary", std::string("none"));
  if (bc == "rotation")
    pb.boundary = [d](const double* x, double* f) {
      for (int k = 0; k < d; ++k) f[k] = 0.0;
      f[0] = x[1] - 0.5;
      f[1] = -(x[0] - 0.5);
    };
  else if (bc != "none")
    throw ConfigError("unknown boundary '" + bc + "' (rotation | none)");
  SolveOptions so;
  so.tol = j.value("tol", 1e-9);
  StokesSolution s;
  if (j.value("homogenized", false)) {
    TorusGrid grid;
    grid.d = d;
    grid.n = j.value("cell_n", 32);
    const CorrectorSet c = homogenize(pb.coefficient, grid);
    s = solve_homogenized(pb, c.effective(), so);
  } else {
    s = solve_stokes(pb, so);
  }
  const std::string dir = out_dir(g, j);
  write_snapshot(dir + "/solution.shom", to_snapshot(s));
  write_json(dir + "/solve.json", {{"iterations", s.iterations},
                                   {"momentum_residual", s.momentum_residual},
                                   {"divergence_residual", s.divergence_residual},
                                   {"velocity_l2", velocity_l2(s.domain, s.u)},
                                   {"velocity_max", velocity_max(s.domain, s.u)},
                                   {"energy_constant", s.energy_constant}});
  std::printf("solve: n=%d it=%d residual=%.3e -> %s\n", pb.domain.cells[0], s.iterations, s.momentum_residual,
              dir.c_str());
  return 0;
}

ExperimentConfig experiment_config(const nlohmann::json& j, const Globals& g, const std::string& kind) {
  nlohmann::json c = j;
  if (!kind.empty()) {
    if (c.contains("kind") && c["kind"] != kind)
      throw ConfigError("config kind '" + c["kind"].get<std::string>() + "' does not match subcommand (" + kind + ")");
    c["kind"] = kind;
  }
  if (g.threads > 0) c["threads"] = g.threads;
  if (g.seed >= 0) c["seed"] = g.seed;
  if (!g.out.empty()) c["out_dir"] = g.out;
  return ExperimentConfig::from_json(c);
}

void print_result(const ExperimentResult& r) {
  for (const auto& v : r.verdicts)
    std::printf("  %-48s %-6s value=%.6g rule: %s\n", v.name.c_str(), v.passed ? "PASS" : "FAIL", v.value, v.rule.c_str());
  for (const auto& e : r.errors) std::printf("  error: %s\n", e.c_str());
}

int finish(const ReportBundle& b, const std::string& dir) {
  emit_report(b, dir);
  for (const auto& r : b.experiments) {
    std::printf("%s (%s) %.1fs\n", r.name.c_str(), to_string(r.kind).c_str(), r.seconds);
    print_result(r);
  }
  std::printf("report written to %s\n", dir.c_str());
  if (b.solver_error()) return 2;
  return b.passed() ? 0 : 1;
}

int cmd_experiment(const Globals& g, const std::string& kind) {
  const auto j = read_json(g.config);
  const ExperimentConfig cfg = experiment_config(j, g, kind);
  ReportBundle b;
  b.threshold_version = cfg.thresholds.version;
  b.experiments.push_back(run_experiment(cfg));
  return finish(b, cfg.out_dir);
}

int cmd_report(const Globals& g) {
  const auto j = read_json(g.config);
  ReportBundle b;
  std::string dir = !g.out.empty() ? g.out : j.value("out_dir", std::string("."));
  if (j.contains("experiments")) {
    for (const auto& e : j.at("experiments")) {
      const ExperimentConfig cfg = experiment_config(e, g, "");
      b.threshold_version = cfg.thresholds.version;
      b.experiments.push_back(run_experiment(cfg));
    }
  } else if (j.contains("format") && j["format"] == "shom-summary") {
    b = bundle_from_summary(j);
  } else {
    const ExperimentConfig cfg = experiment_config(j, g, "");
    b.threshold_version = cfg.thresholds.version;
    b.experiments.push_back(run_experiment(cfg));
    if (g.out.empty()) dir = cfg.out_dir;
  }
  return finish(b, dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shom: numerical homogenization of Stokes systems with periodic coefficients"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "random seed for generated data");
  const std::pair<const char*, const char*> subs[] = {
      {"cell", "solve the cell problem and write correctors"},
      {"effective", "print the effective tensor"},
      {"solve", "solve a Stokes problem on the unit box"},
      {"green", "Green's function decay study"},
      {"rates", "homogenization rate sweep"},
      {"expand", "Green's function expansion errors"},
      {"divlog", "divergence-equation log-growth study"},
      {"report", "run a list of experiments, or re-emit a summary"}};
  for (const auto& [name, help] : subs) app.add_subcommand(name, help)->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "cell") return cmd_cell(g);
    if (sub == "effective") return cmd_effective(g);
    if (sub == "solve") return cmd_solve(g);
    if (sub == "green") return cmd_experiment(g, "green-decay");
    if (sub == "rates") return cmd_experiment(g, "rates");
    if (sub == "expand") return cmd_experiment(g, "expansion");
    if (sub == "divlog") return cmd_experiment(g, "divergence-log");
    if (sub == "report") return cmd_report(g);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "shom %s: %s\n", sub.c_str(), e.what());
    return 2;
  }
  return 2;
}
