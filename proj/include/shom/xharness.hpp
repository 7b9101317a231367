#pragma once

// Experiment orchestration: configs, log-log rate fits, sweeps and reports.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shom/common.hpp"
#include "shom/stokes_bvp.hpp"

namespace shom {

enum class ExperimentKind { Cell, Rates, GreenDecay, Expansion, DivergenceLog, MaxPrinciple };
std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

/// Acceptance thresholds, one versioned table. Configs may override entries
/// under "thresholds"; unknown keys are rejected.
struct Thresholds {
  int version = 1;
  std::map<std::string, double> values;

  double at(const std::string& key) const;
  nlohmann::json to_json() const;
  /// `base` with the entries of j applied.
  static Thresholds from_json(const nlohmann::json& j, const Thresholds& base);
};
const Thresholds& default_thresholds();

/// Grid resolution as a function of eps: "fixed" uses n cells per unit length,
/// "per-period" uses cells_per_period / eps.
struct Resolution {
  std::string rule = "fixed";
  int n = 64;
  int cells_per_period = 8;
  int cells(double eps) const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Rates;
  std::string name;  // defaults to the kind
  nlohmann::json coefficient = {{"family", "trig"}, {"params", nlohmann::json::object()}};
  int dim = 2;
  std::vector<double> eps;
  Resolution resolution;
  nlohmann::json probes = nlohmann::json::object();  // kind-specific probe and option block
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string cache_dir;
  Thresholds thresholds = default_thresholds();

  /// Throws ConfigError: eps list not dyadic or not descending, h > eps_min / 8
  /// for the homogenization kinds, bad dimension.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_config(const std::string& path);

struct RateFit {
  std::vector<double> x;  // log abscissae
  std::vector<double> y;  // log ordinates
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r2 = 0.0;
  std::string window;
  std::vector<std::string> notes;

  int points() const { return static_cast<int>(x.size()); }
  nlohmann::json to_json() const;
  static RateFit from_json(const nlohmann::json& j);
};

/// Ordinary least squares on (log x, log y). Points with a non-positive
/// coordinate are dropped with a notice; fewer than 3 left throws FitError.
RateFit fit_rate(const std::vector<std::array<double, 2>>& points, const std::string& window = "");

/// Least-squares residual sum of squares of y against a + b log(1 / eps) and
/// against c eps^(-eta).
struct GrowthModels {
  double a = 0.0, b = 0.0, log_rss = 0.0;
  double c = 0.0, eta = 0.5, power_rss = 0.0;
};
GrowthModels compare_growth_models(const std::vector<double>& eps, const std::vector<double>& y, double eta = 0.5);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct Verdict {
  std::string name;
  double value = 0.0;
  std::string rule;  // e.g. ">= 0.9"
  bool passed = false;
  nlohmann::json to_json() const;
  static Verdict from_json(const nlohmann::json& j);
};

/// value `op` limit with op in {">=", "<=", "<", ">", "in"}; "in" uses [lo, hi].
Verdict make_verdict(const std::string& name, double value, const std::string& op, double lo, double hi = 0.0);

struct ExperimentResult {
  std::string name;
  ExperimentKind kind = ExperimentKind::Rates;
  std::vector<Table> tables;
  std::map<std::string, RateFit> fits;
  std::vector<Verdict> verdicts;
  nlohmann::json constants = nlohmann::json::object();  // each with the sweep it was measured over
  nlohmann::json stats = nlohmann::json::object();      // solver statistics
  std::vector<std::string> errors;                      // captured per-point solver errors
  std::vector<std::string> notes;
  double seconds = 0.0;

  bool passed() const;
};

struct ReportBundle {
  int threshold_version = 1;
  std::vector<ExperimentResult> experiments;
  bool passed() const;
  bool solver_error() const;
};

/// Runs the declared sweep. Solver errors of single points are captured in
/// `errors` and the sweep continues.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Verdicts, fits, constants, stats and notes of every experiment.
nlohmann::json summary_json(const ReportBundle& b);
/// Inverse of summary_json for everything but the tables.
ReportBundle bundle_from_summary(const nlohmann::json& j);
nlohmann::json read_summary(const std::string& path);

/// Writes <dir>/summary.json, <dir>/<experiment>_<table>.csv and gnuplot data
/// <dir>/<experiment>_<table>.dat. I/O errors are thrown as Error with the
/// system message.
void emit_report(const ReportBundle& b, const std::string& dir);
void write_csv(const std::string& path, const Table& t);

/// Convolution of a cell-centred field with the bump phi_r(x) ~ exp(-1 / (1 - |x / r|^2)),
/// normalised on the lattice. Test-data utility for data of controlled roughness.
Vec mollify(const BoxDomain& dom, const Vec& f, double r);

}  // namespace shom
