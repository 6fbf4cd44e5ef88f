#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scm/pipeline.hpp"

namespace scm {

enum class ScenarioKind { BrokenStick, KnownCubic, PoissonCopula };

std::string to_string(ScenarioKind kind);
// Accepts "broken-stick", "known-cubic", "poisson-copula"; ConfigError lists them otherwise.
ScenarioKind parse_scenario(const std::string& name);
std::vector<std::string> scenario_names();

// Data-generating truth plus the fitting setup used for it in the studies.
struct Scenario {
  ScenarioKind kind = ScenarioKind::BrokenStick;
  int n = 1000;
  std::vector<double> times;
  CorrelationKind error_correlation = CorrelationKind::Exchangeable;
  double rho = 0.7;
  double sigma2 = 10.0;
  std::uint64_t seed = 1;
  std::vector<double> eta;  // true scalar effects (length p)

  Partition partition;
  PipelineConfig fit;  // basis, smoothness, link, working correlation, lambda grid

  int q() const { return 1; }
  int p() const { return static_cast<int>(eta.size()); }
  int m() const { return static_cast<int>(times.size()); }
};

// Presets. `full_scale` only changes the Poisson scenario (N=3000, M=1440, J=15);
// the desk preset uses N=300, M=144 and J=5 on the same time range.
Scenario broken_stick(int n = 1000);
Scenario known_cubic(int n = 500);
Scenario poisson_copula(bool full_scale = false);
Scenario make_scenario(ScenarioKind kind, bool full_scale = false);

double true_beta(const Scenario& sc, double t);
// True theta (gamma then eta): each block's polynomial fitted to beta exactly,
// which is possible because every preset's beta is a polynomial of degree <= d
// on each block.
Eigen::VectorXd true_theta(const Scenario& sc, const ConstraintMap& cmap);
Eigen::VectorXd true_theta_star(const Scenario& sc, const ConstraintMap& cmap);

// Stream seed for replicate `rep`; depends only on (seed, rep).
std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t rep);

// Correlation matrix of the errors on the scenario's grid.
Eigen::MatrixXd error_correlation(CorrelationKind kind, double rho, int m);

LongData gen_gaussian(const Scenario& sc, std::uint64_t rep_seed);
LongData gen_poisson_copula(const Scenario& sc, std::uint64_t rep_seed);
LongData generate(const Scenario& sc, std::uint64_t rep_seed);

struct ReplicateResult {
  int rep = 0;
  bool ok = false;
  std::string error;
  Eigen::VectorXd estimate;  // theta*
  Eigen::VectorXd se;
  std::vector<bool> covered;       // per theta* entry
  std::vector<bool> beta_covered;  // per time point
  double lambda = 0.0;
  std::map<int, double> seconds;   // schema -> pipeline wall-clock
};

// Generate, fit and score one replicate. Errors from the pipeline are caught
// and reported through `ok` and `error`.
ReplicateResult run_replicate(const Scenario& sc, const PipelineConfig& config, int rep,
                              const std::vector<Schema>& timed_schemas);

struct ParameterSummary {
  std::string label;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double ase = 0.0;
  std::optional<double> ese;  // absent with a single replicate
  double rase = 0.0;          // ASE / mean estimate
  double cp = 0.0;
};

struct TimingSummary {
  double mean = 0.0;
  std::optional<double> sd;
};

struct McReport {
  std::string scenario;
  int n = 0;
  int m = 0;
  int reps = 0;
  int failures = 0;
  std::uint64_t seed = 0;
  std::vector<ParameterSummary> parameters;
  std::vector<double> times;
  std::vector<double> beta_cp;  // pointwise over times
  double beta_cp_mean = 0.0;
  std::map<int, TimingSummary> timing;  // keyed by schema number
  std::vector<std::string> failure_messages;

  // Parameters whose label starts with `prefix`.
  std::vector<const ParameterSummary*> select(const std::string& prefix) const;
};

struct McOptions {
  int reps = 100;
  int workers = 1;  // replicate-level threads; block-level threads come from the config
  std::vector<Schema> timed_schemas;  // empty: only the configured schema
  double max_failure_rate = 0.05;
};

// Replicates run concurrently, results are aggregated in replicate order.
// Throws NumericError when more than max_failure_rate of replicates fail.
McReport run_mc(const Scenario& sc, const PipelineConfig& config, const McOptions& options);

McReport summarize(const Scenario& sc, const ConstraintMap& cmap,
                   const std::vector<ReplicateResult>& results);

// Table with the columns Bias x1e-2, ASE x1e-2, ESE x1e-2, RASE x1e-3, CP.
std::string format_table(const McReport& report);

}  // namespace scm
