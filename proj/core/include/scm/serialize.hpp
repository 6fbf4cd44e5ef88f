#pragma once

#include <iosfwd>
#include <string>

#include "scm/pipeline.hpp"
#include "scm/simulate.hpp"

namespace scm {

std::string tool_version();

// Stamped on every output file.
struct RunMetadata {
  std::string tool = "scm";
  std::string version = tool_version();
  std::string config_hash;
};

// Everything below produces or consumes JSON text (two-space indent).

// 64-bit FNV-1a of `canonical_text`, as 16 hex digits.
std::string config_hash(const std::string& canonical_text);

// The per-block payload sent to the combining node. Doubles round-trip
// exactly through the JSON text.
std::string block_fit_to_json(const BlockFit& fit);
BlockFit block_fit_from_json(const std::string& text);

// Estimates, standard errors, intervals, GCV table and convergence metadata.
// Timings are deliberately left out so that the bundle only depends on
// the data and the numeric configuration.
std::string result_bundle(const PipelineResult& result, const RunMetadata& meta);

// `# key=value` metadata lines, then `u,t,beta_hat,lower,upper`. u is 1-based.
void write_curves_csv(std::ostream& out, const std::vector<CurveBand>& curves, const RunMetadata& meta);

std::string constraints_json(const ConstraintMap& cmap, const RunMetadata& meta);
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const RunMetadata& meta);

std::string mc_report_json(const McReport& report, const RunMetadata& meta);

std::string timings_json(const PhaseTimings& t);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace scm
