#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scm/pipeline.hpp"
#include "scm/simulate.hpp"

namespace scm::cli {

// Everything a run can be told. TOML keys and long flag names are the same
// strings (underscores in TOML, dashes on the command line).
struct RunConfig {
  std::optional<std::string> data;
  int q = 1;
  int p = 0;
  std::vector<double> edges;
  std::optional<int> blocks;
  std::optional<double> block_width;
  std::vector<int> degrees{3};
  bool raw_basis = false;
  std::string link = "identity";
  std::string correlation = "ar1";
  std::string smoothness = "C0";
  std::vector<double> lambda{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  int schema = 2;
  int workers = 1;
  double alpha = 0.05;
  std::optional<double> grid_step;
  double tol = 1e-8;
  int max_iter = 50;
  bool allow_unconverged = false;
  std::string out = "scm-out";
  bool save_block_fits = false;

  // simulate
  std::string scenario;
  int reps = 100;
  std::uint64_t seed = 1;
  std::optional<int> n;
  bool full_scale = false;
  int rep_workers = 1;
  bool time_both_schemas = false;
};

// Fields present in the TOML file overwrite `cfg`; unknown keys are rejected.
void load_toml(const std::filesystem::path& path, RunConfig& cfg);

PipelineConfig pipeline_config(const RunConfig& cfg);

// Exactly one of edges, blocks or block_width must be set. Uniform specs
// are laid over [t_min, t_max].
Partition resolve_partition(const RunConfig& cfg, double t_min, double t_max);

// Every observed time, or a regular grid when grid_step is set.
std::vector<double> curve_grid(const RunConfig& cfg, const LongData& data);

// Canonical text of the settings that can change numbers. Worker counts,
// schema and paths are excluded on purpose: they never change results.
std::string canonical_settings(const RunConfig& cfg, const std::vector<double>& edges,
                               const std::string& data_fingerprint);

}  // namespace scm::cli
