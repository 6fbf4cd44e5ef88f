#include "run_config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "json.hpp"
#include "scm/errors.hpp"
#include "toml.hpp"

namespace scm::cli {

namespace {

template <class T>
T scalar(const toml::node& node, const std::string& key) {
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node.value<double>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node.value_exact<bool>()) return *v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node.value_exact<std::string>()) return *v;
  } else {
    if (auto v = node.value_exact<std::int64_t>()) return static_cast<T>(*v);
  }
  throw ConfigError("cli", "config key '" + key + "' has the wrong type");
}

template <class T>
std::vector<T> list(const toml::node& node, const std::string& key) {
  const auto* arr = node.as_array();
  if (!arr) throw ConfigError("cli", "config key '" + key + "' must be an array");
  std::vector<T> out;
  for (const auto& el : *arr) out.push_back(scalar<T>(el, key));
  return out;
}

}  // namespace

void load_toml(const std::filesystem::path& path, RunConfig& cfg) {
  toml::table tbl;
  try {
    tbl = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "cannot read config " << path.string() << ": " << e.description() << " at line "
       << e.source().begin.line;
    throw ConfigError("cli", os.str());
  }
  for (const auto& [k, node] : tbl) {
    const std::string key(k.str());
    if (key == "data") cfg.data = scalar<std::string>(node, key);
    else if (key == "q") cfg.q = scalar<int>(node, key);
    else if (key == "p") cfg.p = scalar<int>(node, key);
    else if (key == "edges") cfg.edges = list<double>(node, key);
    else if (key == "blocks") cfg.blocks = scalar<int>(node, key);
    else if (key == "block_width") cfg.block_width = scalar<double>(node, key);
    else if (key == "degrees") cfg.degrees = list<int>(node, key);
    else if (key == "raw_basis") cfg.raw_basis = scalar<bool>(node, key);
    else if (key == "link") cfg.link = scalar<std::string>(node, key);
    else if (key == "correlation") cfg.correlation = scalar<std::string>(node, key);
    else if (key == "smoothness") cfg.smoothness = scalar<std::string>(node, key);
    else if (key == "lambda") cfg.lambda = list<double>(node, key);
    else if (key == "schema") cfg.schema = scalar<int>(node, key);
    else if (key == "workers") cfg.workers = scalar<int>(node, key);
    else if (key == "alpha") cfg.alpha = scalar<double>(node, key);
    else if (key == "grid_step") cfg.grid_step = scalar<double>(node, key);
    else if (key == "tol") cfg.tol = scalar<double>(node, key);
    else if (key == "max_iter") cfg.max_iter = scalar<int>(node, key);
    else if (key == "allow_unconverged") cfg.allow_unconverged = scalar<bool>(node, key);
    else if (key == "out") cfg.out = scalar<std::string>(node, key);
    else if (key == "save_block_fits") cfg.save_block_fits = scalar<bool>(node, key);
    else if (key == "scenario") cfg.scenario = scalar<std::string>(node, key);
    else if (key == "reps") cfg.reps = scalar<int>(node, key);
    else if (key == "seed") cfg.seed = scalar<std::uint64_t>(node, key);
    else if (key == "n") cfg.n = scalar<int>(node, key);
    else if (key == "full_scale") cfg.full_scale = scalar<bool>(node, key);
    else if (key == "rep_workers") cfg.rep_workers = scalar<int>(node, key);
    else if (key == "time_both_schemas") cfg.time_both_schemas = scalar<bool>(node, key);
    else throw ConfigError("cli", "unknown config key '" + key + "'");
  }
}

PipelineConfig pipeline_config(const RunConfig& cfg) {
  PipelineConfig pc;
  std::vector<int> degrees = cfg.degrees;
  if (degrees.size() == 1 && cfg.q > 1) degrees.assign(static_cast<std::size_t>(cfg.q), degrees[0]);
  if (static_cast<int>(degrees.size()) != cfg.q) {
    throw ConfigError("cli", "degrees needs one entry, or one per functional covariate");
  }
  pc.basis = BasisSpec{degrees, !cfg.raw_basis};
  pc.basis.validate();
  pc.link = parse_link(cfg.link);
  pc.correlation = parse_correlation(cfg.correlation);
  pc.smoothness = parse_smoothness(cfg.smoothness);
  validate_smoothness(pc.basis, pc.smoothness);
  if (cfg.lambda.empty()) throw ConfigError("cli", "lambda grid is empty");
  for (double l : cfg.lambda) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("cli", "lambda values must be finite and >= 0");
  }
  pc.lambda_grid = cfg.lambda;
  if (cfg.schema != 1 && cfg.schema != 2) throw ConfigError("cli", "schema must be 1 or 2");
  pc.schema = static_cast<Schema>(cfg.schema);
  if (cfg.workers < 1) throw ConfigError("cli", "workers must be at least 1");
  pc.workers = cfg.workers;
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("cli", "alpha must be in (0, 1)");
  pc.alpha = cfg.alpha;
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1) throw ConfigError("cli", "tol must be > 0 and max_iter >= 1");
  pc.fit.tol = cfg.tol;
  pc.fit.max_iter = cfg.max_iter;
  pc.allow_unconverged = cfg.allow_unconverged;
  return pc;
}

Partition resolve_partition(const RunConfig& cfg, double t_min, double t_max) {
  const int given = (cfg.edges.empty() ? 0 : 1) + (cfg.blocks ? 1 : 0) + (cfg.block_width ? 1 : 0);
  if (given != 1) {
    throw ConfigError("cli", "give exactly one of edges, blocks or block_width");
  }
  if (!cfg.edges.empty()) return make_partition(cfg.edges);
  if (cfg.blocks) return uniform_partition(t_min, t_max, *cfg.blocks);
  const double w = *cfg.block_width;
  if (!(w > 0.0)) throw ConfigError("cli", "block_width must be positive");
  std::vector<double> edges{t_min};
  for (int k = 1; t_min + k * w < t_max; ++k) edges.push_back(t_min + k * w);
  edges.push_back(t_max);
  return make_partition(edges);
}

std::vector<double> curve_grid(const RunConfig& cfg, const LongData& data) {
  if (!cfg.grid_step) return observed_times(data);
  const double step = *cfg.grid_step;
  if (!(step > 0.0)) throw ConfigError("cli", "grid_step must be positive");
  const double lo = data.min_time(), hi = data.max_time();
  std::vector<double> grid;
  for (long k = 0; lo + k * step < hi; ++k) grid.push_back(lo + k * step);
  grid.push_back(hi);
  return grid;
}

std::string canonical_settings(const RunConfig& cfg, const std::vector<double>& edges,
                               const std::string& data_fingerprint) {
  nlohmann::json j = {{"q", cfg.q},
                      {"p", cfg.p},
                      {"edges", edges},
                      {"degrees", cfg.degrees},
                      {"raw_basis", cfg.raw_basis},
                      {"link", cfg.link},
                      {"correlation", cfg.correlation},
                      {"smoothness", cfg.smoothness},
                      {"lambda", cfg.lambda},
                      {"alpha", cfg.alpha},
                      {"tol", cfg.tol},
                      {"max_iter", cfg.max_iter},
                      {"allow_unconverged", cfg.allow_unconverged},
                      {"data", data_fingerprint}};
  j["grid_step"] = cfg.grid_step ? nlohmann::json(*cfg.grid_step) : nlohmann::json(nullptr);
  if (!cfg.scenario.empty()) {
    j["scenario"] = cfg.scenario;
    j["reps"] = cfg.reps;
    j["seed"] = cfg.seed;
    j["n"] = cfg.n ? nlohmann::json(*cfg.n) : nlohmann::json(nullptr);
    j["full_scale"] = cfg.full_scale;
  }
  return j.dump();
}

}  // namespace scm::cli
