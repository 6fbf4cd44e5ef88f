// scm: fit, simulate and inspect smooth constrained meta-estimates.
//
//   scm fit --data long.csv --edges=-15,0,15 --degrees 1 --smoothness C0 --out res
//   scm simulate --scenario broken-stick --reps 200 --seed 7
//   scm dump-constraints --edges=0,20,40 --degrees 3 --smoothness C1
//
// Exit status: 0 success, 1 numeric failure, 2 configuration or data error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "run_config.hpp"
#include "scm/errors.hpp"
#include "scm/serialize.hpp"

namespace fs = std::filesystem;
using scm::cli::RunConfig;

namespace {

constexpr int kExitNumeric = 1;
constexpr int kExitConfig = 2;

// A flag bound to one RunConfig field. After parsing, fields whose flag was
// not given are taken from the TOML file instead.
struct Binding {
  CLI::Option* option;
  std::function<void(const RunConfig&, RunConfig&)> copy;
};
using Bindings = std::vector<Binding>;

template <class T>
void bind_option(CLI::App* app, Bindings& b, RunConfig& cfg, const std::string& flag, T RunConfig::*field,
          const std::string& help) {
  CLI::Option* opt;
  if constexpr (std::is_same_v<T, bool>) {
    opt = app->add_flag(flag, cfg.*field, help);
  } else {
    opt = app->add_option(flag, cfg.*field, help);
  }
  if constexpr (requires(T v) { v.push_back(v.front()); }) opt->delimiter(',');
  b.push_back({opt, [field](const RunConfig& from, RunConfig& to) { to.*field = from.*field; }});
}

void add_model_options(CLI::App* app, Bindings& b, RunConfig& cfg) {
  bind_option(app, b, cfg, "--data", &RunConfig::data, "long-format CSV: id,time,y,x1..xq,z1..zp");
  bind_option(app, b, cfg, "--q", &RunConfig::q, "number of functional covariates");
  bind_option(app, b, cfg, "--p", &RunConfig::p, "number of scalar covariates");
  bind_option(app, b, cfg, "--edges", &RunConfig::edges, "partition edges, comma separated (use --edges=...)");
  bind_option(app, b, cfg, "--blocks", &RunConfig::blocks, "number of equal-width blocks");
  bind_option(app, b, cfg, "--block-width", &RunConfig::block_width, "block width in time units");
  bind_option(app, b, cfg, "--degrees", &RunConfig::degrees, "polynomial degree, one or one per covariate");
  bind_option(app, b, cfg, "--raw-basis", &RunConfig::raw_basis, "use (t - c) instead of the unit-interval basis");
  bind_option(app, b, cfg, "--link", &RunConfig::link, "identity or log");
  bind_option(app, b, cfg, "--correlation", &RunConfig::correlation, "independence, ar1 or exchangeable");
  bind_option(app, b, cfg, "--smoothness", &RunConfig::smoothness, "none, C0 or C1");
  bind_option(app, b, cfg, "--out", &RunConfig::out, "output directory");
}

void add_fit_options(CLI::App* app, Bindings& b, RunConfig& cfg) {
  bind_option(app, b, cfg, "--lambda", &RunConfig::lambda, "smoothing grid, comma separated");
  bind_option(app, b, cfg, "--schema", &RunConfig::schema, "1: lambda-parallel, 2: block-parallel");
  bind_option(app, b, cfg, "--workers", &RunConfig::workers, "worker threads");
  bind_option(app, b, cfg, "--alpha", &RunConfig::alpha, "1 - confidence level");
  bind_option(app, b, cfg, "--tol", &RunConfig::tol, "block solver tolerance");
  bind_option(app, b, cfg, "--max-iter", &RunConfig::max_iter, "block solver iteration cap");
  bind_option(app, b, cfg, "--allow-unconverged", &RunConfig::allow_unconverged,
       "combine even if a block fit did not converge");
}

void apply_config_file(const std::string& path, const Bindings& b, RunConfig& cfg) {
  if (path.empty()) return;
  RunConfig base;
  scm::cli::load_toml(path, base);
  for (const auto& binding : b) {
    if (binding.option->count() == 0) binding.copy(base, cfg);
  }
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw scm::DataError("cli", "cannot open data file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Files are only written once everything has been computed.
void write_outputs(const fs::path& dir, const std::map<std::string, std::string>& files) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw scm::ConfigError("cli", "cannot create output directory " + dir.string());
  for (const auto& [name, content] : files) {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
    if (!out) throw scm::ConfigError("cli", "cannot write " + (dir / name).string());
  }
}

void add_constraint_files(std::map<std::string, std::string>& files, const scm::ConstraintMap& cmap,
                          const scm::RunMetadata& meta) {
  files["constraints.json"] = scm::constraints_json(cmap, meta) + "\n";
  const std::pair<const char*, const Eigen::MatrixXd*> mats[] = {
      {"H.csv", &cmap.H}, {"Rtilde.csv", &cmap.Rtilde}, {"D.csv", &cmap.D}, {"Dtilde.csv", &cmap.Dtilde}};
  for (const auto& [name, m] : mats) {
    std::ostringstream os;
    scm::write_matrix_csv(os, *m, meta);
    files[name] = os.str();
  }
}

std::string percent(double part, double total) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << (total > 0 ? 100.0 * part / total : 0.0) << "%";
  return os.str();
}

int run_fit(RunConfig cfg, bool dump_constraints) {
  const scm::PipelineConfig pc = scm::cli::pipeline_config(cfg);
  if (!cfg.data) throw scm::ConfigError("cli", "no data file given", std::nullopt, "pass --data or set data in the config");
  const std::string raw = slurp(*cfg.data);
  std::istringstream in(raw);
  const scm::LongData data = scm::parse_long_csv(in, cfg.q, cfg.p, *cfg.data);
  const scm::Partition part = scm::cli::resolve_partition(cfg, data.min_time(), data.max_time());
  const std::vector<double> grid = scm::cli::curve_grid(cfg, data);

  scm::RunMetadata meta;
  meta.config_hash = scm::config_hash(
      scm::cli::canonical_settings(cfg, part.edges, scm::config_hash(raw)));

  const scm::PipelineResult result = scm::run_pipeline(data, part, pc, grid);

  std::map<std::string, std::string> files;
  files["result.json"] = scm::result_bundle(result, meta) + "\n";
  std::ostringstream curves;
  scm::write_curves_csv(curves, result.combined.curves, meta);
  files["curves.csv"] = curves.str();
  files["timing.json"] = scm::timings_json(result.timings) + "\n";
  if (dump_constraints) add_constraint_files(files, result.cmap, meta);
  if (cfg.save_block_fits) {
    for (const auto& f : result.fits) {
      char name[32];
      std::snprintf(name, sizeof name, "block_%03d.json", f.block + 1);
      files[name] = scm::block_fit_to_json(f) + "\n";
    }
  }
  write_outputs(cfg.out, files);

  const auto& t = result.timings;
  std::cerr << "timing: distributed " << t.distributed << " s (" << percent(t.distributed, t.total())
            << "), combine " << t.combine << " s, gcv " << t.gcv << " s, inference " << t.inference
            << " s, total " << t.total() << " s\n";
  std::cout << "lambda " << result.combined.lambda << ", " << result.cmap.reduced_dim()
            << " parameters, results in " << cfg.out << "\n";
  return 0;
}

int run_dump_constraints(const RunConfig& cfg) {
  const scm::PipelineConfig pc = scm::cli::pipeline_config(cfg);
  double lo = 0.0, hi = 0.0;
  if (cfg.edges.empty()) {
    if (!cfg.data) throw scm::ConfigError("cli", "uniform blocks need --data to know the time range");
    const scm::LongData data = scm::read_long_csv(*cfg.data, cfg.q, cfg.p);
    lo = data.min_time();
    hi = data.max_time();
  }
  const scm::Partition part = scm::cli::resolve_partition(cfg, lo, hi);
  const scm::ConstraintMap cmap = scm::build_constraint_map(part, pc.basis, pc.smoothness, cfg.p);
  scm::RunMetadata meta;
  meta.config_hash = scm::config_hash(scm::cli::canonical_settings(cfg, part.edges, ""));
  std::map<std::string, std::string> files;
  add_constraint_files(files, cmap, meta);
  write_outputs(cfg.out, files);
  std::cout << "theta: " << cmap.full_dim() << ", theta*: " << cmap.reduced_dim()
            << ", constraint rows: " << cmap.H.rows() << ", written to " << cfg.out << "\n";
  return 0;
}

int run_simulate(const RunConfig& cfg, const std::string& data_out) {
  scm::Scenario sc = scm::make_scenario(scm::parse_scenario(cfg.scenario), cfg.full_scale);
  if (cfg.n) {
    if (*cfg.n < 2) throw scm::ConfigError("cli", "n must be at least 2");
    sc.n = *cfg.n;
  }
  sc.seed = cfg.seed;
  if (cfg.rep_workers < 1) throw scm::ConfigError("cli", "rep_workers must be at least 1");

  if (!data_out.empty()) {
    std::ofstream out(data_out);
    if (!out) throw scm::ConfigError("cli", "cannot write " + data_out);
    scm::write_long_csv(out, scm::generate(sc, scm::replicate_seed(sc.seed, 0)));
  }

  scm::PipelineConfig pc = sc.fit;
  if (cfg.schema != 1 && cfg.schema != 2) throw scm::ConfigError("cli", "schema must be 1 or 2");
  pc.schema = static_cast<scm::Schema>(cfg.schema);
  pc.workers = std::max(1, cfg.workers);
  pc.alpha = cfg.alpha;
  pc.fit.tol = cfg.tol;
  pc.fit.max_iter = cfg.max_iter;

  scm::McOptions opts;
  opts.reps = cfg.reps;
  opts.workers = cfg.rep_workers;
  if (cfg.time_both_schemas) opts.timed_schemas = {scm::Schema::LambdaParallel, scm::Schema::BlockParallel};

  scm::set_warnings_enabled(false);
  const scm::McReport report = scm::run_mc(sc, pc, opts);

  scm::RunMetadata meta;
  meta.config_hash = scm::config_hash(scm::cli::canonical_settings(cfg, sc.partition.edges, ""));
  const std::string table = scm::format_table(report);
  write_outputs(cfg.out, {{"mc_report.json", scm::mc_report_json(report, meta) + "\n"},
                          {"mc_report.txt", "# tool=" + meta.tool + " version=" + meta.version +
                                                " config_hash=" + meta.config_hash + "\n" + table}});
  std::cout << table;
  return 0;
}

int exit_code(const scm::Error& e) {
  return e.kind() == scm::ErrorKind::Numeric ? kExitNumeric : kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smooth constrained meta-estimation of time-varying coefficients"};
  app.require_subcommand(1);
  app.set_version_flag("--version", scm::tool_version());

  RunConfig cfg;
  std::string config_path;
  std::string data_out;
  bool dump_constraints = false;
  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress solver warnings");

  Bindings fit_b, dump_b, sim_b;
  CLI::App* fit = app.add_subcommand("fit", "fit a model to long-format data");
  fit->add_option("--config", config_path, "TOML file; flags override its values")->check(CLI::ExistingFile);
  add_model_options(fit, fit_b, cfg);
  add_fit_options(fit, fit_b, cfg);
  bind_option(fit, fit_b, cfg, "--grid-step", &RunConfig::grid_step, "curve grid spacing (default: observed times)");
  bind_option(fit, fit_b, cfg, "--save-block-fits", &RunConfig::save_block_fits, "write each block's summary payload");
  fit->add_flag("--dump-constraints", dump_constraints, "also write H, Rtilde, D and Dtilde");

  CLI::App* dump = app.add_subcommand("dump-constraints", "write the constraint and reduction matrices");
  dump->add_option("--config", config_path, "TOML file; flags override its values")->check(CLI::ExistingFile);
  add_model_options(dump, dump_b, cfg);

  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo study of a preset scenario");
  sim->add_option("--config", config_path, "TOML file; flags override its values")->check(CLI::ExistingFile);
  bind_option(sim, sim_b, cfg, "--scenario", &RunConfig::scenario, "scenario name");
  sim_b.back().option->check(CLI::IsMember(scm::scenario_names()));
  bind_option(sim, sim_b, cfg, "--reps", &RunConfig::reps, "number of replicates");
  bind_option(sim, sim_b, cfg, "--seed", &RunConfig::seed, "base seed");
  bind_option(sim, sim_b, cfg, "--n", &RunConfig::n, "subjects per replicate (overrides the preset)");
  bind_option(sim, sim_b, cfg, "--full-scale", &RunConfig::full_scale, "full-size Poisson scenario");
  bind_option(sim, sim_b, cfg, "--rep-workers", &RunConfig::rep_workers, "replicates run concurrently");
  bind_option(sim, sim_b, cfg, "--time-both-schemas", &RunConfig::time_both_schemas, "time schema 1 and 2 per replicate");
  bind_option(sim, sim_b, cfg, "--schema", &RunConfig::schema, "1: lambda-parallel, 2: block-parallel");
  bind_option(sim, sim_b, cfg, "--workers", &RunConfig::workers, "block-level worker threads per replicate");
  bind_option(sim, sim_b, cfg, "--alpha", &RunConfig::alpha, "1 - confidence level");
  bind_option(sim, sim_b, cfg, "--out", &RunConfig::out, "output directory");
  sim->add_option("--data-out", data_out, "also write replicate 0's data as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (quiet) scm::set_warnings_enabled(false);

  try {
    if (fit->parsed()) {
      apply_config_file(config_path, fit_b, cfg);
      return run_fit(cfg, dump_constraints);
    }
    if (dump->parsed()) {
      apply_config_file(config_path, dump_b, cfg);
      return run_dump_constraints(cfg);
    }
    apply_config_file(config_path, sim_b, cfg);
    if (cfg.scenario.empty()) {
      throw scm::ConfigError("cli", "no scenario given", std::nullopt,
                             "choose one of broken-stick, known-cubic, poisson-copula");
    }
    return run_simulate(cfg, data_out);
  } catch (const scm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
