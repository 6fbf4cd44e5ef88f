#include "scm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "scm/errors.hpp"
#include "scm/parallel.hpp"

namespace scm {

namespace {
using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}
}  // namespace

BlockModel block_model(const Partition& part, int j, const PipelineConfig& config, int p) {
  BlockModel m;
  m.block = j;
  m.lo = part.lo(j);
  m.hi = part.hi(j);
  m.basis = config.basis;
  m.link.kind = config.link;
  m.p = p;
  return m;
}

BlockEvaluators::BlockEvaluators(const std::vector<BlockData>& blocks, const PipelineConfig& config,
                                 const std::vector<BlockFit>& fits) {
  problems_.reserve(blocks.size());
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const auto& b = blocks[j];
    BlockModel m;
    m.block = b.index;
    m.lo = b.lo;
    m.hi = b.hi;
    m.basis = config.basis;
    m.link.kind = config.link;
    m.p = b.p;
    problems_.emplace_back(b, m, WorkingCorrelation{config.correlation}, fits[j].dispersion);
  }
}

BlockMoments BlockEvaluators::operator()(int block, const Eigen::VectorXd& theta_block) const {
  return problems_.at(static_cast<std::size_t>(block)).moments(theta_block);
}

std::vector<BlockFit> fit_blocks(const std::vector<BlockData>& blocks, const Partition& part,
                                 const PipelineConfig& config) {
  std::vector<BlockFit> fits(blocks.size());
  parallel_for(static_cast<int>(blocks.size()), config.workers, [&](int j) {
    const auto& b = blocks[static_cast<std::size_t>(j)];
    fits[static_cast<std::size_t>(j)] = fit_block(b, WorkingCorrelation{config.correlation},
                                                  block_model(part, j, config, b.p), config.fit);
  });
  return fits;
}

CombinedFit combine_blocks(const std::vector<BlockFit>& fits, const ConstraintMap& cmap,
                           const BlockEvaluator& eval, const PipelineConfig& config,
                           std::span<const double> curve_grid, PhaseTimings* timings) {
  auto start = Clock::now();
  std::vector<BlockMoments> summaries;
  std::vector<Eigen::VectorXd> estimates;
  summaries.reserve(fits.size());
  for (const auto& f : fits) {
    if (!f.converged && !config.allow_unconverged) {
      throw NumericError("combine", "block fit did not converge", f.block,
                         "raise max_iter, check the data, or allow unconverged fits");
    }
    summaries.push_back(f.moments);
    estimates.push_back(f.theta);
  }
  const StackedMoments at_all = stack(summaries, cmap);
  const OneStepSystem system(at_all, cmap, estimates);
  if (timings) timings->combine = seconds_since(start);

  start = Clock::now();
  GcvResult sel = gcv(config.lambda_grid, system, cmap, eval, config.schema, config.workers);
  if (timings) timings->gcv = seconds_since(start);

  start = Clock::now();
  CombinedFit out;
  out.theta_star = sel.theta_star;
  out.theta = cmap.expand(sel.theta_star);
  out.lambda = sel.lambda;
  out.alpha = config.alpha;
  out.gcv_table = sel.table;
  out.cov = covariance(sel.at_best, cmap, sel.lambda);
  out.curves = curve_and_bands(out.theta_star, out.cov, cmap, curve_grid, config.alpha);
  out.eta = scalar_effects(out.theta_star, out.cov, cmap, config.alpha);
  if (timings) timings->inference = seconds_since(start);
  return out;
}

std::vector<double> observed_times(const LongData& data) {
  std::set<double> times;
  for (const auto& s : data.subjects) times.insert(s.t.data(), s.t.data() + s.t.size());
  return {times.begin(), times.end()};
}

PipelineResult run_pipeline(const LongData& data, const Partition& part,
                            const PipelineConfig& config, std::span<const double> curve_grid) {
  if (static_cast<int>(config.basis.degrees.size()) != data.q) {
    throw ConfigError("pipeline", "one basis degree is required per functional covariate");
  }
  validate_smoothness(config.basis, config.smoothness);
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw ConfigError("pipeline", "alpha must be in (0, 1)");

  PipelineResult result;
  result.cmap = build_constraint_map(part, config.basis, config.smoothness, data.p);
  const std::vector<BlockData> blocks = split(data, part);
  for (const auto& b : blocks) {
    if (!b.complete()) {
      throw DataError("partition", "not every subject is observed in this block", b.index,
                      "the combination step requires complete block membership");
    }
  }

  auto start = Clock::now();
  result.fits = fit_blocks(blocks, part, config);
  result.timings.distributed = seconds_since(start);

  const BlockEvaluators evaluators(blocks, config, result.fits);
  const BlockEvaluator eval = [&evaluators](int j, const Eigen::VectorXd& th) {
    return evaluators(j, th);
  };
  std::vector<double> grid(curve_grid.begin(), curve_grid.end());
  if (grid.empty()) grid = observed_times(data);
  result.combined = combine_blocks(result.fits, result.cmap, eval, config, grid, &result.timings);
  return result;
}

}  // namespace scm
