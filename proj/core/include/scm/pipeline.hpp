#pragma once

#include <span>
#include <vector>

#include "scm/combine.hpp"
#include "scm/constraint.hpp"
#include "scm/partition.hpp"
#include "scm/qif.hpp"

namespace scm {

struct PipelineConfig {
  BasisSpec basis{{3}, true};
  LinkKind link = LinkKind::Identity;
  CorrelationKind correlation = CorrelationKind::AR1;
  Smoothness smoothness = Smoothness::C0;
  std::vector<double> lambda_grid{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  Schema schema = Schema::BlockParallel;
  int workers = 1;
  double alpha = 0.05;
  FitOptions fit;
  bool allow_unconverged = false;
};

struct PhaseTimings {
  double distributed = 0.0;  // J block fits
  double combine = 0.0;      // stacking and one-step system
  double gcv = 0.0;          // lambda search with re-evaluation
  double inference = 0.0;    // covariance and bands
  double total() const { return distributed + combine + gcv + inference; }
};

struct PipelineResult {
  ConstraintMap cmap;
  std::vector<BlockFit> fits;
  CombinedFit combined;
  PhaseTimings timings;
};

// Extended-score evaluators for each block, usable as a BlockEvaluator.
class BlockEvaluators {
 public:
  BlockEvaluators(const std::vector<BlockData>& blocks, const PipelineConfig& config,
                  const std::vector<BlockFit>& fits);
  BlockMoments operator()(int block, const Eigen::VectorXd& theta_block) const;
  const BlockProblem& problem(int j) const { return problems_[static_cast<std::size_t>(j)]; }

 private:
  std::vector<BlockProblem> problems_;
};

BlockModel block_model(const Partition& part, int j, const PipelineConfig& config, int p);

// Distributed step only: one QIF fit per block on `workers` threads.
std::vector<BlockFit> fit_blocks(const std::vector<BlockData>& blocks, const Partition& part,
                                 const PipelineConfig& config);

// Combination from block summaries: one-step estimator over the lambda grid,
// GCV selection, covariance and bands on `curve_grid`.
CombinedFit combine_blocks(const std::vector<BlockFit>& fits, const ConstraintMap& cmap,
                           const BlockEvaluator& eval, const PipelineConfig& config,
                           std::span<const double> curve_grid, PhaseTimings* timings = nullptr);

// Partition, distributed step and combination end to end. An empty
// `curve_grid` means every observed time point.
PipelineResult run_pipeline(const LongData& data, const Partition& part,
                            const PipelineConfig& config, std::span<const double> curve_grid = {});

std::vector<double> observed_times(const LongData& data);

}  // namespace scm
