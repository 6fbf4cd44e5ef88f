#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "scm/linalg.hpp"
#include "scm/model.hpp"
#include "scm/partition.hpp"

namespace scm {

enum class CorrelationKind { Independence, AR1, Exchangeable };

std::string to_string(CorrelationKind kind);
CorrelationKind parse_correlation(const std::string& name);

// Basis matrices R_1 = I and, for AR1/Exchangeable, a 0/1 matrix R_2:
// AR1 has ones on the first off-diagonals, Exchangeable ones everywhere
// off the diagonal.
struct WorkingCorrelation {
  CorrelationKind kind = CorrelationKind::Independence;

  int basis_count() const { return kind == CorrelationKind::Independence ? 1 : 2; }
  Eigen::MatrixXd basis_matrix(int w, Eigen::Index m) const;
  // R_w * in, without forming R_w.
  Eigen::MatrixXd apply(int w, const Eigen::MatrixXd& in) const;
};

// Extended-score summary of one block at some theta_j.
struct BlockMoments {
  int block = 0;
  std::vector<int> subjects;  // dense subject index of each score row
  Eigen::VectorXd gbar;       // W*K
  Eigen::MatrixXd scores;     // N x W*K, row i is g_ij
  Eigen::MatrixXd jacobian;   // W*K x K, derivative of gbar (residual part only)
  Eigen::MatrixXd weight;     // C = scores^T scores / N, no ridge

  int subject_count() const { return static_cast<int>(subjects.size()); }
};

// Ridge added to C before any inversion: 1e-8 * trace(C) / dim(C).
double default_weight_ridge(const Eigen::MatrixXd& c);
// Factor of C + ridge*I; throws NumericError when it is still singular.
SpdFactor factor_weight(const Eigen::MatrixXd& c, std::optional<double> ridge, int block);

// Evaluates extended scores for one block. Holds a reference to the data;
// the BlockData must outlive the problem.
class BlockProblem {
 public:
  BlockProblem(const BlockData& data, BlockModel model, WorkingCorrelation corr,
               double dispersion = 1.0);

  const BlockData& data() const { return *data_; }
  const BlockModel& model() const { return model_; }
  const WorkingCorrelation& correlation() const { return corr_; }
  double dispersion() const { return dispersion_; }
  void set_dispersion(double phi) { dispersion_ = phi; }
  int dim() const { return model_.dim(); }
  int moment_dim() const { return corr_.basis_count() * model_.dim(); }

  BlockMoments moments(const Eigen::VectorXd& theta) const;
  // Only gbar, for line searches.
  Eigen::VectorXd mean_score(const Eigen::VectorXd& theta) const;

  // Independence fit: ordinary least squares (Identity) or Poisson IRLS (Log).
  Eigen::VectorXd independence_fit() const;
  // Method-of-moments residual variance at theta (Identity link).
  double residual_variance(const Eigen::VectorXd& theta) const;

 private:
  const BlockData* data_;
  BlockModel model_;
  WorkingCorrelation corr_;
  double dispersion_;
  std::vector<Eigen::MatrixXd> designs_;
};

// gbar, per-subject scores and the Jacobian of gbar at theta_j. The Jacobian
// differentiates the residual only: -(1/N) sum_i stack_w(J^T A^-1/2 R_w A^-1/2 J).
BlockMoments extended_score(const Eigen::VectorXd& theta, const BlockData& block,
                            const WorkingCorrelation& corr, const BlockModel& model,
                            double dispersion = 1.0);

struct QifValue {
  double value = 0.0;           // N gbar^T (C + ridge I)^-1 gbar
  Eigen::VectorXd gradient;     // 2N jacobian^T (C + ridge I)^-1 gbar, C held fixed
  Eigen::MatrixXd weight;       // C
  Eigen::VectorXd gbar;
};

QifValue qif_objective(const Eigen::VectorXd& theta, const BlockData& block,
                       const WorkingCorrelation& corr, const BlockModel& model,
                       std::optional<double> ridge = std::nullopt, double dispersion = 1.0);

struct FitOptions {
  std::optional<Eigen::VectorXd> init;
  double tol = 1e-8;
  int max_iter = 50;
};

struct IterationRecord {
  double objective_before = 0.0;  // with C fixed at the iterate
  double objective_after = 0.0;
  double step = 1.0;              // accepted line-search fraction
};

struct BlockFit {
  int block = 0;
  Eigen::VectorXd theta;
  BlockMoments moments;  // evaluated at theta
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double dispersion = 1.0;
  CorrelationKind correlation = CorrelationKind::Independence;
  std::vector<IterationRecord> history;
};

BlockFit fit_block(const BlockData& block, const WorkingCorrelation& corr,
                   const BlockModel& model, const FitOptions& options = {});

}  // namespace scm
