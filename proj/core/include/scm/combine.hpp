#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scm/constraint.hpp"
#include "scm/linalg.hpp"
#include "scm/qif.hpp"

namespace scm {

// First-order conditions of every block stacked into one moment vector.
//
// Block j contributes G_ij = Gamma_j^T C_j^-1 g_ij (K_j entries) with
// Gamma_j the Jacobian of gbar_j and C_j its score covariance. S is the
// Gauss-Newton Jacobian of Gbar with respect to the shared theta: row block
// j equals S_jj = Gamma_j^T C_j^-1 Gamma_j scattered into block j's gamma
// columns and the shared eta columns.
struct StackedMoments {
  int subjects = 0;
  std::vector<int> offsets;                      // J+1 row offsets
  Eigen::VectorXd gbar;                          // sum_j K_j
  Eigen::MatrixXd subject_moments;               // N x sum_j K_j, row i = G_i
  std::vector<Eigen::MatrixXd> block_jacobians;  // S_jj
  Eigen::MatrixXd S;                             // sum_j K_j x dim(theta)
  Eigen::MatrixXd V;                             // (1/N) sum_i G_i G_i^T

  int blocks() const { return static_cast<int>(block_jacobians.size()); }
};

StackedMoments stack(std::span<const BlockMoments> blocks, const ConstraintMap& cmap);

// Cholesky of V with ridge 1e-10 * trace/dim escalated x10 up to 1e-6 * trace/dim.
SpdFactor factor_moment_covariance(const Eigen::MatrixXd& v);

// The one-step combination is a penalized weighted least-squares problem in
// theta*: minimize (S Rtilde theta* - b)^T V^-1 (S Rtilde theta* - b) + lambda
// theta*^T Dtilde theta*, with b_j = S_jj theta_hat_j. Everything except lambda
// is fixed once the block summaries arrive, so the system is assembled once.
class OneStepSystem {
 public:
  OneStepSystem(const StackedMoments& sm, const ConstraintMap& cmap,
                std::span<const Eigen::VectorXd> block_estimates);

  Eigen::VectorXd solve(double lambda) const;
  // Rtilde^T S^T V^-1 S Rtilde
  const Eigen::MatrixXd& information() const { return information_; }
  const Eigen::VectorXd& rhs() const { return rhs_; }

 private:
  Eigen::MatrixXd information_;
  Eigen::VectorXd rhs_;
  Eigen::MatrixXd dtilde_;
};

Eigen::VectorXd scm_one_step(const StackedMoments& sm, const ConstraintMap& cmap, double lambda,
                             std::span<const Eigen::VectorXd> block_estimates);

// Recomputes one block's extended-score summary at a given theta_j.
using BlockEvaluator = std::function<BlockMoments(int block, const Eigen::VectorXd& theta_block)>;

// Stacked moments at theta = Rtilde theta*, blocks evaluated on `workers` threads.
StackedMoments reevaluate(const BlockEvaluator& eval, const ConstraintMap& cmap,
                          const Eigen::VectorXd& theta_star, int workers = 1);

double gmm_objective(const StackedMoments& sm, const SpdFactor& weight, const ConstraintMap& cmap,
                     double lambda, const Eigen::VectorXd& theta_star);

struct GmmOptions {
  double tol = 1e-10;
  int max_iter = 100;
};

struct GmmResult {
  Eigen::VectorXd theta_star;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

// Iterated minimizer of Gbar(Rtilde theta*)^T V_all^-1 Gbar(Rtilde theta*)
// + lambda theta*^T Dtilde theta*, with the weight frozen at `v_all`. Gauss-Newton
// with a central-difference Jacobian of the re-evaluated moments and step halving.
GmmResult gmm_iterative(const BlockEvaluator& eval, const ConstraintMap& cmap,
                        const Eigen::MatrixXd& v_all, double lambda, const Eigen::VectorXd& init,
                        const GmmOptions& options = {});

// The two orchestrations of the lambda search: candidates in parallel
// (each re-evaluating all blocks itself) or candidates in sequence with the
// block re-evaluation spread over workers. Results are identical.
enum class Schema { LambdaParallel = 1, BlockParallel = 2 };

struct GcvEntry {
  double lambda = 0.0;
  double numerator = 0.0;  // Gbar^T V^-1 Gbar at the candidate
  double edf = 0.0;        // trace{(Q + lambda Dtilde)^-1 Q}
  double gcv = 0.0;
  bool valid = false;
};

struct GcvResult {
  std::vector<GcvEntry> table;
  int best = -1;
  double lambda = 0.0;
  Eigen::VectorXd theta_star;
  StackedMoments at_best;  // re-evaluated at Rtilde theta_star
};

// Ridge effective degrees of freedom trace{(Q + lambda Dtilde)^-1 Q}, in the
// reduced space. D is singular, so no form involving D^-1 is usable here.
// Returns NaN when the bracket is singular.
double effective_df(const Eigen::MatrixXd& q, const Eigen::MatrixXd& dtilde, double lambda);

GcvEntry gcv_entry(const StackedMoments& sm, const ConstraintMap& cmap, double lambda);

GcvResult gcv(std::span<const double> grid, const OneStepSystem& system, const ConstraintMap& cmap,
              const BlockEvaluator& eval, Schema schema, int workers);

// Sandwich B^-1 M B^-1 / N with M = Rtilde^T S^T V^-1 S Rtilde, B = M + lambda Dtilde.
// The result is the covariance of theta*_hat itself (already divided by N),
// ready for standard errors.
Eigen::MatrixXd covariance(const StackedMoments& sm, const ConstraintMap& cmap, double lambda);

double normal_quantile(double p);

// x_u(t)^T Rtilde: maps theta* to beta_u(t).
Eigen::RowVectorXd curve_selector(const ConstraintMap& cmap, int u, double t);
// e_k^T Rtilde: maps theta* to eta_k.
Eigen::RowVectorXd eta_selector(const ConstraintMap& cmap, int k);

struct BandPoint {
  double t = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct CurveBand {
  int covariate = 0;
  std::vector<BandPoint> points;
};

std::vector<CurveBand> curve_and_bands(const Eigen::VectorXd& theta_star, const Eigen::MatrixXd& cov,
                                       const ConstraintMap& cmap, std::span<const double> grid,
                                       double alpha);

struct ScalarEstimate {
  std::string label;
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

std::vector<ScalarEstimate> scalar_effects(const Eigen::VectorXd& theta_star,
                                           const Eigen::MatrixXd& cov, const ConstraintMap& cmap,
                                           double alpha);

struct CombinedFit {
  Eigen::VectorXd theta_star;
  Eigen::VectorXd theta;
  double lambda = 0.0;
  double alpha = 0.05;
  Eigen::MatrixXd cov;  // covariance of theta_star
  std::vector<GcvEntry> gcv_table;
  std::vector<CurveBand> curves;
  std::vector<ScalarEstimate> eta;
};

}  // namespace scm
