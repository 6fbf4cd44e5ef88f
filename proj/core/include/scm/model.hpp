#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace scm {

enum class LinkKind { Identity, Log };

// Canonical link h in mu = h(eta). Log-link linear predictors with
// |u| > kLogLinkBound are rejected rather than saturated.
struct LinkFunction {
  static constexpr double kLogLinkBound = 700.0;

  LinkKind kind = LinkKind::Identity;

  double value(double u) const;
  double derivative(double u) const;
  bool admissible(double u) const;
};

std::string to_string(LinkKind kind);
LinkKind parse_link(const std::string& name);

// Polynomial degree per functional covariate and the choice between the
// raw (t - c_{j-1}) and the unit-interval (t - c_{j-1}) / (c_j - c_{j-1})
// parameterization.
struct BasisSpec {
  std::vector<int> degrees;
  bool scaled = true;

  int q() const { return static_cast<int>(degrees.size()); }
  // sum_u (d_u + 1)
  int coefficient_count() const;
  void validate() const;
};

// Mean model for one block: edges, basis, link and covariate counts.
struct BlockModel {
  int block = 0;
  double lo = 0.0;
  double hi = 1.0;
  BasisSpec basis;
  LinkFunction link;
  int p = 0;

  int q() const { return basis.q(); }
  // dim(theta_j) = sum_u (d_u + 1) + p
  int dim() const { return basis.coefficient_count() + p; }
};

// Local coordinate s used by the basis inside [lo, hi].
double basis_coordinate(double t, double lo, double hi, bool scaled);

// (s^0, ..., s^degree); throws DataError when t lies outside [lo, hi].
Eigen::VectorXd basis_row(double t, int degree, double lo, double hi, bool scaled);
Eigen::VectorXd basis_row(double t, int u, const BlockModel& model);

// Design matrix whose row k is (X_k1 s^0..s^d1, ..., X_kq s^0..s^dq, Z_k).
// Columns are covariate-major, degree-minor, followed by the scalar
// covariates; every downstream index computation relies on this order.
Eigen::MatrixXd block_design(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                             const Eigen::VectorXd& times, const BlockModel& model);

struct MeanJacobian {
  Eigen::VectorXd linear_predictor;
  Eigen::VectorXd mu;
  Eigen::VectorXd dmu;          // h'(linear predictor)
  Eigen::MatrixXd jacobian;     // m x dim(theta_j)
};

// mu_t = h(X_t^T beta_j(t) + Z_t^T eta) and d mu / d theta_j.
// `subject` is only used to label numeric errors.
MeanJacobian mean_and_jacobian(const Eigen::VectorXd& theta, const Eigen::MatrixXd& x,
                               const Eigen::MatrixXd& z, const Eigen::VectorXd& times,
                               const BlockModel& model, long long subject = -1);

// Same, but with a precomputed design matrix.
MeanJacobian mean_and_jacobian(const Eigen::VectorXd& theta, const Eigen::MatrixXd& design,
                               const Eigen::VectorXd& times, const BlockModel& model,
                               long long subject = -1);

// Index bookkeeping between the per-block parameter theta_j and the shared
// parameter theta = (gamma_1, ..., gamma_q, eta), gamma_u = (gamma_1u, ..., gamma_Ju).
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(BasisSpec basis, int blocks, int p);

  const BasisSpec& basis() const { return basis_; }
  int blocks() const { return blocks_; }
  int q() const { return basis_.q(); }
  int p() const { return p_; }

  int block_dim() const { return basis_.coefficient_count() + p_; }
  int gamma_dim() const { return blocks_ * basis_.coefficient_count(); }
  int full_dim() const { return gamma_dim() + p_; }

  int local_gamma_index(int u, int d) const;
  int local_eta_index(int k) const { return basis_.coefficient_count() + k; }
  int gamma_index(int j, int u, int d) const;
  int eta_index(int k) const { return gamma_dim() + k; }

  // E_j as an index list: entry l is the position in theta of theta_j[l].
  const std::vector<int>& block_indices(int j) const { return block_indices_[j]; }

  Eigen::VectorXd extract_block(const Eigen::VectorXd& theta, int j) const;
  std::vector<std::string> labels() const;

 private:
  BasisSpec basis_;
  int blocks_ = 0;
  int p_ = 0;
  std::vector<int> gamma_offsets_;
  std::vector<std::vector<int>> block_indices_;
};

}  // namespace scm
