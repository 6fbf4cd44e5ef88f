#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "scm/model.hpp"
#include "scm/partition.hpp"

namespace scm {

enum class Smoothness { None, C0, C1 };

std::string to_string(Smoothness s);
Smoothness parse_smoothness(const std::string& name);
// Number of matched derivatives plus one: None -> 0, C0 -> 1, C1 -> 2.
int matched_orders(Smoothness s);

// Continuity constraints H gamma = 0 and the reduction theta = Rtilde theta*.
//
// theta* keeps, per covariate, every coefficient of block 1 and, for each
// later block, the coefficients of degree > v (v = 0 for C0, 1 for C1).
// The dropped low-order coefficients of block j+1 are regenerated from block
// j's value (and first derivative) at the shared edge. Scalar effects eta
// are carried through unchanged.
struct ConstraintMap {
  Smoothness smoothness = Smoothness::None;
  Partition partition;
  ParamLayout layout;
  Eigen::MatrixXd H;       // rank(H) x gamma_dim
  Eigen::MatrixXd Rtilde;  // dim(theta) x dim(theta*)
  Eigen::MatrixXd D;       // dim(theta) x dim(theta), 1 on gamma, 0 on eta
  Eigen::MatrixXd Dtilde;  // Rtilde^T D Rtilde
  std::vector<int> kept;   // theta index that each theta* entry copies

  int full_dim() const { return static_cast<int>(Rtilde.rows()); }
  int reduced_dim() const { return static_cast<int>(Rtilde.cols()); }
  std::vector<std::string> reduced_labels() const;
  Eigen::VectorXd expand(const Eigen::VectorXd& theta_star) const { return Rtilde * theta_star; }
};

// Throws ConfigError when v >= d_u for some covariate.
void validate_smoothness(const BasisSpec& basis, Smoothness s);

Eigen::MatrixXd build_H(const Partition& part, const BasisSpec& basis, Smoothness s);
Eigen::MatrixXd build_Rtilde(const Partition& part, const BasisSpec& basis, Smoothness s, int p);
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_D(const Partition& part, const BasisSpec& basis,
                                                    int p, const Eigen::MatrixXd& rtilde);

ConstraintMap build_constraint_map(const Partition& part, const BasisSpec& basis, Smoothness s,
                                   int p);

// Rows of Rtilde that belong to gamma.
inline Eigen::MatrixXd gamma_rows(const ConstraintMap& cmap) {
  return cmap.Rtilde.topRows(cmap.layout.gamma_dim());
}

}  // namespace scm
