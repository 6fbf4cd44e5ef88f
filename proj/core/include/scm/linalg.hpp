#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <string>

namespace scm {

// Cholesky factor of a symmetric positive (semi-)definite matrix. If the
// plain factorization fails or is badly conditioned, a diagonal ridge of
// `ridge_start * trace/dim` is added and escalated by 10x up to
// `ridge_stop * trace/dim`. Every escalation is reported through log_warning.
class SpdFactor {
 public:
  SpdFactor() = default;
  SpdFactor(const Eigen::MatrixXd& a, double ridge_start, double ridge_stop,
            std::string what);

  bool ok() const noexcept { return ok_; }
  // Absolute ridge that was added to the diagonal (0 if none).
  double ridge() const noexcept { return ridge_; }
  Eigen::Index size() const noexcept { return llt_.rows(); }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
  Eigen::MatrixXd inverse() const;

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool ok_ = false;
  double ridge_ = 0.0;
};

// Factorize once with a fixed ridge (possibly zero); no escalation.
bool try_llt(const Eigen::MatrixXd& a, Eigen::LLT<Eigen::MatrixXd>& out);

// Symmetrize in place: a <- (a + a^T) / 2.
void symmetrize(Eigen::MatrixXd& a);

// Rank by column-pivoted QR with a relative threshold.
Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double rel_tol = 1e-10);

bool is_finite(const Eigen::MatrixXd& a);

void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace scm
