#include "scm/linalg.hpp"

#include <Eigen/QR>
#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>


namespace scm {

namespace {
std::atomic<bool> g_warnings{true};
std::mutex g_log_mutex;

// Reciprocal condition number estimate from the Cholesky diagonal.
double diag_rcond(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto d = llt.matrixLLT().diagonal();
  const double hi = d.maxCoeff();
  const double lo = d.minCoeff();
  if (!(hi > 0.0)) return 0.0;
  return (lo / hi) * (lo / hi);
}
}  // namespace

void log_warning(const std::string& message) {
  if (!g_warnings.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(g_log_mutex);
  std::clog << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

bool try_llt(const Eigen::MatrixXd& a, Eigen::LLT<Eigen::MatrixXd>& out) {
  out.compute(a);
  if (out.info() != Eigen::Success) return false;
  if (!is_finite(out.matrixLLT())) return false;
  return diag_rcond(out) > 1e-15;
}

SpdFactor::SpdFactor(const Eigen::MatrixXd& a, double ridge_start,
                     double ridge_stop, std::string what) {
  if (a.rows() == 0) {
    ok_ = true;
    return;
  }
  if (try_llt(a, llt_)) {
    ok_ = true;
    return;
  }
  const double n = static_cast<double>(a.rows());
  double scale = a.trace() / n;
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  for (double r = ridge_start; r <= ridge_stop * (1.0 + 1e-9); r *= 10.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += r * scale;
    std::ostringstream os;
    os << what << ": adding ridge " << r << "*trace/dim";
    log_warning(os.str());
    if (try_llt(b, llt_)) {
      ok_ = true;
      ridge_ = r * scale;
      return;
    }
  }
  ok_ = false;
}

Eigen::MatrixXd SpdFactor::inverse() const {
  return llt_.solve(Eigen::MatrixXd::Identity(llt_.rows(), llt_.rows()));
}

void symmetrize(Eigen::MatrixXd& a) {
  a = 0.5 * (a + a.transpose()).eval();
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double rel_tol) {
  if (a.size() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(rel_tol);
  return qr.rank();
}

bool is_finite(const Eigen::MatrixXd& a) { return a.allFinite(); }

}  // namespace scm
