#include "scm/model.hpp"

#include <cmath>
#include <sstream>

#include "scm/errors.hpp"

namespace scm {

double LinkFunction::value(double u) const {
  return kind == LinkKind::Identity ? u : std::exp(u);
}

double LinkFunction::derivative(double u) const {
  return kind == LinkKind::Identity ? 1.0 : std::exp(u);
}

bool LinkFunction::admissible(double u) const {
  if (!std::isfinite(u)) return false;
  return kind == LinkKind::Identity || std::abs(u) <= kLogLinkBound;
}

std::string to_string(LinkKind kind) {
  return kind == LinkKind::Identity ? "identity" : "log";
}

LinkKind parse_link(const std::string& name) {
  if (name == "identity" || name == "gaussian") return LinkKind::Identity;
  if (name == "log" || name == "poisson") return LinkKind::Log;
  throw ConfigError("model", "unknown link '" + name + "'", std::nullopt,
                    "use identity or log");
}

int BasisSpec::coefficient_count() const {
  int n = 0;
  for (int d : degrees) n += d + 1;
  return n;
}

void BasisSpec::validate() const {
  for (int d : degrees) {
    if (d < 1) {
      throw ConfigError("model", "polynomial degree must be >= 1, got " + std::to_string(d));
    }
  }
}

double basis_coordinate(double t, double lo, double hi, bool scaled) {
  const double s = t - lo;
  return scaled ? s / (hi - lo) : s;
}

Eigen::VectorXd basis_row(double t, int degree, double lo, double hi, bool scaled) {
  if (!(t >= lo && t <= hi)) {
    std::ostringstream os;
    os << "time " << t << " outside block [" << lo << ", " << hi << "]";
    throw DataError("model", os.str());
  }
  const double s = basis_coordinate(t, lo, hi, scaled);
  Eigen::VectorXd row(degree + 1);
  double power = 1.0;
  for (int d = 0; d <= degree; ++d) {
    row[d] = power;
    power *= s;
  }
  return row;
}

Eigen::VectorXd basis_row(double t, int u, const BlockModel& model) {
  return basis_row(t, model.basis.degrees.at(u), model.lo, model.hi, model.basis.scaled);
}

Eigen::MatrixXd block_design(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                             const Eigen::VectorXd& times, const BlockModel& model) {
  const Eigen::Index m = times.size();
  const int q = model.q();
  if (x.rows() != m || x.cols() != q || z.rows() != m || z.cols() != model.p) {
    throw ConfigError("model", "design dimensions inconsistent with block model", model.block);
  }
  Eigen::MatrixXd design(m, model.dim());
  for (Eigen::Index k = 0; k < m; ++k) {
    const double t = times[k];
    if (!(t >= model.lo && t <= model.hi)) {
      std::ostringstream os;
      os << "time " << t << " outside block [" << model.lo << ", " << model.hi << "]";
      throw DataError("model", os.str(), model.block);
    }
    const double s = basis_coordinate(t, model.lo, model.hi, model.basis.scaled);
    int col = 0;
    for (int u = 0; u < q; ++u) {
      double power = x(k, u);
      for (int d = 0; d <= model.basis.degrees[u]; ++d) {
        design(k, col++) = power;
        power *= s;
      }
    }
    for (int l = 0; l < model.p; ++l) design(k, col++) = z(k, l);
  }
  return design;
}

MeanJacobian mean_and_jacobian(const Eigen::VectorXd& theta, const Eigen::MatrixXd& design,
                               const Eigen::VectorXd& times, const BlockModel& model,
                               long long subject) {
  if (theta.size() != model.dim() || design.cols() != model.dim()) {
    throw ConfigError("model", "parameter dimension does not match block model", model.block);
  }
  MeanJacobian out;
  out.linear_predictor = design * theta;
  const Eigen::Index m = design.rows();
  out.mu.resize(m);
  out.dmu.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double u = out.linear_predictor[k];
    if (!model.link.admissible(u)) {
      std::ostringstream os;
      os << "non-finite or out-of-range linear predictor " << u << " (subject " << subject
         << ", time " << (k < times.size() ? times[k] : 0.0) << ")";
      throw NumericError("model", os.str(), model.block,
                         "check starting values or covariate scaling");
    }
    out.mu[k] = model.link.value(u);
    out.dmu[k] = model.link.derivative(u);
  }
  if (model.link.kind == LinkKind::Identity) {
    out.jacobian = design;
  } else {
    out.jacobian = out.dmu.asDiagonal() * design;
  }
  return out;
}

MeanJacobian mean_and_jacobian(const Eigen::VectorXd& theta, const Eigen::MatrixXd& x,
                               const Eigen::MatrixXd& z, const Eigen::VectorXd& times,
                               const BlockModel& model, long long subject) {
  return mean_and_jacobian(theta, block_design(x, z, times, model), times, model, subject);
}

ParamLayout::ParamLayout(BasisSpec basis, int blocks, int p)
    : basis_(std::move(basis)), blocks_(blocks), p_(p) {
  gamma_offsets_.resize(basis_.q());
  int offset = 0;
  for (int u = 0; u < basis_.q(); ++u) {
    gamma_offsets_[u] = offset;
    offset += blocks_ * (basis_.degrees[u] + 1);
  }
  block_indices_.resize(blocks_);
  for (int j = 0; j < blocks_; ++j) {
    auto& idx = block_indices_[j];
    for (int u = 0; u < basis_.q(); ++u) {
      for (int d = 0; d <= basis_.degrees[u]; ++d) idx.push_back(gamma_index(j, u, d));
    }
    for (int k = 0; k < p_; ++k) idx.push_back(eta_index(k));
  }
}

int ParamLayout::local_gamma_index(int u, int d) const {
  int offset = 0;
  for (int v = 0; v < u; ++v) offset += basis_.degrees[v] + 1;
  return offset + d;
}

int ParamLayout::gamma_index(int j, int u, int d) const {
  return gamma_offsets_[u] + j * (basis_.degrees[u] + 1) + d;
}

Eigen::VectorXd ParamLayout::extract_block(const Eigen::VectorXd& theta, int j) const {
  const auto& idx = block_indices_[j];
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t l = 0; l < idx.size(); ++l) out[static_cast<Eigen::Index>(l)] = theta[idx[l]];
  return out;
}

std::vector<std::string> ParamLayout::labels() const {
  std::vector<std::string> out(full_dim());
  for (int u = 0; u < q(); ++u) {
    for (int j = 0; j < blocks_; ++j) {
      for (int d = 0; d <= basis_.degrees[u]; ++d) {
        std::ostringstream os;
        os << "gamma[u=" << u + 1 << ",j=" << j + 1 << ",d=" << d << "]";
        out[gamma_index(j, u, d)] = os.str();
      }
    }
  }
  for (int k = 0; k < p_; ++k) out[eta_index(k)] = "eta[" + std::to_string(k + 1) + "]";
  return out;
}

}  // namespace scm
