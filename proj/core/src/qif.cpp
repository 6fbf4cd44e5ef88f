#include "scm/qif.hpp"

#include <cmath>
#include <sstream>

#include "scm/errors.hpp"

namespace scm {

std::string to_string(CorrelationKind kind) {
  switch (kind) {
    case CorrelationKind::Independence: return "independence";
    case CorrelationKind::AR1: return "ar1";
    case CorrelationKind::Exchangeable: return "exchangeable";
  }
  return "unknown";
}

CorrelationKind parse_correlation(const std::string& name) {
  if (name == "independence" || name == "ind") return CorrelationKind::Independence;
  if (name == "ar1" || name == "AR1") return CorrelationKind::AR1;
  if (name == "exchangeable" || name == "exch" || name == "cs") return CorrelationKind::Exchangeable;
  throw ConfigError("qif", "unknown working correlation '" + name + "'", std::nullopt,
                    "use independence, ar1 or exchangeable");
}

Eigen::MatrixXd WorkingCorrelation::basis_matrix(int w, Eigen::Index m) const {
  if (w == 0) return Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(m, m);
  if (kind == CorrelationKind::AR1) {
    for (Eigen::Index k = 0; k + 1 < m; ++k) r(k, k + 1) = r(k + 1, k) = 1.0;
  } else if (kind == CorrelationKind::Exchangeable) {
    r.setOnes();
    r.diagonal().setZero();
  }
  return r;
}

Eigen::MatrixXd WorkingCorrelation::apply(int w, const Eigen::MatrixXd& in) const {
  if (w == 0) return in;
  const Eigen::Index m = in.rows();
  if (kind == CorrelationKind::AR1) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, in.cols());
    if (m > 1) {
      out.topRows(m - 1) += in.bottomRows(m - 1);
      out.bottomRows(m - 1) += in.topRows(m - 1);
    }
    return out;
  }
  if (kind == CorrelationKind::Exchangeable) {
    const Eigen::RowVectorXd total = in.colwise().sum();
    Eigen::MatrixXd out = -in;
    out.rowwise() += total;
    return out;
  }
  return Eigen::MatrixXd::Zero(m, in.cols());
}

double default_weight_ridge(const Eigen::MatrixXd& c) {
  if (c.rows() == 0) return 0.0;
  return 1e-8 * c.trace() / static_cast<double>(c.rows());
}

SpdFactor factor_weight(const Eigen::MatrixXd& c, std::optional<double> ridge, int block) {
  Eigen::MatrixXd a = c;
  a.diagonal().array() += ridge.value_or(default_weight_ridge(c));
  // No escalation here: a singular C means the block is under-identified.
  SpdFactor f(a, 1e-8, 1e-8, "qif weight");
  if (!f.ok()) {
    throw NumericError("qif", "score covariance C is singular even after ridge", block,
                       "increase the ridge or use a coarser partition");
  }
  return f;
}

BlockProblem::BlockProblem(const BlockData& data, BlockModel model, WorkingCorrelation corr,
                           double dispersion)
    : data_(&data), model_(std::move(model)), corr_(corr), dispersion_(dispersion) {
  if (data.q != model_.q() || data.p != model_.p) {
    throw ConfigError("qif", "block data covariate counts do not match the model", data.index);
  }
  designs_.reserve(data.subjects.size());
  for (const auto& s : data.subjects) designs_.push_back(block_design(s.x, s.z, s.t, model_));
}

BlockMoments BlockProblem::moments(const Eigen::VectorXd& theta) const {
  const int n = data_->subject_count();
  const int k = dim();
  const int w_count = corr_.basis_count();
  if (n == 0) throw DataError("qif", "block has no subjects", data_->index);
  if (theta.size() != k || !theta.allFinite()) {
    throw NumericError("qif", "parameter vector is not finite or has wrong size", data_->index);
  }
  if (model_.link.kind == LinkKind::Identity && !(dispersion_ > 0.0)) {
    throw NumericError("qif", "zero marginal variance (dispersion)", data_->index);
  }

  BlockMoments out;
  out.block = data_->index;
  out.subjects.resize(static_cast<std::size_t>(n));
  out.scores.resize(n, w_count * k);
  out.jacobian = Eigen::MatrixXd::Zero(w_count * k, k);

  for (int i = 0; i < n; ++i) {
    const auto& s = data_->subjects[static_cast<std::size_t>(i)];
    out.subjects[static_cast<std::size_t>(i)] = s.subject;
    const auto mj = mean_and_jacobian(theta, designs_[static_cast<std::size_t>(i)], s.t, model_,
                                      s.subject);
    Eigen::VectorXd inv_sd(s.size());
    if (model_.link.kind == LinkKind::Identity) {
      inv_sd.setConstant(1.0 / std::sqrt(dispersion_));
    } else {
      if (!(mj.mu.minCoeff() > 0.0)) {
        throw NumericError("qif", "zero marginal variance for subject " +
                                      std::to_string(s.subject), data_->index);
      }
      inv_sd = mj.mu.array().rsqrt();
    }
    const Eigen::MatrixXd jh = inv_sd.asDiagonal() * mj.jacobian;
    const Eigen::VectorXd rh = inv_sd.cwiseProduct(s.y - mj.mu);
    for (int w = 0; w < w_count; ++w) {
      const Eigen::MatrixXd rr = corr_.apply(w, rh);
      out.scores.block(i, w * k, 1, k) = (jh.transpose() * rr).transpose();
      out.jacobian.middleRows(w * k, k).noalias() += jh.transpose() * corr_.apply(w, jh);
    }
  }
  const double inv_n = 1.0 / n;
  out.jacobian *= -inv_n;
  out.gbar = out.scores.colwise().sum().transpose() * inv_n;
  out.weight.noalias() = out.scores.transpose() * out.scores;
  out.weight *= inv_n;
  return out;
}

Eigen::VectorXd BlockProblem::mean_score(const Eigen::VectorXd& theta) const {
  const int n = data_->subject_count();
  const int k = dim();
  const int w_count = corr_.basis_count();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(w_count * k);
  for (int i = 0; i < n; ++i) {
    const auto& s = data_->subjects[static_cast<std::size_t>(i)];
    const auto mj = mean_and_jacobian(theta, designs_[static_cast<std::size_t>(i)], s.t, model_,
                                      s.subject);
    Eigen::VectorXd inv_sd(s.size());
    if (model_.link.kind == LinkKind::Identity) {
      inv_sd.setConstant(1.0 / std::sqrt(dispersion_));
    } else {
      inv_sd = mj.mu.array().rsqrt();
    }
    const Eigen::MatrixXd jh = inv_sd.asDiagonal() * mj.jacobian;
    const Eigen::VectorXd rh = inv_sd.cwiseProduct(s.y - mj.mu);
    for (int w = 0; w < w_count; ++w) {
      g.segment(w * k, k).noalias() += jh.transpose() * corr_.apply(w, rh);
    }
  }
  return g / static_cast<double>(n);
}

Eigen::VectorXd BlockProblem::independence_fit() const {
  const int k = dim();
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(k);
  const bool log_link = model_.link.kind == LinkKind::Log;
  for (std::size_t i = 0; i < designs_.size(); ++i) {
    const auto& d = designs_[i];
    const auto& y = data_->subjects[i].y;
    xtx.noalias() += d.transpose() * d;
    if (log_link) {
      xty.noalias() += d.transpose() * (y.array() + 0.5).log().matrix();
    } else {
      xty.noalias() += d.transpose() * y;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
    throw NumericError("qif", "design matrix is rank deficient in this block", data_->index,
                       "lower the polynomial degree or widen the block");
  }
  Eigen::VectorXd theta = ldlt.solve(xty);
  if (!log_link) return theta;

  // Poisson IRLS with step halving on the log-likelihood.
  auto loglik = [&](const Eigen::VectorXd& b, double& out) {
    double ll = 0.0;
    for (std::size_t i = 0; i < designs_.size(); ++i) {
      const Eigen::VectorXd eta = designs_[i] * b;
      if (eta.cwiseAbs().maxCoeff() > LinkFunction::kLogLinkBound) return false;
      ll += (data_->subjects[i].y.array() * eta.array() - eta.array().exp()).sum();
    }
    out = ll;
    return std::isfinite(ll);
  };
  double current = 0.0;
  if (!loglik(theta, current)) theta.setZero(), loglik(theta, current);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(k);
    for (std::size_t i = 0; i < designs_.size(); ++i) {
      const auto& d = designs_[i];
      const Eigen::VectorXd mu = (d * theta).array().exp();
      info.noalias() += d.transpose() * mu.asDiagonal() * d;
      score.noalias() += d.transpose() * (data_->subjects[i].y - mu);
    }
    Eigen::LDLT<Eigen::MatrixXd> f(info);
    const Eigen::VectorXd delta = f.solve(score);
    if (!delta.allFinite()) break;
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40; ++h) {
      const Eigen::VectorXd cand = theta + step * delta;
      double ll = 0.0;
      if (loglik(cand, ll) && ll >= current - 1e-12 * std::abs(current)) {
        theta = cand;
        current = ll;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || (step * delta).lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return theta;
}

double BlockProblem::residual_variance(const Eigen::VectorXd& theta) const {
  double rss = 0.0;
  std::size_t n_obs = 0;
  for (std::size_t i = 0; i < designs_.size(); ++i) {
    const auto& s = data_->subjects[i];
    const auto mj = mean_and_jacobian(theta, designs_[i], s.t, model_, s.subject);
    rss += (s.y - mj.mu).squaredNorm();
    n_obs += static_cast<std::size_t>(s.size());
  }
  const double df = n_obs > static_cast<std::size_t>(dim()) ? static_cast<double>(n_obs - dim())
                                                            : static_cast<double>(n_obs);
  return rss / df;
}

BlockMoments extended_score(const Eigen::VectorXd& theta, const BlockData& block,
                            const WorkingCorrelation& corr, const BlockModel& model,
                            double dispersion) {
  return BlockProblem(block, model, corr, dispersion).moments(theta);
}

QifValue qif_objective(const Eigen::VectorXd& theta, const BlockData& block,
                       const WorkingCorrelation& corr, const BlockModel& model,
                       std::optional<double> ridge, double dispersion) {
  const BlockMoments m = extended_score(theta, block, corr, model, dispersion);
  const SpdFactor f = factor_weight(m.weight, ridge, block.index);
  const Eigen::VectorXd cg = f.solve(m.gbar);
  const double n = static_cast<double>(m.subject_count());
  QifValue out;
  out.value = n * m.gbar.dot(cg);
  out.gradient = 2.0 * n * m.jacobian.transpose() * cg;
  out.weight = m.weight;
  out.gbar = m.gbar;
  return out;
}

BlockFit fit_block(const BlockData& block, const WorkingCorrelation& corr,
                   const BlockModel& model, const FitOptions& options) {
  BlockProblem prob(block, model, corr, 1.0);
  if (block.subject_count() < prob.dim()) {
    throw ConfigError("qif", "fewer subjects than block parameters", block.index,
                      "use fewer covariates, lower degree, or more subjects");
  }
  const Eigen::VectorXd indep = prob.independence_fit();
  if (model.link.kind == LinkKind::Identity) {
    const double phi = prob.residual_variance(indep);
    prob.set_dispersion(phi > 0.0 && std::isfinite(phi) ? phi : 1.0);
  }

  BlockFit fit;
  fit.block = block.index;
  fit.dispersion = prob.dispersion();
  fit.correlation = corr.kind;
  Eigen::VectorXd theta = options.init.value_or(indep);
  if (theta.size() != prob.dim()) {
    throw ConfigError("qif", "initial value has wrong dimension", block.index);
  }
  const double n = static_cast<double>(block.subject_count());

  for (int iter = 0; iter < options.max_iter; ++iter) {
    const BlockMoments m = prob.moments(theta);
    const SpdFactor f = factor_weight(m.weight, std::nullopt, block.index);
    const Eigen::VectorXd cg = f.solve(m.gbar);
    const Eigen::MatrixXd cj = f.solve(m.jacobian);
    const Eigen::VectorXd half_grad = m.jacobian.transpose() * cg;
    if (2.0 * n * half_grad.norm() < options.tol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd hess = m.jacobian.transpose() * cj;
    symmetrize(hess);
    Eigen::LDLT<Eigen::MatrixXd> hf(hess);
    const Eigen::VectorXd delta = -hf.solve(half_grad);
    if (hf.info() != Eigen::Success || !delta.allFinite()) {
      throw NumericError("qif", "Gauss-Newton system is singular", block.index,
                         "use a coarser partition or lower degree");
    }

    const double before = n * m.gbar.dot(cg);
    double step = 1.0;
    bool accepted = false;
    double after = before;
    Eigen::VectorXd cand;
    // With the residual-only Jacobian the iteration targets the root of
    // jacobian^T C^-1 gbar, which for the log link is not the minimizer of the
    // objective. A step is therefore also accepted when it shrinks that score.
    const double score_before = half_grad.norm();
    for (int h = 0; h < 40; ++h) {
      cand = theta + step * delta;
      try {
        const Eigen::VectorXd g = prob.mean_score(cand);
        after = n * g.dot(f.solve(g));
        if (std::isfinite(after) && after <= before * (1.0 + 1e-12) + 1e-300) {
          accepted = true;
          break;
        }
        if (std::isfinite(after) && model.link.kind != LinkKind::Identity) {
          const BlockMoments mc = prob.moments(cand);
          if ((mc.jacobian.transpose() * f.solve(mc.gbar)).norm() < score_before) {
            accepted = true;
            break;
          }
        }
      } catch (const NumericError&) {
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No decrease along the direction: stationary up to rounding.
      fit.converged = delta.lpNorm<Eigen::Infinity>() < std::sqrt(options.tol);
      break;
    }
    theta = cand;
    ++fit.iterations;
    fit.history.push_back({before, after, step});
    if ((step * delta).lpNorm<Eigen::Infinity>() < options.tol) {
      fit.converged = true;
      break;
    }
  }

  fit.theta = theta;
  fit.moments = prob.moments(theta);
  const SpdFactor f = factor_weight(fit.moments.weight, std::nullopt, block.index);
  fit.objective = n * fit.moments.gbar.dot(f.solve(fit.moments.gbar));
  if (!fit.converged) {
    std::ostringstream os;
    os << "block " << block.index + 1 << ": QIF did not converge in " << options.max_iter
       << " iterations";
    log_warning(os.str());
  }
  return fit;
}

}  // namespace scm
