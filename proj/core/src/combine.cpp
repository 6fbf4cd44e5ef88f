#include "scm/combine.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <sstream>

#include "scm/errors.hpp"
#include "scm/parallel.hpp"

namespace scm {

StackedMoments stack(std::span<const BlockMoments> blocks, const ConstraintMap& cmap) {
  const int J = static_cast<int>(blocks.size());
  if (J != cmap.layout.blocks()) {
    throw ConfigError("combine", "number of block summaries does not match the partition");
  }
  if (J == 0) throw ConfigError("combine", "no blocks to combine");
  const auto& subjects = blocks[0].subjects;
  for (int j = 1; j < J; ++j) {
    if (blocks[static_cast<std::size_t>(j)].subjects != subjects) {
      throw DataError("combine", "blocks do not share the same subject set and ordering", j,
                      "every subject must be observed in every block");
    }
  }
  const int n = static_cast<int>(subjects.size());
  const int k = cmap.layout.block_dim();

  StackedMoments sm;
  sm.subjects = n;
  sm.offsets.resize(static_cast<std::size_t>(J) + 1);
  for (int j = 0; j <= J; ++j) sm.offsets[static_cast<std::size_t>(j)] = j * k;
  sm.gbar.resize(J * k);
  sm.subject_moments.resize(n, J * k);
  sm.S = Eigen::MatrixXd::Zero(J * k, cmap.full_dim());
  sm.block_jacobians.resize(static_cast<std::size_t>(J));

  for (int j = 0; j < J; ++j) {
    const auto& b = blocks[static_cast<std::size_t>(j)];
    if (b.jacobian.cols() != k) {
      throw ConfigError("combine", "block summary has the wrong parameter dimension", j);
    }
    const SpdFactor f = factor_weight(b.weight, std::nullopt, j);
    const Eigen::MatrixXd cinv_jac = f.solve(b.jacobian);  // C^-1 Gamma
    sm.subject_moments.middleCols(j * k, k).noalias() = b.scores * cinv_jac;
    sm.gbar.segment(j * k, k).noalias() = cinv_jac.transpose() * b.gbar;
    Eigen::MatrixXd sjj = b.jacobian.transpose() * cinv_jac;
    symmetrize(sjj);
    const auto& idx = cmap.layout.block_indices(j);
    for (int c = 0; c < k; ++c) sm.S.block(j * k, idx[static_cast<std::size_t>(c)], k, 1) = sjj.col(c);
    sm.block_jacobians[static_cast<std::size_t>(j)] = std::move(sjj);
  }
  sm.V.noalias() = sm.subject_moments.transpose() * sm.subject_moments;
  sm.V /= static_cast<double>(n);
  symmetrize(sm.V);
  return sm;
}

SpdFactor factor_moment_covariance(const Eigen::MatrixXd& v) {
  SpdFactor f(v, 1e-10, 1e-6, "moment covariance V");
  if (!f.ok()) {
    throw NumericError("combine", "moment covariance V is singular even after ridge 1e-6",
                       std::nullopt, "use fewer blocks or more subjects");
  }
  return f;
}

namespace {

Eigen::VectorXd solve_bracket(const Eigen::MatrixXd& bracket, const Eigen::VectorXd& rhs) {
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (!try_llt(bracket, llt)) {
    throw NumericError("combine", "combination bracket Rtilde^T S^T V^-1 S Rtilde + lambda Dtilde "
                                  "is singular", std::nullopt,
                       "use a larger lambda or fewer blocks");
  }
  return llt.solve(rhs);
}

}  // namespace

OneStepSystem::OneStepSystem(const StackedMoments& sm, const ConstraintMap& cmap,
                             std::span<const Eigen::VectorXd> block_estimates)
    : dtilde_(cmap.Dtilde) {
  const int J = sm.blocks();
  if (static_cast<int>(block_estimates.size()) != J) {
    throw ConfigError("combine", "one block estimate is required per block");
  }
  Eigen::VectorXd b(sm.gbar.size());
  for (int j = 0; j < J; ++j) {
    const auto& est = block_estimates[static_cast<std::size_t>(j)];
    const auto& sjj = sm.block_jacobians[static_cast<std::size_t>(j)];
    if (est.size() != sjj.rows()) throw ConfigError("combine", "block estimate has wrong size", j);
    b.segment(sm.offsets[static_cast<std::size_t>(j)], sjj.rows()).noalias() = sjj * est;
  }
  const SpdFactor vf = factor_moment_covariance(sm.V);
  const Eigen::MatrixXd a = sm.S * cmap.Rtilde;
  const Eigen::MatrixXd vinv_a = vf.solve(a);
  information_ = a.transpose() * vinv_a;
  symmetrize(information_);
  rhs_ = vinv_a.transpose() * b;
}

Eigen::VectorXd OneStepSystem::solve(double lambda) const {
  if (!(lambda >= 0.0)) throw ConfigError("combine", "lambda must be >= 0");
  return solve_bracket(information_ + lambda * dtilde_, rhs_);
}

Eigen::VectorXd scm_one_step(const StackedMoments& sm, const ConstraintMap& cmap, double lambda,
                             std::span<const Eigen::VectorXd> block_estimates) {
  return OneStepSystem(sm, cmap, block_estimates).solve(lambda);
}

StackedMoments reevaluate(const BlockEvaluator& eval, const ConstraintMap& cmap,
                          const Eigen::VectorXd& theta_star, int workers) {
  const Eigen::VectorXd theta = cmap.expand(theta_star);
  const int J = cmap.layout.blocks();
  std::vector<BlockMoments> moments(static_cast<std::size_t>(J));
  parallel_for(J, workers, [&](int j) {
    moments[static_cast<std::size_t>(j)] = eval(j, cmap.layout.extract_block(theta, j));
  });
  return stack(moments, cmap);
}

double gmm_objective(const StackedMoments& sm, const SpdFactor& weight, const ConstraintMap& cmap,
                     double lambda, const Eigen::VectorXd& theta_star) {
  return sm.gbar.dot(weight.solve(sm.gbar)) + lambda * theta_star.dot(cmap.Dtilde * theta_star);
}

GmmResult gmm_iterative(const BlockEvaluator& eval, const ConstraintMap& cmap,
                        const Eigen::MatrixXd& v_all, double lambda, const Eigen::VectorXd& init,
                        const GmmOptions& options) {
  const SpdFactor w = factor_moment_covariance(v_all);
  const Eigen::Index dim = cmap.reduced_dim();
  if (init.size() != dim) throw ConfigError("combine", "GMM initial value has wrong dimension");

  auto gbar_at = [&](const Eigen::VectorXd& ts) { return reevaluate(eval, cmap, ts).gbar; };
  auto value = [&](const Eigen::VectorXd& ts, const Eigen::VectorXd& g) {
    return g.dot(w.solve(g)) + lambda * ts.dot(cmap.Dtilde * ts);
  };

  GmmResult out;
  Eigen::VectorXd ts = init;
  Eigen::VectorXd g = gbar_at(ts);
  double f = value(ts, g);
  out.objective_trace.push_back(f);

  for (int iter = 0; iter < options.max_iter; ++iter) {
    Eigen::MatrixXd jac(g.size(), dim);
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double h = 1e-6 * (1.0 + std::abs(ts[c]));
      Eigen::VectorXd up = ts, dn = ts;
      up[c] += h;
      dn[c] -= h;
      jac.col(c) = (gbar_at(up) - gbar_at(dn)) / (2.0 * h);
    }
    const Eigen::MatrixXd wj = w.solve(jac);
    Eigen::MatrixXd hess = jac.transpose() * wj + lambda * cmap.Dtilde;
    symmetrize(hess);
    const Eigen::VectorXd grad = wj.transpose() * g + lambda * cmap.Dtilde * ts;
    Eigen::LDLT<Eigen::MatrixXd> hf(hess);
    const Eigen::VectorXd delta = -hf.solve(grad);
    if (!delta.allFinite()) break;

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd cand, gc;
    double fc = f;
    for (int h = 0; h < 30; ++h) {
      cand = ts + step * delta;
      try {
        gc = gbar_at(cand);
        fc = value(cand, gc);
        if (std::isfinite(fc) && fc <= f) {
          accepted = true;
          break;
        }
      } catch (const NumericError&) {
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No further decrease is representable.
      out.converged = delta.lpNorm<Eigen::Infinity>() < 1e-6 * (1.0 + ts.lpNorm<Eigen::Infinity>());
      break;
    }
    ts = cand;
    g = gc;
    f = fc;
    ++out.iterations;
    out.objective_trace.push_back(f);
    if ((step * delta).lpNorm<Eigen::Infinity>() < options.tol * (1.0 + ts.lpNorm<Eigen::Infinity>())) {
      out.converged = true;
      break;
    }
  }
  out.theta_star = ts;
  out.objective = f;
  if (!out.converged) log_warning("iterated GMM did not converge");
  return out;
}

double effective_df(const Eigen::MatrixXd& q, const Eigen::MatrixXd& dtilde, double lambda) {
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (!try_llt(q + lambda * dtilde, llt)) return std::numeric_limits<double>::quiet_NaN();
  return llt.solve(q).trace();
}

GcvEntry gcv_entry(const StackedMoments& sm, const ConstraintMap& cmap, double lambda) {
  GcvEntry e;
  e.lambda = lambda;
  const SpdFactor vf = factor_moment_covariance(sm.V);
  const Eigen::MatrixXd a = sm.S * cmap.Rtilde;
  Eigen::MatrixXd q = a.transpose() * vf.solve(a);
  symmetrize(q);
  e.numerator = sm.gbar.dot(vf.solve(sm.gbar));
  e.edf = effective_df(q, cmap.Dtilde, lambda);
  const double denom = 1.0 - e.edf / static_cast<double>(sm.subjects);
  e.valid = std::isfinite(e.edf) && std::isfinite(e.numerator) && denom > 0.0;
  e.gcv = e.valid ? e.numerator / (denom * denom) : std::numeric_limits<double>::infinity();
  return e;
}

GcvResult gcv(std::span<const double> grid, const OneStepSystem& system, const ConstraintMap& cmap,
              const BlockEvaluator& eval, Schema schema, int workers) {
  if (grid.empty()) throw ConfigError("combine", "lambda grid is empty");
  for (double l : grid)
    if (!(l >= 0.0)) throw ConfigError("combine", "lambda values must be >= 0");

  const int L = static_cast<int>(grid.size());
  struct Candidate {
    Eigen::VectorXd theta_star;
    StackedMoments sm;
    GcvEntry entry;
    bool ok = false;
  };
  std::vector<Candidate> cands(static_cast<std::size_t>(L));
  auto run = [&](int l, int inner_workers) {
    auto& c = cands[static_cast<std::size_t>(l)];
    const double lambda = grid[static_cast<std::size_t>(l)];
    c.entry.lambda = lambda;
    try {
      c.theta_star = system.solve(lambda);
      c.sm = reevaluate(eval, cmap, c.theta_star, inner_workers);
      c.entry = gcv_entry(c.sm, cmap, lambda);
      c.ok = c.entry.valid;
    } catch (const NumericError& e) {
      log_warning(std::string("lambda candidate excluded: ") + e.what());
      c.entry.valid = false;
      c.entry.gcv = std::numeric_limits<double>::infinity();
    }
  };
  if (schema == Schema::LambdaParallel) {
    parallel_for(L, workers, [&](int l) { run(l, 1); });
  } else {
    for (int l = 0; l < L; ++l) run(l, workers);
  }

  GcvResult out;
  for (int l = 0; l < L; ++l) {
    const auto& c = cands[static_cast<std::size_t>(l)];
    out.table.push_back(c.entry);
    if (!c.ok) continue;
    if (out.best < 0) {
      out.best = l;
      continue;
    }
    const auto& b = cands[static_cast<std::size_t>(out.best)].entry;
    if (c.entry.gcv < b.gcv || (c.entry.gcv == b.gcv && c.entry.lambda > b.lambda)) out.best = l;
  }
  if (out.best < 0) {
    throw NumericError("combine", "no valid lambda candidate (effective df >= N or singular system)",
                       std::nullopt, "use larger lambda values or fewer blocks");
  }
  auto& best = cands[static_cast<std::size_t>(out.best)];
  out.lambda = best.entry.lambda;
  out.theta_star = std::move(best.theta_star);
  out.at_best = std::move(best.sm);
  return out;
}

Eigen::MatrixXd covariance(const StackedMoments& sm, const ConstraintMap& cmap, double lambda) {
  const SpdFactor vf = factor_moment_covariance(sm.V);
  const Eigen::MatrixXd a = sm.S * cmap.Rtilde;
  Eigen::MatrixXd m = a.transpose() * vf.solve(a);
  symmetrize(m);
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (!try_llt(m + lambda * cmap.Dtilde, llt)) {
    throw NumericError("combine", "covariance bracket is singular", std::nullopt,
                       "use a larger lambda or fewer blocks");
  }
  const Eigen::MatrixXd binv_m = llt.solve(m);
  Eigen::MatrixXd cov = llt.solve(binv_m.transpose());
  cov /= static_cast<double>(sm.subjects);
  symmetrize(cov);
  return cov;
}

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

Eigen::RowVectorXd curve_selector(const ConstraintMap& cmap, int u, double t) {
  const int j = cmap.partition.locate(t);
  if (j < 0) {
    std::ostringstream os;
    os << "grid point " << t << " outside [" << cmap.partition.edges.front() << ", "
       << cmap.partition.edges.back() << "]";
    throw ConfigError("combine", os.str());
  }
  const auto& basis = cmap.layout.basis();
  const Eigen::VectorXd xi =
      basis_row(t, basis.degrees[static_cast<std::size_t>(u)], cmap.partition.lo(j),
                cmap.partition.hi(j), basis.scaled);
  Eigen::RowVectorXd sel = Eigen::RowVectorXd::Zero(cmap.reduced_dim());
  for (Eigen::Index d = 0; d < xi.size(); ++d) {
    sel += xi[d] * cmap.Rtilde.row(cmap.layout.gamma_index(j, u, static_cast<int>(d)));
  }
  return sel;
}

Eigen::RowVectorXd eta_selector(const ConstraintMap& cmap, int k) {
  return cmap.Rtilde.row(cmap.layout.eta_index(k));
}

std::vector<CurveBand> curve_and_bands(const Eigen::VectorXd& theta_star, const Eigen::MatrixXd& cov,
                                       const ConstraintMap& cmap, std::span<const double> grid,
                                       double alpha) {
  const double z = normal_quantile(1.0 - alpha / 2.0);
  std::vector<CurveBand> out(static_cast<std::size_t>(cmap.layout.q()));
  for (int u = 0; u < cmap.layout.q(); ++u) {
    auto& band = out[static_cast<std::size_t>(u)];
    band.covariate = u;
    band.points.reserve(grid.size());
    for (double t : grid) {
      const Eigen::RowVectorXd sel = curve_selector(cmap, u, t);
      BandPoint pt;
      pt.t = t;
      pt.estimate = sel.dot(theta_star);
      pt.se = std::sqrt(std::max(0.0, (sel * cov * sel.transpose())(0, 0)));
      pt.lower = pt.estimate - z * pt.se;
      pt.upper = pt.estimate + z * pt.se;
      band.points.push_back(pt);
    }
  }
  return out;
}

std::vector<ScalarEstimate> scalar_effects(const Eigen::VectorXd& theta_star,
                                           const Eigen::MatrixXd& cov, const ConstraintMap& cmap,
                                           double alpha) {
  const double z = normal_quantile(1.0 - alpha / 2.0);
  std::vector<ScalarEstimate> out;
  for (int k = 0; k < cmap.layout.p(); ++k) {
    const Eigen::RowVectorXd sel = eta_selector(cmap, k);
    ScalarEstimate e;
    e.label = "eta[" + std::to_string(k + 1) + "]";
    e.estimate = sel.dot(theta_star);
    e.se = std::sqrt(std::max(0.0, (sel * cov * sel.transpose())(0, 0)));
    e.lower = e.estimate - z * e.se;
    e.upper = e.estimate + z * e.se;
    out.push_back(e);
  }
  return out;
}

}  // namespace scm
