#include "doctest.h"
#include "helpers.hpp"
#include "scm/errors.hpp"
#include "scm/qif.hpp"

using namespace scm;

namespace {

BlockModel linear_model(const BlockData& b, int degree, LinkKind link = LinkKind::Identity) {
  BlockModel m;
  m.block = b.index;
  m.lo = b.lo;
  m.hi = b.hi;
  m.basis = BasisSpec{std::vector<int>(static_cast<std::size_t>(b.q), degree), true};
  m.link.kind = link;
  m.p = b.p;
  return m;
}

BlockData single_block(const LongData& d) {
  const Partition part = make_partition(std::vector<double>{d.min_time(), d.max_time()});
  return split(d, part).front();
}

// Counts y ~ Poisson(exp(0.3 + 0.2 s)) with shared subject noise.
LongData count_data(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  LongData d;
  d.q = 1;
  d.p = 1;
  for (int i = 0; i < n; ++i) {
    SubjectSeries s;
    s.id = i;
    const int m = 6;
    s.t = Eigen::VectorXd::LinSpaced(m, 0.0, 5.0);
    s.x = Eigen::MatrixXd::Ones(m, 1);
    s.z.resize(m, 1);
    s.y.resize(m);
    const double b = 0.3 * normal(rng);
    for (int k = 0; k < m; ++k) {
      s.z(k, 0) = (i + k) % 2;
      const double mu = std::exp(0.3 + 0.2 * s.t(k) / 5.0 + 0.4 * s.z(k, 0) + b);
      std::poisson_distribution<int> pois(mu);
      s.y(k) = pois(rng);
    }
    d.subjects.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("working correlation basis matrices") {
  const WorkingCorrelation ar1{CorrelationKind::AR1};
  Eigen::MatrixXd want(3, 3);
  want << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  CHECK(ar1.basis_matrix(1, 3) == want);
  CHECK(ar1.basis_matrix(0, 3) == Eigen::MatrixXd::Identity(3, 3));

  const WorkingCorrelation ex{CorrelationKind::Exchangeable};
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);
  ones.diagonal().setZero();
  CHECK(ex.basis_matrix(1, 4) == ones);
  CHECK(WorkingCorrelation{CorrelationKind::Independence}.basis_count() == 1);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd in(6, 3);
  for (Eigen::Index k = 0; k < in.size(); ++k) in.data()[k] = normal(rng);
  for (const auto& wc : {ar1, ex}) {
    for (int w = 0; w < 2; ++w) {
      CHECK((wc.apply(w, in) - wc.basis_matrix(w, 6) * in).norm() < 1e-13);
    }
  }
  CHECK(parse_correlation("exchangeable") == CorrelationKind::Exchangeable);
  CHECK_THROWS_AS(parse_correlation("toeplitz"), ConfigError);
}

TEST_CASE("extended score definitions") {
  const LongData d = testutil::linear_data(40, 0, 9, 2, 1, 8);
  const BlockData b = single_block(d);
  const BlockModel m = linear_model(b, 2);
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(m.dim(), 0.3);

  const BlockMoments mo = extended_score(theta, b, WorkingCorrelation{CorrelationKind::AR1}, m, 1.7);
  CHECK(mo.scores.rows() == 40);
  CHECK(mo.scores.cols() == 2 * m.dim());
  // gbar is the subject mean and C the uncentered second moment
  CHECK((mo.scores.colwise().mean().transpose() - mo.gbar).norm() < 1e-12);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(mo.weight.rows(), mo.weight.cols());
  for (Eigen::Index i = 0; i < mo.scores.rows(); ++i) {
    c += mo.scores.row(i).transpose() * mo.scores.row(i);
  }
  CHECK((c / 40.0 - mo.weight).norm() < 1e-12 * std::max(1.0, c.norm()));

  SUBCASE("independence reduces to the least-squares score") {
    const BlockMoments ind = extended_score(theta, b, WorkingCorrelation{}, m, 1.0);
    Eigen::VectorXd ls = Eigen::VectorXd::Zero(m.dim());
    for (const auto& s : b.subjects) {
      const Eigen::MatrixXd x = block_design(s.x, s.z, s.t, m);
      ls += x.transpose() * (s.y - x * theta);
    }
    ls /= 40.0;
    CHECK((ind.gbar - ls).norm() < 1e-12);
  }

  SUBCASE("Jacobian of gbar matches central differences (identity link)") {
    const WorkingCorrelation corr{CorrelationKind::Exchangeable};
    const auto g = [&](const Eigen::VectorXd& th) { return extended_score(th, b, corr, m, 2.0).gbar; };
    const BlockMoments e = extended_score(theta, b, corr, m, 2.0);
    CHECK(testutil::rel_err(e.jacobian, testutil::fd_jacobian(g, theta)) < 1e-5);
  }
}

TEST_CASE("QIF gradient matches central differences with C held fixed") {
  const LongData d = testutil::linear_data(60, 0, 7, 1, 1, 21);
  const BlockData b = single_block(d);
  const BlockModel m = linear_model(b, 2);
  const WorkingCorrelation corr{CorrelationKind::AR1};
  Eigen::VectorXd theta(m.dim());
  theta << 0.8, 0.2, -0.1, 1.5;
  const QifValue q = qif_objective(theta, b, corr, m);
  CHECK(q.value >= 0.0);

  Eigen::MatrixXd c = q.weight;
  c.diagonal().array() += default_weight_ridge(q.weight);
  const Eigen::LDLT<Eigen::MatrixXd> cf(c);
  const auto fixed_c = [&](const Eigen::VectorXd& th) {
    const Eigen::VectorXd g = extended_score(th, b, corr, m).gbar;
    return Eigen::VectorXd::Constant(1, 60.0 * g.dot(cf.solve(g)));
  };
  const Eigen::MatrixXd fd = testutil::fd_jacobian(fixed_c, theta, 1e-5);
  CHECK(testutil::rel_err(q.gradient.transpose(), fd) < 1e-5);
}

TEST_CASE("QIF value is zero at gbar = 0 and nonnegative") {
  const LongData d = testutil::linear_data(30, 0, 5, 1, 0, 4);
  const BlockData b = single_block(d);
  const BlockModel m = linear_model(b, 1);
  // With independence and one basis matrix, the OLS solution zeroes gbar.
  const BlockFit f = fit_block(b, WorkingCorrelation{}, m);
  const QifValue q = qif_objective(f.theta, b, WorkingCorrelation{}, m);
  CHECK(q.value < 1e-12);
}

TEST_CASE("independence and identity link give the normal-equation solution") {
  const LongData d = testutil::linear_data(80, 0, 30, 2, 2, 99, 3.0);
  const BlockData b = single_block(d);
  const BlockModel m = linear_model(b, 3);
  const BlockFit f = fit_block(b, WorkingCorrelation{}, m);
  REQUIRE(f.converged);

  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(m.dim(), m.dim());
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(m.dim());
  for (const auto& s : b.subjects) {
    const Eigen::MatrixXd x = block_design(s.x, s.z, s.t, m);
    xtx += x.transpose() * x;
    xty += x.transpose() * s.y;
  }
  const Eigen::VectorXd ols = xtx.ldlt().solve(xty);
  CHECK((f.theta - ols).norm() / ols.norm() < 1e-8);
}

TEST_CASE("block fit behaviour") {
  const LongData d = testutil::linear_data(300, 0, 19, 1, 1, 5, 2.0);
  const BlockData b = single_block(d);
  const BlockModel m = linear_model(b, 1);
  const WorkingCorrelation corr{CorrelationKind::AR1};

  const BlockFit f1 = fit_block(b, corr, m);
  const BlockFit f2 = fit_block(b, corr, m);
  CHECK(f1.converged);
  CHECK(f1.theta == f2.theta);  // bitwise
  CHECK(f1.objective == f2.objective);
  for (const auto& h : f1.history) CHECK(h.objective_after <= h.objective_before * (1 + 1e-12));

  // near the truth: scaled basis on [0, 19] gives b0 + b1 t = 1 + 9.5 s
  CHECK(f1.theta(0) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(f1.theta(1) == doctest::Approx(9.5).epsilon(0.05));
  CHECK(f1.theta(2) == doctest::Approx(2.0).epsilon(0.1));

  // gradient at the solution is small relative to its scale at the start
  const QifValue at = qif_objective(f1.theta, b, corr, m);
  CHECK(at.gradient.norm() < 1e-6);

  FitOptions from_truth;
  from_truth.init = Eigen::Vector3d(1.0, 9.5, 2.0);
  const BlockFit ft = fit_block(b, corr, m, from_truth);
  CHECK(ft.converged);
  CHECK(ft.iterations <= 4);
  CHECK((ft.theta - f1.theta).norm() < 1e-6);
}

TEST_CASE("log link fits converge") {
  const LongData d = count_data(400, 17);
  const BlockData b = single_block(d);
  const BlockModel m = linear_model(b, 1, LinkKind::Log);
  const BlockFit f = fit_block(b, WorkingCorrelation{CorrelationKind::Exchangeable}, m);
  CHECK(f.converged);
  CHECK(f.theta(1) == doctest::Approx(0.2).epsilon(0.5));
  CHECK(f.theta(2) == doctest::Approx(0.4).epsilon(0.25));

  // the residual-only Jacobian is the exact derivative's leading term; at
  // the fitted value it stays close to central differences
  const auto g = [&](const Eigen::VectorXd& th) {
    return extended_score(th, b, WorkingCorrelation{CorrelationKind::Exchangeable}, m).gbar;
  };
  const Eigen::MatrixXd fd = testutil::fd_jacobian(g, f.theta);
  CHECK(testutil::rel_err(f.moments.jacobian, fd) < 0.2);
}

TEST_CASE("too few subjects for the block dimension") {
  const LongData d = testutil::linear_data(3, 0, 9, 1, 1, 2);
  const BlockData b = single_block(d);
  CHECK_THROWS_AS(fit_block(b, WorkingCorrelation{}, linear_model(b, 3)), ConfigError);
}
