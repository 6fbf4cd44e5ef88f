#include <algorithm>
#include <random>

#include "doctest.h"
#include "scm/errors.hpp"
#include "scm/simulate.hpp"

using namespace scm;

namespace {

double corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Residual y - mean at time index k for every subject.
std::vector<double> residuals(const Scenario& sc, const LongData& d, int k) {
  std::vector<double> r;
  for (const auto& s : d.subjects) {
    double mean = s.x(k, 0) * true_beta(sc, s.t(k));
    for (int c = 0; c < sc.p(); ++c) mean += s.z(k, c) * sc.eta[static_cast<std::size_t>(c)];
    r.push_back(s.y(k) - mean);
  }
  return r;
}

}  // namespace

TEST_CASE("scenario presets") {
  const Scenario bs = broken_stick();
  CHECK(bs.n == 1000);
  CHECK(bs.m() == 31);
  CHECK(bs.times.front() == -15.0);
  CHECK(true_beta(bs, -7.0) == 7.0);

  const Scenario kc = known_cubic();
  CHECK(kc.m() == 100);
  CHECK(kc.eta[0] == 6.0);
  CHECK(kc.partition.edges == std::vector<double>{0, 20, 40, 60, 80, 99});

  const Scenario pc = poisson_copula();
  CHECK(pc.n == 300);
  CHECK(pc.m() == 144);
  CHECK(pc.times.back() == 4.522);
  CHECK(pc.partition.blocks() == 5);
  CHECK(true_beta(pc, 0.0) == doctest::Approx(0.28704));
  const Scenario full = poisson_copula(true);
  CHECK(full.n == 3000);
  CHECK(full.m() == 1440);
  CHECK(full.partition.blocks() == 15);
  CHECK(full.partition.edges[1] == doctest::Approx(0.301).epsilon(0.002));

  CHECK(parse_scenario("known-cubic") == ScenarioKind::KnownCubic);
  CHECK_THROWS_AS(parse_scenario("weekly"), ConfigError);
}

TEST_CASE("true coefficients satisfy the constraints") {
  for (const Scenario& sc : {broken_stick(), known_cubic(), poisson_copula()}) {
    const ConstraintMap cmap = build_constraint_map(sc.partition, sc.fit.basis, sc.fit.smoothness, sc.p());
    const Eigen::VectorXd theta = true_theta(sc, cmap);
    const Eigen::VectorXd star = true_theta_star(sc, cmap);
    CHECK((cmap.expand(star) - theta).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, theta.cwiseAbs().maxCoeff()));
    // the per-block polynomial reproduces beta exactly
    for (double t : sc.times) {
      const int j = sc.partition.locate(t);
      const Eigen::VectorXd row = basis_row(t, sc.fit.basis.degrees[0], sc.partition.lo(j),
                                            sc.partition.hi(j), sc.fit.basis.scaled);
      double v = 0.0;
      for (Eigen::Index e = 0; e < row.size(); ++e) v += row(e) * theta(cmap.layout.gamma_index(j, 0, static_cast<int>(e)));
      CHECK(v == doctest::Approx(true_beta(sc, t)).epsilon(1e-9));
    }
  }
  const Scenario bs = broken_stick();
  const ConstraintMap cmap = build_constraint_map(bs.partition, bs.fit.basis, bs.fit.smoothness, 0);
  const Eigen::VectorXd star = true_theta_star(bs, cmap);
  CHECK(star(0) == doctest::Approx(15.0));
  CHECK(star(1) == doctest::Approx(-15.0));
  CHECK(star(2) == doctest::Approx(15.0));
}

TEST_CASE("seeding is counter based and reproducible") {
  CHECK(replicate_seed(7, 3) == replicate_seed(7, 3));
  CHECK(replicate_seed(7, 3) != replicate_seed(7, 4));
  CHECK(replicate_seed(7, 3) != replicate_seed(8, 3));
  Scenario sc = known_cubic(20);
  const LongData a = generate(sc, replicate_seed(1, 5));
  const LongData b = generate(sc, replicate_seed(1, 5));
  const LongData c = generate(sc, replicate_seed(1, 6));
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    CHECK(a.subjects[i].y == b.subjects[i].y);
    CHECK(a.subjects[i].x == b.subjects[i].x);
  }
  CHECK(a.subjects[0].y != c.subjects[0].y);
}

TEST_CASE("Gaussian generator moments") {
  SUBCASE("exchangeable correlation 0.7") {
    const Scenario sc = broken_stick(1000);
    const LongData d = gen_gaussian(sc, 11);
    double avg = 0.0;
    int pairs = 0;
    for (int a = 0; a < 31; a += 6) {
      for (int b = a + 3; b < 31; b += 7) {
        avg += corr(residuals(sc, d, a), residuals(sc, d, b));
        ++pairs;
      }
    }
    CHECK(avg / pairs == doctest::Approx(0.7).epsilon(0.05 / 0.7));
    // marginal variance sigma^2 = 10
    const auto r = residuals(sc, d, 10);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    CHECK(ss / r.size() == doctest::Approx(10.0).epsilon(0.15));
  }
  SUBCASE("AR1 lag-2 correlation is rho squared") {
    const Scenario sc = known_cubic(1000);
    const LongData d = gen_gaussian(sc, 12);
    CHECK(corr(residuals(sc, d, 30), residuals(sc, d, 32)) == doctest::Approx(0.64).epsilon(0.05 / 0.64));
    CHECK(corr(residuals(sc, d, 50), residuals(sc, d, 51)) == doctest::Approx(0.8).epsilon(0.05 / 0.8));
  }
  SUBCASE("zero variance gives the mean exactly") {
    Scenario sc = known_cubic(5);
    sc.sigma2 = 0.0;
    const LongData d = gen_gaussian(sc, 1);
    for (int k = 0; k < sc.m(); k += 9) {
      for (double r : residuals(sc, d, k)) CHECK(r == 0.0);
    }
  }
  CHECK_THROWS_AS(gen_gaussian(poisson_copula(), 1), ConfigError);
}

TEST_CASE("Poisson copula generator") {
  const Scenario sc = poisson_copula();
  Scenario big = sc;
  big.n = 1000;
  const LongData d = gen_poisson_copula(big, 4);
  // standardized residuals have mean zero and unit variance
  double sum = 0.0, ss = 0.0;
  long count = 0;
  for (const auto& s : d.subjects) {
    for (Eigen::Index k = 0; k < s.t.size(); k += 11) {
      const double mu = std::exp(s.x(k, 0) * true_beta(sc, s.t(k)) + s.z(k, 0) * sc.eta[0]);
      const double z = (s.y(k) - mu) / std::sqrt(mu);
      CHECK(s.y(k) == std::floor(s.y(k)));
      CHECK(s.y(k) >= 0.0);
      sum += z;
      ss += z * z;
      ++count;
    }
  }
  const double mean = sum / count;
  CHECK(std::abs(mean) < 3.0 * std::sqrt(ss / count) / std::sqrt(static_cast<double>(count)) * 3.0);
  CHECK(ss / count == doctest::Approx(1.0).epsilon(0.1));

  Scenario indep = big;
  indep.rho = 0.0;
  const LongData di = gen_poisson_copula(indep, 5);
  std::vector<double> a, b;
  for (const auto& s : di.subjects) {
    const double m1 = std::exp(s.x(40, 0) * true_beta(sc, s.t(40)) + s.z(40, 0) * sc.eta[0]);
    const double m2 = std::exp(s.x(41, 0) * true_beta(sc, s.t(41)) + s.z(41, 0) * sc.eta[0]);
    a.push_back((s.y(40) - m1) / std::sqrt(m1));
    b.push_back((s.y(41) - m2) / std::sqrt(m2));
  }
  CHECK(std::abs(corr(a, b)) < 0.1);
  CHECK_THROWS_AS(gen_poisson_copula(broken_stick(), 1), ConfigError);
}

TEST_CASE("Monte Carlo summaries") {
  Scenario sc = broken_stick(200);
  sc.seed = 9;
  McOptions one;
  one.reps = 1;
  const McReport r1 = run_mc(sc, sc.fit, one);
  REQUIRE(r1.parameters.size() == 3);
  for (const auto& p : r1.parameters) {
    CHECK_FALSE(p.ese.has_value());
    CHECK(p.bias == doctest::Approx(p.mean - p.truth));
  }

  McOptions four;
  four.reps = 6;
  four.workers = 3;
  const McReport a = run_mc(sc, sc.fit, four);
  four.workers = 1;
  const McReport b = run_mc(sc, sc.fit, four);
  for (std::size_t k = 0; k < a.parameters.size(); ++k) {
    CHECK(a.parameters[k].mean == b.parameters[k].mean);
    CHECK(a.parameters[k].ese == b.parameters[k].ese);
    CHECK(a.parameters[k].cp == b.parameters[k].cp);
  }
  CHECK(a.beta_cp == b.beta_cp);

  // aggregation ignores the order results arrive in
  const ConstraintMap cmap = build_constraint_map(sc.partition, sc.fit.basis, sc.fit.smoothness, 0);
  std::vector<ReplicateResult> res;
  for (int r = 0; r < 5; ++r) res.push_back(run_replicate(sc, sc.fit, r, {}));
  const McReport fwd = summarize(sc, cmap, res);
  std::reverse(res.begin(), res.end());
  const McReport rev = summarize(sc, cmap, res);
  for (std::size_t k = 0; k < fwd.parameters.size(); ++k) {
    CHECK(fwd.parameters[k].mean == rev.parameters[k].mean);
    CHECK(fwd.parameters[k].ese == rev.parameters[k].ese);
  }

  const std::string table = format_table(a);
  CHECK(table.find("Bias x1e-2") != std::string::npos);
  CHECK(table.find("gamma[u=1,j=2,d=1]") != std::string::npos);
}

TEST_CASE("too many failed replicates fail the run") {
  Scenario sc = broken_stick(200);
  PipelineConfig bad = sc.fit;
  bad.fit.max_iter = 1;
  bad.fit.tol = 1e-300;
  bad.correlation = CorrelationKind::AR1;
  set_warnings_enabled(false);
  McOptions o;
  o.reps = 3;
  CHECK_THROWS_AS(run_mc(sc, bad, o), NumericError);
  set_warnings_enabled(true);
}
