#include "scm/simulate.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "scm/errors.hpp"
#include "scm/parallel.hpp"

namespace scm {

namespace {

std::vector<double> decade_grid(int lo, int hi) {
  std::vector<double> g;
  for (int e = lo; e <= hi; ++e) g.push_back(std::pow(10.0, e));
  return g;
}

std::vector<double> integer_grid(int lo, int hi) {
  std::vector<double> t;
  for (int v = lo; v <= hi; ++v) t.push_back(v);
  return t;
}

double pos(double v) { return v > 0.0 ? v : 0.0; }

double cubic_truth(double t) {
  const double s = t / 20.0;
  const double a = pos((t - 20.0) / 20.0), b = pos((t - 40.0) / 20.0);
  const double c = pos((t - 60.0) / 20.0), d = pos((t - 80.0) / 20.0);
  return 1.0 + 2.0 * s - 3.0 * s * s + 4.0 * s * s * s + 5.0 * a * a - 2.0 * a * a * a -
         3.0 * b * b - 10.0 * b * b * b + 15.0 * c * c + 20.0 * c * c * c - 10.0 * d * d +
         5.0 * d * d * d;
}

double poisson_truth(double t) {
  const double pi = std::numbers::pi;
  return 0.156 * (t * (t - pi) * (t - 1438.0 * pi / 999.0) + 1.84);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Clock = std::chrono::steady_clock;

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::BrokenStick: return "broken-stick";
    case ScenarioKind::KnownCubic: return "known-cubic";
    case ScenarioKind::PoissonCopula: return "poisson-copula";
  }
  return "unknown";
}

std::vector<std::string> scenario_names() { return {"broken-stick", "known-cubic", "poisson-copula"}; }

ScenarioKind parse_scenario(const std::string& name) {
  for (auto k : {ScenarioKind::BrokenStick, ScenarioKind::KnownCubic, ScenarioKind::PoissonCopula}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("simulate", "unknown scenario '" + name + "'", std::nullopt,
                    "choose one of broken-stick, known-cubic, poisson-copula");
}

Scenario broken_stick(int n) {
  Scenario sc;
  sc.kind = ScenarioKind::BrokenStick;
  sc.n = n;
  sc.times = integer_grid(-15, 15);
  sc.error_correlation = CorrelationKind::Exchangeable;
  sc.rho = 0.7;
  sc.sigma2 = 10.0;
  sc.partition = make_partition(std::vector<double>{-15.0, 0.0, 15.0});
  sc.fit.basis = BasisSpec{{1}, true};
  sc.fit.correlation = CorrelationKind::Exchangeable;
  sc.fit.smoothness = Smoothness::C0;
  sc.fit.lambda_grid = {0.0};
  return sc;
}

Scenario known_cubic(int n) {
  Scenario sc;
  sc.kind = ScenarioKind::KnownCubic;
  sc.n = n;
  sc.times = integer_grid(0, 99);
  sc.error_correlation = CorrelationKind::AR1;
  sc.rho = 0.8;
  sc.sigma2 = 100.0;
  sc.eta = {6.0};
  sc.partition = make_partition(std::vector<double>{0.0, 20.0, 40.0, 60.0, 80.0, 99.0});
  sc.fit.basis = BasisSpec{{3}, true};
  sc.fit.correlation = CorrelationKind::AR1;
  sc.fit.smoothness = Smoothness::C1;
  sc.fit.lambda_grid = decade_grid(-5, -1);
  return sc;
}

Scenario poisson_copula(bool full_scale) {
  Scenario sc;
  sc.kind = ScenarioKind::PoissonCopula;
  const int m = full_scale ? 1440 : 144;
  const double end = 4.522;
  sc.n = full_scale ? 3000 : 300;
  // Equally spaced over [0, 4.522] at both scales; the full-scale step is
  // close to, but not exactly, 0.003 because 1440 points cannot hit both ends.
  sc.times.resize(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) sc.times[static_cast<std::size_t>(k)] = end * k / (m - 1);
  sc.times.back() = end;
  sc.error_correlation = CorrelationKind::AR1;
  sc.rho = 0.8;
  sc.sigma2 = 1.0;
  sc.eta = {0.5};
  sc.partition = uniform_partition(0.0, end, full_scale ? 15 : 5);
  sc.fit.basis = BasisSpec{{3}, true};
  sc.fit.link = LinkKind::Log;
  sc.fit.correlation = CorrelationKind::AR1;
  sc.fit.smoothness = Smoothness::C1;
  sc.fit.lambda_grid = decade_grid(-5, -1);
  return sc;
}

Scenario make_scenario(ScenarioKind kind, bool full_scale) {
  switch (kind) {
    case ScenarioKind::BrokenStick: return broken_stick();
    case ScenarioKind::KnownCubic: return known_cubic();
    case ScenarioKind::PoissonCopula: return poisson_copula(full_scale);
  }
  throw ConfigError("simulate", "unknown scenario");
}

double true_beta(const Scenario& sc, double t) {
  switch (sc.kind) {
    case ScenarioKind::BrokenStick: return std::abs(t);
    case ScenarioKind::KnownCubic: return cubic_truth(t);
    case ScenarioKind::PoissonCopula: return poisson_truth(t);
  }
  return 0.0;
}

Eigen::VectorXd true_theta(const Scenario& sc, const ConstraintMap& cmap) {
  const auto& layout = cmap.layout;
  const auto& part = cmap.partition;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.full_dim());
  for (int j = 0; j < part.blocks(); ++j) {
    for (int u = 0; u < layout.q(); ++u) {
      const int d = layout.basis().degrees[static_cast<std::size_t>(u)];
      const int pts = 4 * (d + 1) + 8;
      Eigen::MatrixXd b(pts, d + 1);
      Eigen::VectorXd y(pts);
      for (int k = 0; k < pts; ++k) {
        const double t = part.lo(j) + part.width(j) * (k + 0.5) / pts;
        b.row(k) = basis_row(t, d, part.lo(j), part.hi(j), layout.basis().scaled).transpose();
        y(k) = true_beta(sc, t);
      }
      const Eigen::VectorXd coef = b.colPivHouseholderQr().solve(y);
      for (int e = 0; e <= d; ++e) theta(layout.gamma_index(j, u, e)) = coef(e);
    }
  }
  for (int k = 0; k < layout.p(); ++k) theta(layout.eta_index(k)) = sc.eta[static_cast<std::size_t>(k)];
  return theta;
}

Eigen::VectorXd true_theta_star(const Scenario& sc, const ConstraintMap& cmap) {
  const Eigen::VectorXd theta = true_theta(sc, cmap);
  Eigen::VectorXd star(cmap.reduced_dim());
  for (int k = 0; k < cmap.reduced_dim(); ++k) star(k) = theta(cmap.kept[static_cast<std::size_t>(k)]);
  return star;
}

std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t rep) {
  return splitmix64(splitmix64(seed) ^ splitmix64(rep + 0x632be59bd9b4e019ULL));
}

Eigen::MatrixXd error_correlation(CorrelationKind kind, double rho, int m) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      if (a == b) continue;
      if (kind == CorrelationKind::AR1) r(a, b) = std::pow(rho, std::abs(a - b));
      if (kind == CorrelationKind::Exchangeable) r(a, b) = rho;
    }
  }
  return r;
}

namespace {

struct Draws {
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;
  Eigen::VectorXd e;  // correlated standard-normal errors
};

Draws draw_subject(const Scenario& sc, const Eigen::MatrixXd& chol, std::mt19937_64& rng) {
  const int m = sc.m();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.5, 5.0);
  std::bernoulli_distribution coin(0.5);
  Draws d;
  d.x = Eigen::MatrixXd::Ones(m, 1);
  d.z = Eigen::MatrixXd::Zero(m, sc.p());
  if (sc.kind == ScenarioKind::KnownCubic) {
    for (int k = 0; k < m; ++k) d.x(k, 0) = normal(rng);
  } else if (sc.kind == ScenarioKind::PoissonCopula) {
    for (int k = 0; k < m; ++k) d.x(k, 0) = uniform(rng);
  }
  for (int c = 0; c < sc.p(); ++c) {
    for (int k = 0; k < m; ++k) d.z(k, c) = coin(rng) ? 1.0 : 0.0;
  }
  Eigen::VectorXd eps(m);
  for (int k = 0; k < m; ++k) eps(k) = normal(rng);
  d.e = chol * eps;
  return d;
}

Eigen::VectorXd linear_predictor(const Scenario& sc, const Draws& d) {
  Eigen::VectorXd lp(sc.m());
  for (int k = 0; k < sc.m(); ++k) {
    lp(k) = d.x(k, 0) * true_beta(sc, sc.times[static_cast<std::size_t>(k)]);
    for (int c = 0; c < sc.p(); ++c) lp(k) += d.z(k, c) * sc.eta[static_cast<std::size_t>(c)];
  }
  return lp;
}

Eigen::MatrixXd lower_factor(const Scenario& sc) {
  const Eigen::MatrixXd r = error_correlation(sc.error_correlation, sc.rho, sc.m());
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) {
    throw ConfigError("simulate", "error correlation matrix is not positive definite");
  }
  return llt.matrixL();
}

LongData empty_data(const Scenario& sc) {
  LongData data;
  data.q = sc.q();
  data.p = sc.p();
  data.subjects.resize(static_cast<std::size_t>(sc.n));
  return data;
}

}  // namespace

LongData gen_gaussian(const Scenario& sc, std::uint64_t rep_seed) {
  if (sc.kind == ScenarioKind::PoissonCopula) {
    throw ConfigError("simulate", "gen_gaussian needs a Gaussian scenario");
  }
  const Eigen::MatrixXd chol = lower_factor(sc);
  const double sigma = std::sqrt(sc.sigma2);
  std::mt19937_64 rng(rep_seed);
  LongData data = empty_data(sc);
  const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(sc.times.data(), sc.m());
  for (int i = 0; i < sc.n; ++i) {
    Draws d = draw_subject(sc, chol, rng);
    auto& s = data.subjects[static_cast<std::size_t>(i)];
    s.id = i + 1;
    s.t = t;
    s.y = linear_predictor(sc, d) + sigma * d.e;
    s.x = std::move(d.x);
    s.z = std::move(d.z);
  }
  return data;
}

LongData gen_poisson_copula(const Scenario& sc, std::uint64_t rep_seed) {
  if (sc.kind != ScenarioKind::PoissonCopula) {
    throw ConfigError("simulate", "gen_poisson_copula needs the poisson-copula scenario");
  }
  namespace bm = boost::math;
  using Policy = bm::policies::policy<bm::policies::discrete_quantile<bm::policies::integer_round_up>>;
  const Eigen::MatrixXd chol = lower_factor(sc);
  const double sigma = std::sqrt(sc.sigma2);
  const bm::normal_distribution<double> stdnorm;
  std::mt19937_64 rng(rep_seed);
  LongData data = empty_data(sc);
  const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(sc.times.data(), sc.m());
  for (int i = 0; i < sc.n; ++i) {
    Draws d = draw_subject(sc, chol, rng);
    const Eigen::VectorXd lp = linear_predictor(sc, d);
    auto& s = data.subjects[static_cast<std::size_t>(i)];
    s.id = i + 1;
    s.t = t;
    s.y.resize(sc.m());
    for (int k = 0; k < sc.m(); ++k) {
      if (!(lp(k) <= 700.0)) {
        throw ConfigError("simulate", "Poisson mean overflows", std::nullopt,
                          "reduce the covariate range or the coefficient scale");
      }
      const bm::poisson_distribution<double, Policy> pois(std::exp(lp(k)));
      // Work in the smaller tail so that quantiles near 1 keep their precision.
      const double e = std::clamp(sigma * d.e(k), -37.0, 37.0);
      s.y(k) = e <= 0.0 ? bm::quantile(pois, bm::cdf(stdnorm, e))
                        : bm::quantile(bm::complement(pois, bm::cdf(stdnorm, -e)));
    }
    s.x = std::move(d.x);
    s.z = std::move(d.z);
  }
  return data;
}

LongData generate(const Scenario& sc, std::uint64_t rep_seed) {
  return sc.kind == ScenarioKind::PoissonCopula ? gen_poisson_copula(sc, rep_seed)
                                                : gen_gaussian(sc, rep_seed);
}

ReplicateResult run_replicate(const Scenario& sc, const PipelineConfig& config, int rep,
                              const std::vector<Schema>& timed_schemas) {
  ReplicateResult out;
  out.rep = rep;
  try {
    const LongData data = generate(sc, replicate_seed(sc.seed, static_cast<std::uint64_t>(rep)));
    std::vector<Schema> schemas = timed_schemas;
    if (schemas.empty()) schemas.push_back(config.schema);
    std::optional<PipelineResult> fit;
    for (Schema s : schemas) {
      PipelineConfig cfg = config;
      cfg.schema = s;
      const auto start = Clock::now();
      PipelineResult r = run_pipeline(data, sc.partition, cfg, sc.times);
      out.seconds[static_cast<int>(s)] = std::chrono::duration<double>(Clock::now() - start).count();
      if (!fit) fit = std::move(r);
    }
    const CombinedFit& c = fit->combined;
    const Eigen::VectorXd truth = true_theta_star(sc, fit->cmap);
    const double z = normal_quantile(1.0 - c.alpha / 2.0);
    out.estimate = c.theta_star;
    out.se = c.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    if (!is_finite(out.estimate) || !is_finite(out.se)) {
      throw NumericError("simulate", "non-finite estimate or standard error");
    }
    for (Eigen::Index k = 0; k < truth.size(); ++k) {
      out.covered.push_back(std::abs(out.estimate(k) - truth(k)) <= z * out.se(k));
    }
    for (const auto& pt : c.curves.front().points) {
      const double b = true_beta(sc, pt.t);
      out.beta_covered.push_back(pt.lower <= b && b <= pt.upper);
    }
    out.lambda = c.lambda;
    out.ok = true;
  } catch (const Error& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

std::vector<const ParameterSummary*> McReport::select(const std::string& prefix) const {
  std::vector<const ParameterSummary*> out;
  for (const auto& p : parameters) {
    if (p.label.rfind(prefix, 0) == 0) out.push_back(&p);
  }
  return out;
}

McReport summarize(const Scenario& sc, const ConstraintMap& cmap,
                   const std::vector<ReplicateResult>& results) {
  McReport rep;
  rep.scenario = to_string(sc.kind);
  rep.n = sc.n;
  rep.m = sc.m();
  rep.reps = static_cast<int>(results.size());
  rep.seed = sc.seed;
  rep.times = sc.times;

  // Sums run in replicate order whatever order the results arrive in.
  std::vector<const ReplicateResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->rep < b->rep; });
  std::vector<const ReplicateResult*> good;
  for (const auto* rp : sorted) {
    const auto& r = *rp;
    if (r.ok) {
      good.push_back(&r);
    } else {
      ++rep.failures;
      rep.failure_messages.push_back("replicate " + std::to_string(r.rep) + ": " + r.error);
    }
  }
  const Eigen::VectorXd truth = true_theta_star(sc, cmap);
  const auto labels = cmap.reduced_labels();
  const double count = static_cast<double>(good.size());
  for (Eigen::Index k = 0; k < truth.size(); ++k) {
    ParameterSummary s;
    s.label = labels[static_cast<std::size_t>(k)];
    s.truth = truth(k);
    if (good.empty()) {
      rep.parameters.push_back(s);
      continue;
    }
    double sum = 0.0, se_sum = 0.0, hits = 0.0;
    for (const auto* r : good) {
      sum += r->estimate(k);
      se_sum += r->se(k);
      hits += r->covered[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
    }
    s.mean = sum / count;
    s.bias = s.mean - s.truth;
    s.ase = se_sum / count;
    s.rase = s.ase / s.mean;
    s.cp = hits / count;
    if (good.size() > 1) {
      double ss = 0.0;
      for (const auto* r : good) ss += (r->estimate(k) - s.mean) * (r->estimate(k) - s.mean);
      s.ese = std::sqrt(ss / (count - 1.0));
    }
    rep.parameters.push_back(s);
  }

  rep.beta_cp.assign(sc.times.size(), 0.0);
  for (const auto* r : good) {
    for (std::size_t i = 0; i < rep.beta_cp.size(); ++i) rep.beta_cp[i] += r->beta_covered[i] ? 1.0 : 0.0;
  }
  if (!good.empty()) {
    double total = 0.0;
    for (double& v : rep.beta_cp) {
      v /= count;
      total += v;
    }
    rep.beta_cp_mean = total / static_cast<double>(rep.beta_cp.size());
  }

  std::map<int, std::vector<double>> secs;
  for (const auto* r : good) {
    for (const auto& [schema, s] : r->seconds) secs[schema].push_back(s);
  }
  for (const auto& [schema, v] : secs) {
    TimingSummary t;
    double sum = 0.0;
    for (double s : v) sum += s;
    t.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double s : v) ss += (s - t.mean) * (s - t.mean);
      t.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    rep.timing[schema] = t;
  }
  return rep;
}

McReport run_mc(const Scenario& sc, const PipelineConfig& config, const McOptions& options) {
  if (options.reps < 1) throw ConfigError("simulate", "reps must be at least 1");
  const ConstraintMap cmap =
      build_constraint_map(sc.partition, config.basis, config.smoothness, sc.p());
  std::vector<ReplicateResult> results(static_cast<std::size_t>(options.reps));
  parallel_for(options.reps, options.workers, [&](int r) {
    results[static_cast<std::size_t>(r)] = run_replicate(sc, config, r, options.timed_schemas);
  });
  McReport report = summarize(sc, cmap, results);
  if (report.failures > options.max_failure_rate * options.reps) {
    std::string msg = std::to_string(report.failures) + " of " + std::to_string(options.reps) +
                      " replicates failed";
    if (!report.failure_messages.empty()) msg += "; first: " + report.failure_messages.front();
    throw NumericError("simulate", msg);
  }
  return report;
}

std::string format_table(const McReport& report) {
  std::ostringstream os;
  os << "scenario " << report.scenario << ", N=" << report.n << ", M=" << report.m
     << ", replicates=" << report.reps << " (" << report.failures << " failed), seed=" << report.seed
     << "\n\n";
  os << std::left << std::setw(24) << "parameter" << std::right << std::setw(12) << "Bias x1e-2"
     << std::setw(12) << "ASE x1e-2" << std::setw(12) << "ESE x1e-2" << std::setw(12) << "RASE x1e-3"
     << std::setw(8) << "CP" << "\n";
  os << std::fixed;
  for (const auto& p : report.parameters) {
    os << std::left << std::setw(24) << p.label << std::right << std::setprecision(2)
       << std::setw(12) << p.bias * 1e2 << std::setw(12) << p.ase * 1e2 << std::setw(12);
    if (p.ese) {
      os << *p.ese * 1e2;
    } else {
      os << "-";
    }
    os << std::setw(12) << p.rase * 1e3 << std::setw(8) << p.cp << "\n";
  }
  os << "\naverage pointwise CP of beta(t): " << std::setprecision(3) << report.beta_cp_mean << "\n";
  for (const auto& [schema, t] : report.timing) {
    os << "schema " << schema << " seconds per fit: " << std::setprecision(4) << t.mean;
    if (t.sd) os << " (sd " << *t.sd << ")";
    os << "\n";
  }
  return os.str();
}

}  // namespace scm
