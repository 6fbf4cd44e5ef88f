#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>

#include "scm/partition.hpp"

namespace testutil {

// Central differences of a vector-valued function, one column per coordinate.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double step = h * (1.0 + std::abs(x(k)));
    Eigen::VectorXd up = x, dn = x;
    up(k) += step;
    dn(k) -= step;
    jac.col(k) = (f(up) - f(dn)) / (2.0 * step);
  }
  return jac;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

// Balanced Gaussian data on the integer grid lo..hi with a known linear
// truth: y = x1 * (b0 + b1 t) + z1 * eta + noise (AR1 errors, rho 0.5).
inline scm::LongData linear_data(int n, int lo, int hi, int q, int p, unsigned seed,
                                 double sigma = 1.0, double b0 = 1.0, double b1 = 0.5,
                                 double eta = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  scm::LongData d;
  d.q = q;
  d.p = p;
  const int m = hi - lo + 1;
  for (int i = 0; i < n; ++i) {
    scm::SubjectSeries s;
    s.id = 100 + 3 * i;
    s.t.resize(m);
    s.y.resize(m);
    s.x.resize(m, q);
    s.z.resize(m, p);
    double e = normal(rng);
    for (int k = 0; k < m; ++k) {
      const double t = lo + k;
      s.t(k) = t;
      double mean = 0.0;
      for (int u = 0; u < q; ++u) {
        s.x(k, u) = u == 0 ? 1.0 : normal(rng);
        mean += s.x(k, u) * (b0 + b1 * t / (u + 1));
      }
      for (int c = 0; c < p; ++c) {
        s.z(k, c) = coin(rng) ? 1.0 : 0.0;
        mean += s.z(k, c) * eta;
      }
      if (k > 0) e = 0.5 * e + std::sqrt(0.75) * normal(rng);
      s.y(k) = mean + sigma * e;
    }
    d.subjects.push_back(std::move(s));
  }
  return d;
}

}  // namespace testutil
