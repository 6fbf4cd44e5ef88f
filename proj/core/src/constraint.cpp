#include "scm/constraint.hpp"

#include <sstream>

#include "scm/errors.hpp"

namespace scm {

std::string to_string(Smoothness s) {
  switch (s) {
    case Smoothness::None: return "none";
    case Smoothness::C0: return "C0";
    case Smoothness::C1: return "C1";
  }
  return "unknown";
}

Smoothness parse_smoothness(const std::string& name) {
  if (name == "none" || name == "None") return Smoothness::None;
  if (name == "C0" || name == "c0" || name == "0") return Smoothness::C0;
  if (name == "C1" || name == "c1" || name == "1") return Smoothness::C1;
  throw ConfigError("constraint", "unknown smoothness class '" + name + "'", std::nullopt,
                    "use none, C0 or C1");
}

int matched_orders(Smoothness s) {
  switch (s) {
    case Smoothness::None: return 0;
    case Smoothness::C0: return 1;
    case Smoothness::C1: return 2;
  }
  return 0;
}

void validate_smoothness(const BasisSpec& basis, Smoothness s) {
  basis.validate();
  const int v = matched_orders(s) - 1;
  for (int u = 0; u < basis.q(); ++u) {
    if (v >= basis.degrees[u]) {
      std::ostringstream os;
      os << "smoothness " << to_string(s) << " needs degree > " << v << " but covariate "
         << u + 1 << " has degree " << basis.degrees[u]
         << " (matching that many derivatives forces identical coefficients in every block)";
      throw ConfigError("constraint", os.str(), std::nullopt, "raise the degree or lower the class");
    }
  }
}

namespace {

// Right-edge coordinate of block j in the basis' own units.
double edge_coordinate(const Partition& part, int j, bool scaled) {
  return scaled ? 1.0 : part.width(j);
}

// beta_j at the right edge, per coefficient.
Eigen::RowVectorXd value_row(int degree, double s_end) {
  Eigen::RowVectorXd r(degree + 1);
  double power = 1.0;
  for (int d = 0; d <= degree; ++d) {
    r[d] = power;
    power *= s_end;
  }
  return r;
}

// d beta_j / ds at the right edge, per coefficient.
Eigen::RowVectorXd slope_row(int degree, double s_end) {
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(degree + 1);
  double power = 1.0;
  for (int d = 1; d <= degree; ++d) {
    r[d] = d * power;
    power *= s_end;
  }
  return r;
}

// Factor converting a slope in block j's coordinate into block j+1's.
double slope_factor(const Partition& part, int j, bool scaled) {
  return scaled ? part.width(j + 1) / part.width(j) : 1.0;
}

// Per covariate: T[j] maps that covariate's theta* segment to gamma_ju.
std::vector<Eigen::MatrixXd> covariate_maps(const Partition& part, int degree, bool scaled,
                                            int v, int& reduced) {
  const int J = part.blocks();
  const int per_block = degree + 1;
  if (v < 0) {
    reduced = J * per_block;
    std::vector<Eigen::MatrixXd> t(J, Eigen::MatrixXd::Zero(per_block, reduced));
    for (int j = 0; j < J; ++j) t[j].middleCols(j * per_block, per_block).setIdentity();
    return t;
  }
  const int kept_later = degree - v;
  reduced = per_block + (J - 1) * kept_later;
  std::vector<Eigen::MatrixXd> t(J, Eigen::MatrixXd::Zero(per_block, reduced));
  t[0].leftCols(per_block).setIdentity();
  for (int j = 1; j < J; ++j) {
    const double s_end = edge_coordinate(part, j - 1, scaled);
    t[j].row(0) = value_row(degree, s_end) * t[j - 1];
    if (v >= 1) t[j].row(1) = slope_factor(part, j - 1, scaled) * slope_row(degree, s_end) * t[j - 1];
    const int col = per_block + (j - 1) * kept_later;
    for (int d = v + 1; d <= degree; ++d) t[j](d, col + d - v - 1) = 1.0;
  }
  return t;
}

}  // namespace

Eigen::MatrixXd build_H(const Partition& part, const BasisSpec& basis, Smoothness s) {
  validate_smoothness(basis, s);
  const int J = part.blocks();
  const ParamLayout layout(basis, J, 0);
  const int orders = matched_orders(s);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(basis.q() * orders * (J - 1), layout.gamma_dim());
  int row = 0;
  for (int u = 0; u < basis.q(); ++u) {
    const int degree = basis.degrees[u];
    for (int j = 0; j + 1 < J; ++j) {
      const double s_end = edge_coordinate(part, j, basis.scaled);
      const int left = layout.gamma_index(j, u, 0);
      if (orders >= 1) {
        h.block(row, left, 1, degree + 1) = value_row(degree, s_end);
        h(row, layout.gamma_index(j + 1, u, 0)) = -1.0;
        ++row;
      }
      if (orders >= 2) {
        h.block(row, left, 1, degree + 1) =
            slope_factor(part, j, basis.scaled) * slope_row(degree, s_end);
        h(row, layout.gamma_index(j + 1, u, 1)) = -1.0;
        ++row;
      }
    }
  }
  return h;
}

Eigen::MatrixXd build_Rtilde(const Partition& part, const BasisSpec& basis, Smoothness s, int p) {
  validate_smoothness(basis, s);
  const int J = part.blocks();
  const ParamLayout layout(basis, J, p);
  const int v = matched_orders(s) - 1;

  std::vector<std::vector<Eigen::MatrixXd>> maps(basis.q());
  std::vector<int> reduced(basis.q());
  int total = p;
  for (int u = 0; u < basis.q(); ++u) {
    maps[u] = covariate_maps(part, basis.degrees[u], basis.scaled, v, reduced[u]);
    total += reduced[u];
  }
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(layout.full_dim(), total);
  int col = 0;
  for (int u = 0; u < basis.q(); ++u) {
    for (int j = 0; j < J; ++j) {
      for (int d = 0; d <= basis.degrees[u]; ++d) {
        r.block(layout.gamma_index(j, u, d), col, 1, reduced[u]) = maps[u][j].row(d);
      }
    }
    col += reduced[u];
  }
  for (int k = 0; k < p; ++k) r(layout.eta_index(k), col + k) = 1.0;
  return r;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_D(const Partition& part, const BasisSpec& basis,
                                                    int p, const Eigen::MatrixXd& rtilde) {
  const ParamLayout layout(basis, part.blocks(), p);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(layout.full_dim());
  diag.head(layout.gamma_dim()).setOnes();
  Eigen::MatrixXd d = diag.asDiagonal();
  Eigen::MatrixXd dt = rtilde.transpose() * diag.asDiagonal() * rtilde;
  return {std::move(d), std::move(dt)};
}

ConstraintMap build_constraint_map(const Partition& part, const BasisSpec& basis, Smoothness s,
                                   int p) {
  ConstraintMap cmap;
  cmap.smoothness = s;
  cmap.partition = part;
  cmap.layout = ParamLayout(basis, part.blocks(), p);
  cmap.H = build_H(part, basis, s);
  cmap.Rtilde = build_Rtilde(part, basis, s, p);
  auto [d, dt] = build_D(part, basis, p, cmap.Rtilde);
  cmap.D = std::move(d);
  cmap.Dtilde = std::move(dt);

  // Each theta* entry is a copy of exactly one theta entry (a unit row of Rtilde).
  cmap.kept.assign(static_cast<std::size_t>(cmap.reduced_dim()), -1);
  for (Eigen::Index r = 0; r < cmap.Rtilde.rows(); ++r) {
    Eigen::Index c = 0;
    const double mx = cmap.Rtilde.row(r).cwiseAbs().maxCoeff(&c);
    if (mx == 1.0 && cmap.Rtilde.row(r).cwiseAbs().sum() == 1.0 &&
        cmap.kept[static_cast<std::size_t>(c)] < 0) {
      cmap.kept[static_cast<std::size_t>(c)] = static_cast<int>(r);
    }
  }
  return cmap;
}

std::vector<std::string> ConstraintMap::reduced_labels() const {
  const auto full = layout.labels();
  std::vector<std::string> out;
  out.reserve(kept.size());
  for (int idx : kept) out.push_back(idx >= 0 ? full[static_cast<std::size_t>(idx)] : "?");
  return out;
}

}  // namespace scm
