#include "scm/serialize.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "json.hpp"
#include "scm/errors.hpp"

#ifndef SCM_VERSION
#define SCM_VERSION "0.0.0"
#endif

namespace scm {

using nlohmann::json;

std::string tool_version() { return SCM_VERSION; }

std::string config_hash(const std::string& canonical_text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json metadata_json(const RunMetadata& meta) {
  return {{"tool", meta.tool}, {"version", meta.version}, {"config_hash", meta.config_hash}};
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) {
    throw DataError("serialize", "matrix row count does not match its data");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = data[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw DataError("serialize", "matrix column count does not match its data");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number_or_nan(row[static_cast<std::size_t>(c)]);
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = number_or_nan(j[k]);
  return v;
}

}  // namespace

std::string block_fit_to_json(const BlockFit& fit) {
  json history = json::array();
  for (const auto& h : fit.history) {
    history.push_back({{"objective_before", h.objective_before},
                       {"objective_after", h.objective_after},
                       {"step", h.step}});
  }
  return json{{"block", fit.block},
          {"theta", vector_to_json(fit.theta)},
          {"objective", fit.objective},
          {"iterations", fit.iterations},
          {"converged", fit.converged},
          {"dispersion", fit.dispersion},
          {"correlation", to_string(fit.correlation)},
          {"subjects", fit.moments.subjects},
          {"gbar", vector_to_json(fit.moments.gbar)},
          {"scores", matrix_to_json(fit.moments.scores)},
          {"jacobian", matrix_to_json(fit.moments.jacobian)},
          {"weight", matrix_to_json(fit.moments.weight)},
          {"history", std::move(history)}}.dump(2);
}

BlockFit block_fit_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    BlockFit fit;
    fit.block = j.at("block").get<int>();
    fit.theta = vector_from_json(j.at("theta"));
    fit.objective = number_or_nan(j.at("objective"));
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
    fit.dispersion = j.at("dispersion").get<double>();
    fit.correlation = parse_correlation(j.at("correlation").get<std::string>());
    fit.moments.block = fit.block;
    fit.moments.subjects = j.at("subjects").get<std::vector<int>>();
    fit.moments.gbar = vector_from_json(j.at("gbar"));
    fit.moments.scores = matrix_from_json(j.at("scores"));
    fit.moments.jacobian = matrix_from_json(j.at("jacobian"));
    fit.moments.weight = matrix_from_json(j.at("weight"));
    for (const auto& h : j.at("history")) {
      fit.history.push_back({h.at("objective_before").get<double>(),
                             h.at("objective_after").get<double>(), h.at("step").get<double>()});
    }
    return fit;
  } catch (const json::exception& e) {
    throw DataError("serialize", std::string("malformed block summary: ") + e.what());
  }
}

std::string result_bundle(const PipelineResult& result, const RunMetadata& meta) {
  const CombinedFit& c = result.combined;
  const auto star_labels = result.cmap.reduced_labels();
  const auto full_labels = result.cmap.layout.labels();
  const double z = normal_quantile(1.0 - c.alpha / 2.0);

  json star = json::array();
  for (Eigen::Index k = 0; k < c.theta_star.size(); ++k) {
    const double se = std::sqrt(std::max(c.cov(k, k), 0.0));
    star.push_back({{"label", star_labels[static_cast<std::size_t>(k)]},
                    {"estimate", c.theta_star(k)},
                    {"se", se},
                    {"lower", c.theta_star(k) - z * se},
                    {"upper", c.theta_star(k) + z * se}});
  }
  json theta = json::array();
  for (Eigen::Index k = 0; k < c.theta.size(); ++k) {
    theta.push_back({{"label", full_labels[static_cast<std::size_t>(k)]}, {"estimate", c.theta(k)}});
  }
  json eta = json::array();
  for (const auto& e : c.eta) {
    eta.push_back({{"label", e.label}, {"estimate", e.estimate}, {"se", e.se},
                   {"lower", e.lower}, {"upper", e.upper}});
  }
  json table = json::array();
  for (const auto& g : c.gcv_table) {
    table.push_back({{"lambda", g.lambda}, {"numerator", g.numerator}, {"edf", g.edf},
                     {"gcv", g.gcv}, {"valid", g.valid}});
  }
  json blocks = json::array();
  for (std::size_t j = 0; j < result.fits.size(); ++j) {
    const auto& f = result.fits[j];
    blocks.push_back({{"block", f.block + 1},
                      {"lo", result.cmap.partition.lo(f.block)},
                      {"hi", result.cmap.partition.hi(f.block)},
                      {"subjects", f.moments.subject_count()},
                      {"iterations", f.iterations},
                      {"converged", f.converged},
                      {"objective", f.objective},
                      {"dispersion", f.dispersion}});
  }
  return json{{"metadata", metadata_json(meta)},
          {"theta_star", std::move(star)},
          {"theta", std::move(theta)},
          {"eta", std::move(eta)},
          {"alpha", c.alpha},
          {"lambda_selected", c.lambda},
          {"gcv_table", std::move(table)},
          {"covariance_theta_star", matrix_to_json(c.cov)},
          {"convergence", {{"blocks", std::move(blocks)}}},
          {"constraints",
           {{"smoothness", to_string(result.cmap.smoothness)},
            {"edges", result.cmap.partition.edges},
            {"full_dim", result.cmap.full_dim()},
            {"reduced_dim", result.cmap.reduced_dim()},
            {"constraint_rows", result.cmap.H.rows()}}}}.dump(2);
}

void write_curves_csv(std::ostream& out, const std::vector<CurveBand>& curves, const RunMetadata& meta) {
  out << "# tool=" << meta.tool << " version=" << meta.version << " config_hash=" << meta.config_hash
      << "\n";
  out << "u,t,beta_hat,lower,upper\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << c.covariate + 1 << ',' << format_double(p.t) << ',' << format_double(p.estimate) << ','
          << format_double(p.lower) << ',' << format_double(p.upper) << '\n';
    }
  }
}

std::string constraints_json(const ConstraintMap& cmap, const RunMetadata& meta) {
  std::vector<int> kept(cmap.kept.begin(), cmap.kept.end());
  return json{{"metadata", metadata_json(meta)},
          {"smoothness", to_string(cmap.smoothness)},
          {"edges", cmap.partition.edges},
          {"theta_labels", cmap.layout.labels()},
          {"theta_star_labels", cmap.reduced_labels()},
          {"kept", kept},
          {"H", matrix_to_json(cmap.H)},
          {"Rtilde", matrix_to_json(cmap.Rtilde)},
          {"D", matrix_to_json(cmap.D)},
          {"Dtilde", matrix_to_json(cmap.Dtilde)}}.dump(2);
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const RunMetadata& meta) {
  out << "# tool=" << meta.tool << " version=" << meta.version << " config_hash=" << meta.config_hash
      << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

std::string mc_report_json(const McReport& report, const RunMetadata& meta) {
  json params = json::array();
  for (const auto& p : report.parameters) {
    json e = {{"label", p.label}, {"truth", p.truth}, {"mean", p.mean}, {"bias", p.bias},
              {"ase", p.ase}, {"rase", p.rase}, {"cp", p.cp}};
    e["ese"] = p.ese ? json(*p.ese) : json(nullptr);
    params.push_back(std::move(e));
  }
  json timing = json::object();
  for (const auto& [schema, t] : report.timing) {
    timing[std::to_string(schema)] = {{"mean_seconds", t.mean},
                                      {"sd_seconds", t.sd ? json(*t.sd) : json(nullptr)}};
  }
  return json{{"metadata", metadata_json(meta)},
          {"scenario", report.scenario},
          {"n", report.n},
          {"m", report.m},
          {"reps", report.reps},
          {"failures", report.failures},
          {"failure_messages", report.failure_messages},
          {"seed", report.seed},
          {"parameters", std::move(params)},
          {"beta_pointwise", {{"t", report.times}, {"cp", report.beta_cp}}},
          {"beta_cp_mean", report.beta_cp_mean},
          {"timing", std::move(timing)}}.dump(2);
}

std::string timings_json(const PhaseTimings& t) {
  return json{{"distributed_seconds", t.distributed},
          {"combine_seconds", t.combine},
          {"gcv_seconds", t.gcv},
          {"inference_seconds", t.inference},
          {"total_seconds", t.total()},
          {"distributed_share", t.total() > 0 ? t.distributed / t.total() : 0.0}}.dump(2);
}

}  // namespace scm
