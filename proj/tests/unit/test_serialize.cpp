#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "scm/errors.hpp"
#include "scm/serialize.hpp"

using namespace scm;
using nlohmann::json;

TEST_CASE("block summaries round-trip exactly") {
  Scenario sc = known_cubic(60);
  const LongData d = generate(sc, 42);
  const auto blocks = split(d, sc.partition);
  const auto fits = fit_blocks(blocks, sc.partition, sc.fit);
  for (const auto& f : fits) {
    const BlockFit back = block_fit_from_json(block_fit_to_json(f));
    CHECK(back.block == f.block);
    CHECK(back.theta == f.theta);
    CHECK(back.moments.scores == f.moments.scores);
    CHECK(back.moments.jacobian == f.moments.jacobian);
    CHECK(back.moments.weight == f.moments.weight);
    CHECK(back.moments.gbar == f.moments.gbar);
    CHECK(back.moments.subjects == f.moments.subjects);
    CHECK(back.objective == f.objective);
    CHECK(back.dispersion == f.dispersion);
    CHECK(back.converged == f.converged);
    CHECK(back.history.size() == f.history.size());
  }
  // a combination from deserialized summaries is identical
  std::vector<BlockMoments> m1, m2;
  std::vector<Eigen::VectorXd> e1, e2;
  for (const auto& f : fits) {
    m1.push_back(f.moments);
    e1.push_back(f.theta);
    const BlockFit b = block_fit_from_json(block_fit_to_json(f));
    m2.push_back(b.moments);
    e2.push_back(b.theta);
  }
  const ConstraintMap cmap = build_constraint_map(sc.partition, sc.fit.basis, sc.fit.smoothness, 1);
  CHECK(scm_one_step(stack(m1, cmap), cmap, 1e-3, e1) == scm_one_step(stack(m2, cmap), cmap, 1e-3, e2));

  CHECK_THROWS_AS(block_fit_from_json("{\"block\": 1}"), DataError);
}

TEST_CASE("result bundle contents") {
  Scenario sc = known_cubic(120);
  const LongData d = generate(sc, 8);
  const PipelineResult r = run_pipeline(d, sc.partition, sc.fit);
  RunMetadata meta;
  meta.config_hash = config_hash("abc");
  const json j = json::parse(result_bundle(r, meta));
  CHECK(j["metadata"]["config_hash"] == meta.config_hash);
  CHECK(j["metadata"]["version"] == tool_version());
  CHECK(j["theta_star"].size() == static_cast<std::size_t>(r.cmap.reduced_dim()));
  CHECK(j["eta"].size() == 1);
  CHECK(j["eta"][0]["se"].get<double>() > 0.0);
  CHECK(j["gcv_table"].size() == 5);
  CHECK(j["lambda_selected"].get<double>() == r.combined.lambda);
  CHECK(j["convergence"]["blocks"].size() == 5);
  CHECK_FALSE(j.contains("timings"));
  CHECK(j["theta_star"][0]["estimate"].get<double>() == r.combined.theta_star(0));

  std::ostringstream csv;
  write_curves_csv(csv, r.combined.curves, meta);
  std::istringstream lines(csv.str());
  std::string first, header, row;
  std::getline(lines, first);
  std::getline(lines, header);
  std::getline(lines, row);
  CHECK(first.find(meta.config_hash) != std::string::npos);
  CHECK(header == "u,t,beta_hat,lower,upper");
  CHECK(row.rfind("1,0,", 0) == 0);

  const json t = json::parse(timings_json(r.timings));
  CHECK(t["total_seconds"].get<double>() > 0.0);
}

TEST_CASE("hashes and number formatting") {
  CHECK(config_hash("x") == config_hash("x"));
  CHECK(config_hash("x") != config_hash("y"));
  CHECK(config_hash("").size() == 16);
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_double(-15.0) == "-15");
}

TEST_CASE("constraint dump") {
  const Partition part = make_partition(std::vector<double>{0.0, 1.0, 2.0});
  const ConstraintMap cmap = build_constraint_map(part, BasisSpec{{2}, true}, Smoothness::C1, 1);
  const json j = json::parse(constraints_json(cmap, RunMetadata{}));
  CHECK(j["H"]["rows"] == 2);
  CHECK(j["Rtilde"]["cols"] == cmap.reduced_dim());
  CHECK(j["theta_star_labels"].size() == static_cast<std::size_t>(cmap.reduced_dim()));
  std::ostringstream os;
  write_matrix_csv(os, cmap.Rtilde, RunMetadata{});
  const std::string dump = os.str();
  CHECK(std::count(dump.begin(), dump.end(), '\n') == cmap.full_dim() + 1);
}
