#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "run_config.hpp"
#include "scm/errors.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SCM_CLI_PATH) + " " + args + " >cli_stdout.txt 2>cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Workspace {
  fs::path dir;
  Workspace() : dir(fs::temp_directory_path() / ("scm_cli_test_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("fit writes a bundle and curves, identical across schema and workers") {
  Workspace ws;
  REQUIRE(run("simulate --scenario broken-stick --reps 1 --n 300 --seed 7 --data-out " + (ws / "bs.csv") +
              " --out " + (ws / "sim")) == 0);
  REQUIRE(fs::exists(ws / "bs.csv"));
  const std::string common = "fit --data " + (ws / "bs.csv") +
                             " --edges=-15,0,15 --degrees 1 --smoothness C0 --correlation exchangeable --lambda 0";
  REQUIRE(run(common + " --schema 1 --workers 3 --out " + (ws / "a")) == 0);
  REQUIRE(run(common + " --schema 2 --workers 1 --out " + (ws / "b")) == 0);
  const std::string bundle = slurp(ws / "a/result.json");
  CHECK(bundle == slurp(ws / "b/result.json"));
  CHECK(slurp(ws / "a/curves.csv") == slurp(ws / "b/curves.csv"));
  CHECK(fs::exists(ws / "a/timing.json"));

  const auto j = nlohmann::json::parse(bundle);
  CHECK(j["theta_star"].size() == 3);
  CHECK(j["lambda_selected"].get<double>() == 0.0);
  CHECK(j["metadata"]["config_hash"].get<std::string>().size() == 16);

  // curve continuity at the shared edge and the kink at 0
  std::istringstream csv(slurp(ws / "a/curves.csv"));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  CHECK(line == "u,t,beta_hat,lower,upper");
  std::vector<double> beta;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    beta.push_back(v[2]);
  }
  REQUIRE(beta.size() == 31);
  CHECK(beta[15] < beta[14]);
  CHECK(beta[15] < beta[16]);

  SUBCASE("dump constraints alongside the fit") {
    REQUIRE(run(common + " --dump-constraints --save-block-fits --out " + (ws / "c")) == 0);
    CHECK(fs::exists(ws / "c/constraints.json"));
    CHECK(fs::exists(ws / "c/Rtilde.csv"));
    CHECK(fs::exists(ws / "c/block_002.json"));
    CHECK(slurp(ws / "c/result.json") == bundle);
  }
  SUBCASE("TOML config with flag overrides") {
    std::ofstream toml(ws / "run.toml");
    toml << "data = \"" << (ws / "bs.csv") << "\"\nedges = [-15.0, 0.0, 15.0]\ndegrees = [1]\n"
         << "smoothness = \"C0\"\ncorrelation = \"exchangeable\"\nlambda = [0.0]\nworkers = 2\n"
         << "out = \"" << (ws / "from_toml") << "\"\n";
    toml.close();
    REQUIRE(run("fit --config " + (ws / "run.toml")) == 0);
    CHECK(slurp(ws / "from_toml/result.json") == bundle);
    REQUIRE(run("fit --config " + (ws / "run.toml") + " --alpha 0.1 --out " + (ws / "alpha")) == 0);
    const auto k = nlohmann::json::parse(slurp(ws / "alpha/result.json"));
    CHECK(k["alpha"].get<double>() == 0.1);
    CHECK(k["metadata"]["config_hash"] != j["metadata"]["config_hash"]);
  }
}

TEST_CASE("exit codes") {
  Workspace ws;
  CHECK(run("fit --data " + (ws / "missing.csv") + " --edges=0,1 --out " + (ws / "none")) == 2);
  CHECK_FALSE(fs::exists(ws / "none"));
  CHECK(run("simulate --scenario weekly --reps 1") == 2);
  CHECK(slurp("cli_stderr.txt").find("broken-stick") != std::string::npos);
  CHECK(run("bogus") == 2);
  CHECK(run("") == 2);

  std::ofstream(ws / "d.csv") << "id,time,y,x1\n1,0,1,1\n1,1,2,1\n2,0,1,1\n2,1,3,1\n";
  // v >= d is rejected before any computation
  CHECK(run("fit --data " + (ws / "d.csv") + " --edges=0,1 --degrees 1 --smoothness C1 --out " + (ws / "x")) == 2);
  // neither edges nor blocks
  CHECK(run("fit --data " + (ws / "d.csv") + " --degrees 1 --out " + (ws / "x")) == 2);
  CHECK_FALSE(fs::exists(ws / "x"));
  std::ofstream(ws / "bad.toml") << "no_such_key = 1\n";
  CHECK(run("fit --config " + (ws / "bad.toml")) == 2);
  CHECK(run("dump-constraints --edges=0,10,20 --degrees 3 --smoothness C1 --p 1 --out " + (ws / "dc")) == 0);
  CHECK(fs::exists(ws / "dc/H.csv"));
  CHECK(run("--version") == 0);
}

TEST_CASE("run config resolution") {
  using scm::cli::RunConfig;
  RunConfig c;
  c.blocks = 4;
  const scm::Partition p = scm::cli::resolve_partition(c, 0.0, 8.0);
  CHECK(p.edges == std::vector<double>{0, 2, 4, 6, 8});
  c.blocks.reset();
  c.block_width = 3.0;
  CHECK(scm::cli::resolve_partition(c, 0.0, 8.0).edges == std::vector<double>{0, 3, 6, 8});
  c.edges = {0.0, 8.0};
  CHECK_THROWS_AS(scm::cli::resolve_partition(c, 0.0, 8.0), scm::ConfigError);

  RunConfig d;
  d.q = 2;
  d.degrees = {2};
  CHECK(scm::cli::pipeline_config(d).basis.degrees == std::vector<int>{2, 2});
  d.degrees = {2, 1, 3};
  CHECK_THROWS_AS(scm::cli::pipeline_config(d), scm::ConfigError);
  RunConfig e;
  e.schema = 3;
  CHECK_THROWS_AS(scm::cli::pipeline_config(e), scm::ConfigError);

  // worker count and schema are not part of the hash input
  RunConfig f, g;
  g.workers = 8;
  g.schema = 1;
  g.out = "elsewhere";
  CHECK(scm::cli::canonical_settings(f, {0, 1}, "x") == scm::cli::canonical_settings(g, {0, 1}, "x"));
}
