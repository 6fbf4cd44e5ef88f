// Per-phase costs: one block QIF fit, the one-step combination, and the GCV sweep.

#include <benchmark/benchmark.h>

#include <map>

#include "scm/combine.hpp"
#include "scm/pipeline.hpp"
#include "scm/simulate.hpp"

using namespace scm;

namespace {

struct Fixture {
  Scenario sc;
  LongData data;
  std::vector<BlockData> blocks;
  ConstraintMap cmap;
  std::vector<BlockFit> fits;

  explicit Fixture(int n)
      : sc(known_cubic(n)),
        data(generate(sc, replicate_seed(sc.seed, 0))),
        blocks(split(data, sc.partition)),
        cmap(build_constraint_map(sc.partition, sc.fit.basis, sc.fit.smoothness, data.p)),
        fits(fit_blocks(blocks, sc.partition, sc.fit)) {}

  std::vector<BlockMoments> summaries() const {
    std::vector<BlockMoments> out;
    for (const auto& f : fits) out.push_back(f.moments);
    return out;
  }
  std::vector<Eigen::VectorXd> estimates() const {
    std::vector<Eigen::VectorXd> out;
    for (const auto& f : fits) out.push_back(f.theta);
    return out;
  }
};

const Fixture& fixture(int n) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Fixture(n)).first;
  return it->second;
}

void BM_FitBlock(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  const BlockModel m = block_model(f.sc.partition, 0, f.sc.fit, f.data.p);
  const WorkingCorrelation corr{f.sc.fit.correlation};
  for (auto _ : state) benchmark::DoNotOptimize(fit_block(f.blocks[0], corr, m, f.sc.fit.fit));
}

void BM_ScmOneStep(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  const auto summaries = f.summaries();
  const auto estimates = f.estimates();
  for (auto _ : state) {
    const StackedMoments sm = stack(summaries, f.cmap);
    benchmark::DoNotOptimize(scm_one_step(sm, f.cmap, 1e-3, estimates));
  }
}

void BM_Gcv(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  const auto summaries = f.summaries();
  const auto estimates = f.estimates();
  const StackedMoments sm = stack(summaries, f.cmap);
  const OneStepSystem system(sm, f.cmap, estimates);
  const BlockEvaluators ev(f.blocks, f.sc.fit, f.fits);
  const BlockEvaluator eval = [&](int j, const Eigen::VectorXd& th) { return ev(j, th); };
  const auto schema = static_cast<Schema>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(gcv(f.sc.fit.lambda_grid, system, f.cmap, eval, schema, 1));
  }
}

}  // namespace

BENCHMARK(BM_FitBlock)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScmOneStep)->Arg(250)->Arg(1000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gcv)->Args({500, 1})->Args({500, 2})->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
