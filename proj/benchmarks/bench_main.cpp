#include <benchmark/benchmark.h>

#include <random>

#include "pinncast/attention.hpp"
#include "pinncast/checks.hpp"
#include "pinncast/config.hpp"
#include "pinncast/data.hpp"
#include "pinncast/odesolve.hpp"
#include "pinncast/ops.hpp"
#include "pinncast/train.hpp"

using namespace pinncast;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(s));
  for (auto& x : t.data_mut()) x = n(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = randn({n, n}, rng), b = randn({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Attention(benchmark::State& state) {
  const bool two_branch = state.range(0) != 0;
  std::mt19937_64 rng(2);
  const attention::AttentionConfig cfg{32, 4, 0.0};
  const auto w = attention::AttentionWeights::init(cfg, two_branch, rng);
  const Tensor x = randn({8, 32, 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(two_branch ? attention::two_branch_attention(x, w, cfg)
                                        : attention::single_branch_attention(x, w, cfg));
  }
}
BENCHMARK(BM_Attention)->Arg(0)->Arg(1)->ArgNames({"two_branch"});

void BM_OdeSolve(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto field = ode::VectorField::init(32, rng, false);
  const Tensor z0 = randn({8, 32, 32}, rng);
  ode::OdeSolveConfig cfg;
  cfg.method = state.range(0) != 0 ? ode::Method::dopri5 : ode::Method::rk4_fixed;
  for (auto _ : state) benchmark::DoNotOptimize(ode::ode_solve(field, z0, 0.0, 1.0, cfg));
}
BENCHMARK(BM_OdeSolve)->Arg(0)->Arg(1)->ArgNames({"dopri5"});

void BM_TrainStep(benchmark::State& state) {
  data::GeneratorParams g;
  g.height = 8;
  g.width = 8;
  g.n_samples = 16;
  g.lead_hours = {6.0};
  const auto ds = data::generate_advection_dataset(g);
  RunConfig cfg;
  cfg.model = checks::micro_model_config(state.range(0) != 0 ? ode::Method::dopri5
                                                             : ode::Method::rk4_fixed);
  cfg.batch_size = 8;
  Trainer trainer(cfg, ds);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(idx, 6.0));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgNames({"dopri5"})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
