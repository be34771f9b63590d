#include <beliefid/belief.hpp>
#include <beliefid/error.hpp>
#include <beliefid/learner.hpp>
#include <beliefid/pomdp.hpp>
#include <beliefid/solver.hpp>

#include <benchmark/benchmark.h>

using namespace beliefid;

namespace {

std::vector<Episode> data(const FactoredPOMDP& p, std::size_t n, std::size_t horizon) {
  std::vector<Episode> out;
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(sample_episode(p, StochasticPolicy::uniform(p.sizes.states, p.sizes.actions), horizon,
                                 episode_seed(0, k)));
  }
  return out;
}

void BM_BeliefUpdate(benchmark::State& state) {
  const auto p = make_fixture("GRIDNOISE");
  const auto b = initial_belief(p);
  std::size_t o = 0;
  for (auto _ : state) {
    try {
      benchmark::DoNotOptimize(belief_update(p, b, 0, o));
    } catch (const ZeroProbabilityObservation&) {
    }
    o = (o + 1) % p.sizes.observations;
  }
}
BENCHMARK(BM_BeliefUpdate);

void BM_BuildBeliefMdp(benchmark::State& state) {
  const auto p = make_fixture("TB2");
  const auto cap = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_belief_mdp(p, {cap, 1e-6, 1'000'000}));
  }
}
BENCHMARK(BM_BuildBeliefMdp)->Arg(4)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ElboGradients(benchmark::State& state) {
  const auto p = make_fixture("GRIDNOISE");
  const auto episodes = data(p, 64, 20);
  const auto m = init_model(latent_sizes_for(p, 4, 3), 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(elbo_gradients(m, episodes));
  }
}
BENCHMARK(BM_ElboGradients)->Unit(benchmark::kMillisecond);

void BM_ValueIteration(benchmark::State& state) {
  const auto mdp = underlying_mdp(make_fixture("GRIDNOISE"));
  for (auto _ : state) {
    benchmark::DoNotOptimize(value_iteration(mdp));
  }
}
BENCHMARK(BM_ValueIteration)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
