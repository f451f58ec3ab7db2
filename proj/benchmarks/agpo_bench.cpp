#include <benchmark/benchmark.h>

#include <cstdint>
#include <string>
#include <vector>

#include "agpo/objective.hpp"
#include "agpo/policy.hpp"
#include "agpo/reward_stats.hpp"
#include "agpo/rng.hpp"
#include "agpo/tasks.hpp"

namespace {

using namespace agpo;

void randomize(PolicySnapshot& p, std::uint64_t seed, double scale) {
  SplitMix64 rng(seed);
  for (double& x : p.params) x = scale * (2.0 * rng.next_double() - 1.0);
}

void BM_group_stats(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  const auto mode = static_cast<DispersionMode>(state.range(1));
  const StatsConstants consts;
  SplitMix64 rng(11);
  RewardGroup group;
  for (int i = 0; i < g; ++i) {
    const int quarter = static_cast<int>(rng.next_below(5));
    group.rewards.push_back(0.25 * quarter);
    group.answers.push_back(std::to_string(quarter));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_group_stats(group, mode, consts));
  }
  state.SetItemsProcessed(state.iterations() * g);
}

void BM_sample_rollout(benchmark::State& state) {
  PolicySnapshot policy = make_policy(Vocab::kSize, 2, 8);
  randomize(policy, 23, 1.0);
  const std::vector<int> prompt = {3, 7, Vocab::kDelimiter};
  std::uint64_t counter = 0;
  long tokens = 0;
  for (auto _ : state) {
    SplitMix64 stream = derive_stream(99, {counter++});
    const Rollout r = sample_rollout(policy, 0, prompt,
                                     SamplerConfig{1.0, 0.95}, Vocab::kEos,
                                     stream);
    tokens += r.token_count;
    benchmark::DoNotOptimize(r.token_count);
  }
  state.SetItemsProcessed(tokens);
}

void BM_loss_and_gradient(benchmark::State& state) {
  const int workers = static_cast<int>(state.range(0));
  PolicySnapshot policy = make_policy(Vocab::kSize, 2, 8);
  randomize(policy, 37, 1.0);
  PolicySnapshot reference = make_policy(Vocab::kSize, 2, 8);
  randomize(reference, 38, 1.0);

  SplitMix64 adv_rng(41);
  UpdateBatch batch;
  long tokens = 0;
  for (int g = 0; g < 8; ++g) {
    GroupRollouts grp;
    grp.prompt_id = g;
    const std::vector<int> prompt = {g % 10, (3 * g + 1) % 10,
                                     Vocab::kDelimiter};
    for (int j = 0; j < 8; ++j) {
      SplitMix64 stream = derive_stream(57, {static_cast<std::uint64_t>(g),
                                             static_cast<std::uint64_t>(j)});
      grp.rollouts.push_back(sample_rollout(policy, g, prompt,
                                            SamplerConfig{1.0, 0.95},
                                            Vocab::kEos, stream));
      tokens += grp.rollouts.back().token_count;
      grp.stats.advantages.push_back(4.0 * adv_rng.next_double() - 2.0);
    }
    batch.groups.push_back(std::move(grp));
  }

  for (auto _ : state) {
    benchmark::DoNotOptimize(
        loss_and_gradient(batch, policy, policy, reference, workers));
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}

BENCHMARK(BM_group_stats)
    ->ArgsProduct({{8, 64},
                   {static_cast<long>(DispersionMode::Std),
                    static_cast<long>(DispersionMode::Mad),
                    static_cast<long>(DispersionMode::Iqr)}});
BENCHMARK(BM_sample_rollout);
BENCHMARK(BM_loss_and_gradient)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
