#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agpo/controllers.hpp"
#include "agpo/objective.hpp"
#include "agpo/tasks.hpp"

namespace agpo {

enum class Method { PpoStyle, GrpoFixed, GrpoAts, AgpoMinusAts, AgpoFull };

const char* to_string(Method method);
Method method_from_string(std::string_view name);

// Which machinery a method activates. Every grouped method runs the probe
// phase (so method comparisons pay identical token costs and share rollout
// streams); only the adaptive variants apply the controller outputs.
bool method_uses_probe(Method method);
bool method_adapts_temperature(Method method);
bool method_adapts_epsilon(Method method);

struct RunConfig {
  Method method = Method::AgpoFull;
  int group_size = 8;
  int prompts_per_update = 8;
  long token_budget = 200000;  // generated probe+train tokens
  std::vector<std::uint64_t> seeds = {42, 1337, 2026};
  int eval_every = 0;  // greedy-eval cadence in updates; 0 = final only
  int workers = 1;
  int context_order = 2;
  double nucleus_p = 0.95;
  double beta = 0.03;
  DispersionMode dispersion_mode = DispersionMode::Std;
  StatsConstants stats;
  ControllerConfig controller;
  OptimizerConfig optimizer;
  TaskSpec task;

  void validate() const;
  long worst_case_update_tokens() const;
};

// One line of the trace: everything measured during one update.
struct StepRecord {
  long step = 0;
  long tokens_used_probe = 0;  // cumulative generated probe tokens
  long tokens_used_train = 0;  // cumulative generated train tokens
  double tau = 0.0;            // applied sampling temperature
  double eps = 0.0;            // applied clip radius
  double u_raw = 0.0;
  double u_centered = 0.0;
  double u_baseline = 0.0;     // EMA baseline after this update
  double sigma_hat = 0.0;      // raw probe signals, before masking
  double skew_abs = 0.0;
  double vote_entropy = 0.0;
  double mean_reward = 0.0;
  double accuracy = 0.0;       // exact-match fraction of the train batch
  double step_kl = 0.0;        // drift measured after this update's step
  double step_kl_used = 0.0;   // carried drift the clip radius consumed
  double ref_kl = 0.0;
  double mean_entropy = 0.0;
  double clip_saturation_pct = 0.0;
  double grad_norm = 0.0;      // pre-clip global norm
  double lr = 0.0;
};

// Audit trail for the probe/train separation and token-accounting tests.
struct UpdateAudit {
  long step = 0;
  std::vector<std::string> probe_ids;
  std::vector<std::string> train_ids;  // exactly the gradient batch
  long probe_tokens = 0;               // this update only
  long train_tokens = 0;
};

struct RunHooks {
  std::function<void(const UpdateAudit&)> on_update;
};

// Live state of one seed's training loop.
struct TrainRun {
  RunConfig cfg;
  std::uint64_t seed = 0;
  PromptSet prompts;
  PolicySnapshot policy;
  PolicySnapshot reference;
  OptimizerState opt;
  ControllerState ctrl;
  double ppo_reward_baseline = 0.0;
  long update_index = 0;
  long tokens_probe = 0;
  long tokens_train = 0;
  long horizon_updates = 0;  // budget / worst-case update cost
  std::vector<int> prompt_order;  // shuffled train-prompt cycling state
  std::size_t prompt_cursor = 0;
  long prompt_epoch = 0;
};

TrainRun make_run(const RunConfig& cfg, std::uint64_t seed);

// One full probe -> controllers -> train -> gradient -> drift cycle.
// Returns nothing when another update cannot fit the token budget even in
// the worst case; the run ends there with the budget intact.
std::optional<StepRecord> run_update(TrainRun& run, const RunHooks& hooks = {});

struct EvalReport {
  double greedy_accuracy = 0.0;
  std::vector<std::pair<int, double>> maj_at;  // (k, accuracy)
};

// Greedy accuracy plus Maj@k for each requested k (ascending). Maj@k votes
// over the first k of max(ks) sampled rollouts per prompt. Evaluation
// generations never touch the training budget.
EvalReport evaluate(const PolicySnapshot& policy,
                    std::span<const Prompt> prompts, const TaskSpec& task,
                    std::span<const int> ks, const SamplerConfig& sampler,
                    std::uint64_t seed, int workers = 1);

// Most frequent answer; ties go to the lexicographically smallest.
std::string majority_vote_answer(std::span<const std::string> answers);

struct SeedSummary {
  std::uint64_t seed = 0;
  long updates = 0;
  long tokens_probe = 0;
  long tokens_train = 0;
  double final_train_accuracy = 0.0;  // greedy, on the training prompts
  double final_eval_accuracy = 0.0;   // greedy, on the held-out prompts
  std::vector<std::pair<int, double>> final_eval_maj_at;
  double mean_ref_kl = 0.0;
  double mean_clip_saturation_pct = 0.0;
  double grad_norm_variance = 0.0;  // population variance over the run
};

struct ExperimentResult {
  std::vector<SeedSummary> seeds;
  double mean_final_train_accuracy = 0.0;
  double std_final_train_accuracy = 0.0;
  double mean_final_eval_accuracy = 0.0;
  double std_final_eval_accuracy = 0.0;
};

// Runs every configured seed to budget exhaustion. With a nonempty out_dir,
// writes one directory per (method, seed) holding trace.jsonl, summary.json,
// and policy.bin, plus an aggregate summary.json at the top level.
// `overrides` is free-form provenance (e.g. CLI flag overrides) copied into
// each trace's metadata line.
ExperimentResult run_experiment(const RunConfig& cfg,
                                const std::filesystem::path& out_dir,
                                const RunHooks& hooks = {},
                                const std::vector<std::string>& overrides = {});

// Summary statistics recomputable from a record stream; shared by the
// trainer and the offline verifier so both sides agree by construction.
double mean_ref_kl_of(std::span<const StepRecord> records);
double mean_clip_saturation_of(std::span<const StepRecord> records);
double grad_norm_variance_of(std::span<const StepRecord> records);

}  // namespace agpo
