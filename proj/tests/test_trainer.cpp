#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "agpo/config.hpp"
#include "agpo/errors.hpp"
#include "agpo/rng.hpp"
#include "agpo/trainer.hpp"

using namespace agpo;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(Method method, long budget) {
  RunConfig cfg;
  cfg.method = method;
  cfg.group_size = method == Method::PpoStyle ? 1 : 2;
  cfg.prompts_per_update = 2;
  cfg.token_budget = budget;
  cfg.seeds = {42};
  cfg.context_order = 2;
  cfg.task.kind = TaskKind::ModularArithmetic;
  cfg.task.difficulty = 1;
  cfg.task.prompt_count = 16;
  cfg.task.eval_count = 4;
  return cfg;
}

struct RunOutput {
  std::vector<StepRecord> records;
  std::vector<UpdateAudit> audits;
  PolicySnapshot final_policy;
  TrainRun run;
};

RunOutput drive(const RunConfig& cfg, std::uint64_t seed) {
  RunOutput out;
  out.run = make_run(cfg, seed);
  RunHooks hooks;
  hooks.on_update = [&](const UpdateAudit& a) { out.audits.push_back(a); };
  while (std::optional<StepRecord> rec = run_update(out.run, hooks)) {
    out.records.push_back(*rec);
  }
  out.final_policy = out.run.policy;
  return out;
}

bool records_equal(const StepRecord& a, const StepRecord& b) {
  return a.step == b.step && a.tokens_used_probe == b.tokens_used_probe &&
         a.tokens_used_train == b.tokens_used_train && a.tau == b.tau &&
         a.eps == b.eps && a.u_raw == b.u_raw &&
         a.u_centered == b.u_centered && a.u_baseline == b.u_baseline &&
         a.sigma_hat == b.sigma_hat && a.skew_abs == b.skew_abs &&
         a.vote_entropy == b.vote_entropy && a.mean_reward == b.mean_reward &&
         a.accuracy == b.accuracy && a.step_kl == b.step_kl &&
         a.step_kl_used == b.step_kl_used && a.ref_kl == b.ref_kl &&
         a.mean_entropy == b.mean_entropy &&
         a.clip_saturation_pct == b.clip_saturation_pct &&
         a.grad_norm == b.grad_norm && a.lr == b.lr;
}

}  // namespace

TEST_CASE("method names and capabilities") {
  for (Method m : {Method::PpoStyle, Method::GrpoFixed, Method::GrpoAts,
                   Method::AgpoMinusAts, Method::AgpoFull}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(method_from_string("dqn"), ConfigError);

  CHECK_FALSE(method_uses_probe(Method::PpoStyle));
  CHECK(method_uses_probe(Method::GrpoFixed));
  CHECK(method_uses_probe(Method::AgpoFull));

  CHECK_FALSE(method_adapts_temperature(Method::GrpoFixed));
  CHECK(method_adapts_temperature(Method::GrpoAts));
  CHECK_FALSE(method_adapts_temperature(Method::AgpoMinusAts));
  CHECK(method_adapts_temperature(Method::AgpoFull));

  CHECK_FALSE(method_adapts_epsilon(Method::GrpoFixed));
  CHECK_FALSE(method_adapts_epsilon(Method::GrpoAts));
  CHECK(method_adapts_epsilon(Method::AgpoMinusAts));
  CHECK(method_adapts_epsilon(Method::AgpoFull));
}

TEST_CASE("worst-case update token cost") {
  RunConfig cfg = small_config(Method::GrpoFixed, 1000);
  cfg.prompts_per_update = 4;
  cfg.group_size = 8;
  // required_max_len at difficulty 1 is 2; probe doubles the per-phase cost.
  CHECK(cfg.worst_case_update_tokens() == 2 * 4 * 8 * 2);

  RunConfig ppo = small_config(Method::PpoStyle, 1000);
  ppo.prompts_per_update = 4;
  CHECK(ppo.worst_case_update_tokens() == 4 * 1 * 2);
}

TEST_CASE("first update is independently reproducible from the seed") {
  RunConfig cfg = small_config(Method::GrpoFixed, 4000);
  const std::uint64_t seed = 1337;
  RunOutput out = drive(cfg, seed);
  REQUIRE(!out.audits.empty());
  const UpdateAudit& first = out.audits.front();

  // Replay the epoch-0 shuffle to learn which prompts update 0 consumed.
  const TrainRun fresh = make_run(cfg, seed);
  const std::size_t n = fresh.prompts.train.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  SplitMix64 shuffle = derive_stream(seed, {4, 0});
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = shuffle.next_below(i + 1);
    std::swap(order[i], order[j]);
  }

  const SamplerConfig sampler{cfg.controller.tau_base, cfg.nucleus_p};
  long probe_tokens = 0;
  long train_tokens = 0;
  std::size_t idx = 0;
  for (int s = 0; s < cfg.prompts_per_update; ++s) {
    const Prompt& prompt =
        fresh.prompts.train[static_cast<std::size_t>(order[s])];
    for (int j = 0; j < cfg.group_size; ++j, ++idx) {
      SplitMix64 probe_stream = derive_stream(
          seed, {1, 0, static_cast<std::uint64_t>(prompt.id),
                 static_cast<std::uint64_t>(j)});
      const Rollout probe = sample_rollout(fresh.policy, prompt.id,
                                           prompt.tokens, sampler, Vocab::kEos,
                                           probe_stream);
      probe_tokens += probe.token_count;
      SplitMix64 train_stream = derive_stream(
          seed, {2, 0, static_cast<std::uint64_t>(prompt.id),
                 static_cast<std::uint64_t>(j)});
      const Rollout train = sample_rollout(fresh.policy, prompt.id,
                                           prompt.tokens, sampler, Vocab::kEos,
                                           train_stream);
      train_tokens += train.token_count;

      const std::string stem = "u0.p" + std::to_string(prompt.id) + ".";
      REQUIRE(idx < first.probe_ids.size());
      CHECK(first.probe_ids[idx] == stem + "probe" + std::to_string(j));
      CHECK(first.train_ids[idx] == stem + "train" + std::to_string(j));
    }
  }
  CHECK(first.probe_tokens == probe_tokens);
  CHECK(first.train_tokens == train_tokens);
  CHECK(out.records.front().tokens_used_probe == probe_tokens);
  CHECK(out.records.front().tokens_used_train == train_tokens);
}

TEST_CASE("audited token counts add up to the trace cumulatives") {
  RunConfig cfg = small_config(Method::AgpoFull, 3000);
  RunOutput out = drive(cfg, 42);
  REQUIRE(out.records.size() == out.audits.size());
  REQUIRE(out.records.size() > 10);

  long probe_sum = 0;
  long train_sum = 0;
  std::set<std::string> all_ids;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const UpdateAudit& audit = out.audits[i];
    const StepRecord& rec = out.records[i];
    CHECK(audit.step == rec.step);
    CHECK(rec.step == static_cast<long>(i) + 1);
    probe_sum += audit.probe_tokens;
    train_sum += audit.train_tokens;
    CHECK(rec.tokens_used_probe == probe_sum);
    CHECK(rec.tokens_used_train == train_sum);

    const std::size_t per_update = static_cast<std::size_t>(
        cfg.prompts_per_update * cfg.group_size);
    CHECK(audit.probe_ids.size() == per_update);
    CHECK(audit.train_ids.size() == per_update);
    for (const std::string& id : audit.probe_ids) {
      CHECK(id.find(".probe") != std::string::npos);
      CHECK(all_ids.insert(id).second);
    }
    for (const std::string& id : audit.train_ids) {
      CHECK(id.find(".train") != std::string::npos);
      CHECK(all_ids.insert(id).second);
    }
  }
}

TEST_CASE("probe and train rollouts never share a stream") {
  // Same policy, same temperature, same prompts: if the phases shared
  // streams the two batches would coincide token for token.
  RunConfig cfg = small_config(Method::GrpoFixed, 4000);
  const std::uint64_t seed = 7;
  const TrainRun fresh = make_run(cfg, seed);
  const SamplerConfig sampler{cfg.controller.tau_base, cfg.nucleus_p};
  const Prompt& prompt = fresh.prompts.train.front();

  std::vector<int> probe_tokens, train_tokens;
  for (int j = 0; j < 8; ++j) {
    SplitMix64 ps = derive_stream(
        seed, {1, 0, static_cast<std::uint64_t>(prompt.id),
               static_cast<std::uint64_t>(j)});
    SplitMix64 ts = derive_stream(
        seed, {2, 0, static_cast<std::uint64_t>(prompt.id),
               static_cast<std::uint64_t>(j)});
    const Rollout pr = sample_rollout(fresh.policy, prompt.id, prompt.tokens,
                                      sampler, Vocab::kEos, ps);
    const Rollout tr = sample_rollout(fresh.policy, prompt.id, prompt.tokens,
                                      sampler, Vocab::kEos, ts);
    probe_tokens.insert(probe_tokens.end(), pr.token_ids.begin(),
                        pr.token_ids.end());
    train_tokens.insert(train_tokens.end(), tr.token_ids.begin(),
                        tr.token_ids.end());
  }
  CHECK(probe_tokens != train_tokens);
}

TEST_CASE("training is bit-identical across reruns") {
  RunConfig cfg = small_config(Method::AgpoFull, 2000);
  RunOutput a = drive(cfg, 2026);
  RunOutput b = drive(cfg, 2026);
  REQUIRE(a.records.size() == b.records.size());
  REQUIRE(!a.records.empty());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(records_equal(a.records[i], b.records[i]));
  }
  CHECK(a.final_policy.params == b.final_policy.params);
}

TEST_CASE("worker count changes nothing") {
  RunConfig cfg = small_config(Method::AgpoFull, 1500);
  cfg.workers = 1;
  RunOutput serial = drive(cfg, 42);
  cfg.workers = 4;
  RunOutput threaded = drive(cfg, 42);
  REQUIRE(serial.records.size() == threaded.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i) {
    CHECK(records_equal(serial.records[i], threaded.records[i]));
  }
  CHECK(serial.final_policy.params == threaded.final_policy.params);
}

TEST_CASE("neutralized controllers reproduce the fixed baseline exactly") {
  RunConfig fixed = small_config(Method::GrpoFixed, 2000);
  RunConfig neutered = fixed;
  neutered.method = Method::AgpoFull;
  neutered.controller.signals_mask = signals_mask_from_string("0000");
  neutered.controller.lambda = 0.0;
  neutered.controller.entropy_term_enabled = false;

  RunOutput a = drive(fixed, 42);
  RunOutput b = drive(neutered, 42);
  REQUIRE(a.records.size() == b.records.size());
  REQUIRE(a.records.size() > 20);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].tau == b.records[i].tau);
    CHECK(a.records[i].eps == b.records[i].eps);
    CHECK(a.records[i].mean_reward == b.records[i].mean_reward);
    CHECK(a.records[i].accuracy == b.records[i].accuracy);
    CHECK(a.records[i].grad_norm == b.records[i].grad_norm);
    CHECK(a.records[i].tokens_used_probe == b.records[i].tokens_used_probe);
    CHECK(a.records[i].tokens_used_train == b.records[i].tokens_used_train);
  }
  CHECK(a.final_policy.params == b.final_policy.params);
}

TEST_CASE("the token budget is never exceeded") {
  RunConfig cfg = small_config(Method::AgpoFull, 777);
  RunOutput out = drive(cfg, 1337);
  REQUIRE(!out.records.empty());
  const long worst = cfg.worst_case_update_tokens();
  long prev_total = 0;
  for (const StepRecord& rec : out.records) {
    const long total = rec.tokens_used_probe + rec.tokens_used_train;
    CHECK(total <= cfg.token_budget);
    CHECK(total >= prev_total);
    prev_total = total;
  }
  // The run stopped because even a worst-case update no longer fits.
  CHECK(prev_total + worst > cfg.token_budget);
  CHECK(out.run.update_index == static_cast<long>(out.records.size()));
}

TEST_CASE("ppo-style runs skip the probe phase") {
  RunConfig cfg = small_config(Method::PpoStyle, 600);
  RunOutput out = drive(cfg, 42);
  REQUIRE(!out.records.empty());
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    CHECK(out.records[i].tokens_used_probe == 0);
    CHECK(out.records[i].tau == cfg.controller.tau_base);
    CHECK(out.records[i].eps == cfg.controller.eps_base);
    CHECK(out.records[i].u_raw == 0.0);
    CHECK(out.audits[i].probe_ids.empty());
    CHECK(out.audits[i].probe_tokens == 0);
  }
}

TEST_CASE("majority vote prefers frequency then lexicographic order") {
  using V = std::vector<std::string>;
  CHECK(majority_vote_answer(V{"a"}) == "a");
  CHECK(majority_vote_answer(V{"b", "a"}) == "a");
  CHECK(majority_vote_answer(V{"b", "a", "b"}) == "b");
  CHECK(majority_vote_answer(V{"2", "1", "2", "1"}) == "1");
  CHECK(majority_vote_answer(V{"x", "y", "z"}) == "x");
  CHECK(majority_vote_answer(V{"", "7", ""}) == "");
  CHECK_THROWS_AS(majority_vote_answer(V{}), std::invalid_argument);
}

TEST_CASE("a deterministic policy makes Maj@k equal greedy accuracy") {
  TaskSpec task;
  task.kind = TaskKind::ModularArithmetic;
  task.difficulty = 1;
  task.prompt_count = 20;
  task.eval_count = 0;
  const PromptSet prompts = generate_prompts(task, 99);

  // Emit '7' then eos from every state: sharp enough that nucleus keeps a
  // single token, so sampling and greedy always agree.
  PolicySnapshot policy = make_policy(Vocab::kSize, 1, task.required_max_len());
  for (ContextId c = 0; c < policy.num_contexts(); ++c) {
    policy.logits_at(c)[7] = 1000.0;
  }
  const ContextId after7 = context_from_history(policy, std::vector<int>{7});
  policy.logits_at(after7)[Vocab::kEos] = 2000.0;

  const std::vector<int> ks{1, 4, 16};
  const SamplerConfig sampler{1.0, 0.95};
  const EvalReport report =
      evaluate(policy, prompts.train, task, ks, sampler, 5);
  REQUIRE(report.maj_at.size() == 3);
  for (const auto& [k, acc] : report.maj_at) {
    CHECK(acc == report.greedy_accuracy);
  }
  // Sanity: some prompts at difficulty 1 do have gold "7".
  int sevens = 0;
  for (const Prompt& p : prompts.train) sevens += (p.gold == "7") ? 1 : 0;
  CHECK(report.greedy_accuracy ==
        doctest::Approx(static_cast<double>(sevens) / 20.0).epsilon(1e-12));
}

TEST_CASE("evaluate validates its k list") {
  TaskSpec task;
  task.difficulty = 1;
  task.prompt_count = 4;
  task.eval_count = 0;
  const PromptSet prompts = generate_prompts(task, 3);
  PolicySnapshot policy = make_policy(Vocab::kSize, 1, task.required_max_len());
  const SamplerConfig sampler{1.0, 0.95};
  CHECK_THROWS_AS(
      evaluate(policy, prompts.train, task, std::vector<int>{4, 1}, sampler, 1),
      std::invalid_argument);
  CHECK_THROWS_AS(
      evaluate(policy, prompts.train, task, std::vector<int>{0}, sampler, 1),
      std::invalid_argument);
}

TEST_CASE("run_experiment writes the artifact tree and honest aggregates") {
  RunConfig cfg = small_config(Method::GrpoAts, 600);
  cfg.seeds = {42, 1337};
  cfg.eval_every = 3;
  const fs::path out_dir =
      fs::temp_directory_path() / "agpo_test_experiment";
  fs::remove_all(out_dir);

  const ExperimentResult result = run_experiment(cfg, out_dir);
  REQUIRE(result.seeds.size() == 2);

  for (const std::uint64_t seed : cfg.seeds) {
    const fs::path seed_dir =
        out_dir / ("grpo-ats-seed" + std::to_string(seed));
    CHECK(fs::exists(seed_dir / "trace.jsonl"));
    CHECK(fs::exists(seed_dir / "summary.json"));
    CHECK(fs::exists(seed_dir / "policy.bin"));
    const PolicySnapshot saved = load_policy(seed_dir / "policy.bin");
    CHECK(saved.vocab_size == Vocab::kSize);
  }
  CHECK(fs::exists(out_dir / "summary.json"));

  const double mean = (result.seeds[0].final_train_accuracy +
                       result.seeds[1].final_train_accuracy) /
                      2.0;
  CHECK(result.mean_final_train_accuracy ==
        doctest::Approx(mean).epsilon(1e-12));
  const double d0 = result.seeds[0].final_train_accuracy - mean;
  const double d1 = result.seeds[1].final_train_accuracy - mean;
  CHECK(result.std_final_train_accuracy ==
        doctest::Approx(std::sqrt(d0 * d0 + d1 * d1)).epsilon(1e-12));

  for (const SeedSummary& s : result.seeds) {
    CHECK(s.updates > 0);
    CHECK(s.tokens_probe > 0);
    CHECK(s.tokens_train > 0);
    CHECK(s.tokens_probe + s.tokens_train <= cfg.token_budget);
    REQUIRE(s.final_eval_maj_at.size() == 3);
    CHECK(s.final_eval_maj_at[0].first == 1);
    CHECK(s.final_eval_maj_at[2].first == 16);
  }
  fs::remove_all(out_dir);
}

TEST_CASE("record stream statistics") {
  std::vector<StepRecord> records(3);
  records[0].grad_norm = 1.0;
  records[1].grad_norm = 2.0;
  records[2].grad_norm = 3.0;
  records[0].ref_kl = 0.1;
  records[1].ref_kl = 0.2;
  records[2].ref_kl = 0.6;
  records[0].clip_saturation_pct = 0.0;
  records[1].clip_saturation_pct = 50.0;
  records[2].clip_saturation_pct = 25.0;

  CHECK(grad_norm_variance_of(records) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(mean_ref_kl_of(records) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(mean_clip_saturation_of(records) ==
        doctest::Approx(25.0).epsilon(1e-12));
  CHECK(grad_norm_variance_of({}) == 0.0);
  CHECK(mean_ref_kl_of({}) == 0.0);
}

TEST_CASE("run config validation") {
  RunConfig ok = small_config(Method::AgpoFull, 1000);
  CHECK_NOTHROW(ok.validate());

  RunConfig bad = ok;
  bad.group_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = small_config(Method::PpoStyle, 1000);
  bad.group_size = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = ok;
  bad.prompts_per_update = 17;  // more than task.prompt_count
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = ok;
  bad.context_order = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = ok;
  bad.nucleus_p = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = ok;
  bad.token_budget = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = ok;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = ok;
  bad.workers = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
