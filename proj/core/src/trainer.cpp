#include "agpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "agpo/errors.hpp"
#include "agpo/kl_entropy.hpp"
#include "agpo/parallel.hpp"
#include "agpo/rng.hpp"
#include "agpo/trace.hpp"

namespace agpo {

namespace {
// Stream-name tags; combined with (seed, update, prompt, rollout) they name
// every random draw in a run.
constexpr std::uint64_t kStreamProbe = 1;
constexpr std::uint64_t kStreamTrain = 2;
constexpr std::uint64_t kStreamEval = 3;
constexpr std::uint64_t kStreamShuffle = 4;
}  // namespace

const char* to_string(Method method) {
  switch (method) {
    case Method::PpoStyle: return "ppo-style";
    case Method::GrpoFixed: return "grpo-fixed";
    case Method::GrpoAts: return "grpo-ats";
    case Method::AgpoMinusAts: return "agpo-minus-ats";
    case Method::AgpoFull: return "agpo-full";
  }
  throw std::logic_error("unknown Method");
}

Method method_from_string(std::string_view name) {
  if (name == "ppo-style") return Method::PpoStyle;
  if (name == "grpo-fixed") return Method::GrpoFixed;
  if (name == "grpo-ats") return Method::GrpoAts;
  if (name == "agpo-minus-ats") return Method::AgpoMinusAts;
  if (name == "agpo-full") return Method::AgpoFull;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

bool method_uses_probe(Method method) { return method != Method::PpoStyle; }

bool method_adapts_temperature(Method method) {
  return method == Method::GrpoAts || method == Method::AgpoFull;
}

bool method_adapts_epsilon(Method method) {
  return method == Method::AgpoMinusAts || method == Method::AgpoFull;
}

void RunConfig::validate() const {
  task.validate();
  stats.validate();
  controller.validate();
  optimizer.validate();
  if (method == Method::PpoStyle) {
    if (group_size != 1) {
      throw ConfigError("ppo-style runs use group_size 1");
    }
  } else if (group_size < 2) {
    throw ConfigError("grouped methods need group_size >= 2");
  }
  if (prompts_per_update < 1 || prompts_per_update > task.prompt_count) {
    throw ConfigError("prompts_per_update must lie in [1, task.prompt_count]");
  }
  if (token_budget < 1) throw ConfigError("token_budget must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (context_order < 1 || context_order > 4) {
    throw ConfigError("context_order must lie in [1, 4]");
  }
  if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) {
    throw ConfigError("nucleus_p must lie in (0, 1]");
  }
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
}

long RunConfig::worst_case_update_tokens() const {
  const long per_phase = static_cast<long>(prompts_per_update) *
                         static_cast<long>(group_size) *
                         static_cast<long>(task.required_max_len());
  return method_uses_probe(method) ? 2 * per_phase : per_phase;
}

TrainRun make_run(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TrainRun run;
  run.cfg = cfg;
  run.seed = seed;
  run.prompts = generate_prompts(cfg.task, seed);
  run.policy =
      make_policy(Vocab::kSize, cfg.context_order, cfg.task.required_max_len());
  run.reference = run.policy;
  run.opt = make_optimizer(run.policy.params.size(), cfg.optimizer);
  run.horizon_updates =
      std::max<long>(1, cfg.token_budget / cfg.worst_case_update_tokens());
  return run;
}

namespace {

std::vector<int> next_prompt_slots(TrainRun& run) {
  const int p = run.cfg.prompts_per_update;
  const std::size_t n = run.prompts.train.size();
  if (run.prompt_order.size() != n ||
      run.prompt_cursor + static_cast<std::size_t>(p) > n) {
    run.prompt_order.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      run.prompt_order[i] = static_cast<int>(i);
    }
    SplitMix64 rng = derive_stream(
        run.seed, {kStreamShuffle, static_cast<std::uint64_t>(run.prompt_epoch)});
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = rng.next_below(i + 1);
      std::swap(run.prompt_order[i], run.prompt_order[j]);
    }
    run.prompt_cursor = 0;
    run.prompt_epoch += 1;
  }
  std::vector<int> slots(run.prompt_order.begin() +
                             static_cast<std::ptrdiff_t>(run.prompt_cursor),
                         run.prompt_order.begin() +
                             static_cast<std::ptrdiff_t>(run.prompt_cursor) + p);
  run.prompt_cursor += static_cast<std::size_t>(p);
  return slots;
}

std::string rollout_tag(long update, int prompt_id, Phase phase, int index) {
  std::string s = "u" + std::to_string(update);
  s += ".p" + std::to_string(prompt_id);
  s += ".";
  s += to_string(phase);
  s += std::to_string(index);
  return s;
}

// Samples one phase's rollouts for the chosen prompt slots: group_size per
// prompt, each on its own derived stream, scored and tagged. Parallel over
// (prompt, rollout) pairs with slot writes only.
std::vector<std::vector<Rollout>> collect_rollouts(
    TrainRun& run, std::span<const int> slots, Phase phase, double temperature,
    long update_index) {
  const RunConfig& cfg = run.cfg;
  const int g = cfg.group_size;
  const std::uint64_t phase_tag =
      phase == Phase::Probe ? kStreamProbe : kStreamTrain;
  std::vector<std::vector<Rollout>> groups(slots.size());
  for (auto& v : groups) v.resize(static_cast<std::size_t>(g));
  const SamplerConfig sampler{temperature, cfg.nucleus_p};
  parallel_for_index(
      slots.size() * static_cast<std::size_t>(g), cfg.workers,
      [&](std::size_t flat) {
        const std::size_t s = flat / static_cast<std::size_t>(g);
        const int j = static_cast<int>(flat % static_cast<std::size_t>(g));
        const Prompt& prompt =
            run.prompts.train[static_cast<std::size_t>(slots[s])];
        SplitMix64 stream = derive_stream(
            run.seed, {phase_tag, static_cast<std::uint64_t>(update_index),
                       static_cast<std::uint64_t>(prompt.id),
                       static_cast<std::uint64_t>(j)});
        Rollout r = sample_rollout(run.policy, prompt.id, prompt.tokens,
                                   sampler, Vocab::kEos, stream);
        r.phase = phase;
        r.id = rollout_tag(update_index, prompt.id, phase, j);
        std::vector<int> full(prompt.tokens);
        full.insert(full.end(), r.token_ids.begin(), r.token_ids.end());
        r.answer = extract_answer(full, cfg.task);
        groups[s][static_cast<std::size_t>(j)] = std::move(r);
      });
  return groups;
}

long count_tokens(const std::vector<std::vector<Rollout>>& groups) {
  long n = 0;
  for (const auto& grp : groups) {
    for (const Rollout& r : grp) n += r.token_count;
  }
  return n;
}

}  // namespace

std::optional<StepRecord> run_update(TrainRun& run, const RunHooks& hooks) {
  const RunConfig& cfg = run.cfg;
  const bool probes = method_uses_probe(cfg.method);
  const long worst = cfg.worst_case_update_tokens();
  if (run.tokens_probe + run.tokens_train + worst > cfg.token_budget) {
    return std::nullopt;
  }
  const long update_index = run.update_index;
  const std::vector<int> slots = next_prompt_slots(run);

  UpdateAudit audit;
  audit.step = update_index + 1;

  // Probe phase: controller statistics only, never gradients.
  ProbeSignals probe_sig;
  PolicyDiagnostics diag;
  diag.ln_vocab = std::log(static_cast<double>(Vocab::kSize));
  if (probes) {
    std::vector<std::vector<Rollout>> probe_groups = collect_rollouts(
        run, slots, Phase::Probe, cfg.controller.tau_base, update_index);
    std::vector<GroupStats> stats;
    stats.reserve(probe_groups.size());
    std::vector<ContextId> positions;
    for (std::size_t s = 0; s < probe_groups.size(); ++s) {
      const Prompt& prompt =
          run.prompts.train[static_cast<std::size_t>(slots[s])];
      RewardGroup rg;
      for (const Rollout& r : probe_groups[s]) {
        rg.rewards.push_back(score_answer(r.answer, prompt.gold, cfg.task));
        rg.answers.push_back(r.answer);
        audit.probe_ids.push_back(r.id);
        positions.insert(positions.end(), r.context_ids.begin(),
                         r.context_ids.end());
      }
      stats.push_back(compute_group_stats(rg, cfg.dispersion_mode, cfg.stats));
    }
    probe_sig = aggregate_signals(stats);
    diag.mean_entropy = mean_token_entropy(run.policy, positions);
    audit.probe_tokens = count_tokens(probe_groups);
    run.tokens_probe += audit.probe_tokens;
  }

  // Controllers: run for every probing method so state and logs stay
  // comparable; only the active methods apply the outputs.
  double tau_applied = cfg.controller.tau_base;
  double eps_applied = cfg.controller.eps_base;
  ControllerOutput ctrl_out;
  if (probes) {
    auto [out, next] = controller_step(probe_sig, diag, run.ctrl,
                                       cfg.controller);
    ctrl_out = out;
    run.ctrl = next;
    if (method_adapts_temperature(cfg.method)) tau_applied = out.tau;
    if (method_adapts_epsilon(cfg.method)) eps_applied = out.eps;
  }

  // Fresh training rollouts at the applied temperature.
  std::vector<std::vector<Rollout>> train_groups =
      collect_rollouts(run, slots, Phase::Train, tau_applied, update_index);
  audit.train_tokens = count_tokens(train_groups);
  run.tokens_train += audit.train_tokens;

  UpdateBatch batch;
  batch.eps = eps_applied;
  batch.beta = cfg.beta;
  double reward_sum = 0.0;
  double exact_sum = 0.0;
  long rollout_count = 0;
  for (std::size_t s = 0; s < train_groups.size(); ++s) {
    const Prompt& prompt =
        run.prompts.train[static_cast<std::size_t>(slots[s])];
    GroupRollouts grp;
    grp.prompt_id = prompt.id;
    grp.rollouts = std::move(train_groups[s]);
    RewardGroup rg;
    for (const Rollout& r : grp.rollouts) {
      const double reward = score_answer(r.answer, prompt.gold, cfg.task);
      rg.rewards.push_back(reward);
      rg.answers.push_back(r.answer);
      reward_sum += reward;
      exact_sum += (r.answer == prompt.gold) ? 1.0 : 0.0;
      ++rollout_count;
      audit.train_ids.push_back(r.id);
    }
    if (cfg.method == Method::PpoStyle) {
      grp.stats.mean = rg.rewards.front();
      grp.stats.advantages = {rg.rewards.front() - run.ppo_reward_baseline};
    } else {
      grp.stats = compute_group_stats(rg, cfg.dispersion_mode, cfg.stats);
    }
    batch.groups.push_back(std::move(grp));
  }
  const double mean_reward = reward_sum / static_cast<double>(rollout_count);
  const double accuracy = exact_sum / static_cast<double>(rollout_count);

  LossAndGrad lg = loss_and_gradient(batch, run.policy, run.policy,
                                     run.reference, cfg.workers);
  const double grad_norm = global_norm(lg.grad);
  const double progress =
      static_cast<double>(run.tokens_probe + run.tokens_train) /
      static_cast<double>(cfg.token_budget);
  const double lr = scheduled_lr(cfg.optimizer, progress, run.horizon_updates);
  apply_update(run.opt, std::move(lg.grad), run.policy.params, progress,
               run.horizon_updates);

  // Post-update drift on the training minibatch's sampled tokens; carried
  // into the next update's clip radius.
  std::vector<TokenSample> samples;
  for (const GroupRollouts& grp : batch.groups) {
    for (const Rollout& r : grp.rollouts) {
      const std::vector<double> fresh = logprob_sequence(run.policy, r);
      for (std::size_t t = 0; t < fresh.size(); ++t) {
        samples.push_back(TokenSample{r.context_ids[t], r.token_ids[t],
                                      r.logp_old_per_token[t], fresh[t]});
      }
    }
  }
  const double step_kl_raw = step_kl_estimate(samples);
  const double step_kl_used = probes ? ctrl_out.signals.step_kl_used : 0.0;
  record_step_kl(run.ctrl, step_kl_raw, cfg.controller);

  if (cfg.method == Method::PpoStyle) {
    run.ppo_reward_baseline =
        0.9 * run.ppo_reward_baseline + 0.1 * mean_reward;
  }

  run.update_index += 1;

  StepRecord rec;
  rec.step = run.update_index;
  rec.tokens_used_probe = run.tokens_probe;
  rec.tokens_used_train = run.tokens_train;
  rec.tau = tau_applied;
  rec.eps = eps_applied;
  rec.u_raw = ctrl_out.u_raw;
  rec.u_centered = ctrl_out.u_centered;
  rec.u_baseline = run.ctrl.u_baseline;
  rec.sigma_hat = ctrl_out.signals.dispersion;
  rec.skew_abs = ctrl_out.signals.skew_abs;
  rec.vote_entropy = ctrl_out.signals.vote_entropy;
  rec.mean_reward = mean_reward;
  rec.accuracy = accuracy;
  rec.step_kl = step_kl_raw;
  rec.step_kl_used = step_kl_used;
  rec.ref_kl = lg.diag.ref_kl;
  rec.mean_entropy = diag.mean_entropy;
  rec.clip_saturation_pct = lg.diag.clip_saturation_pct();
  rec.grad_norm = grad_norm;
  rec.lr = lr;

  if (hooks.on_update) hooks.on_update(audit);
  return rec;
}

std::string majority_vote_answer(std::span<const std::string> answers) {
  if (answers.empty()) {
    throw std::invalid_argument("majority vote over no answers");
  }
  std::map<std::string, int> counts;
  for (const std::string& a : answers) ++counts[a];
  const std::string* best = nullptr;
  int best_count = 0;
  for (const auto& [answer, count] : counts) {
    if (count > best_count) {  // ties keep the earlier (smaller) key
      best = &answer;
      best_count = count;
    }
  }
  return *best;
}

EvalReport evaluate(const PolicySnapshot& policy,
                    std::span<const Prompt> prompts, const TaskSpec& task,
                    std::span<const int> ks, const SamplerConfig& sampler,
                    std::uint64_t seed, int workers) {
  EvalReport report;
  if (prompts.empty()) return report;
  if (!std::is_sorted(ks.begin(), ks.end())) {
    throw std::invalid_argument("k values must be ascending");
  }

  std::vector<double> greedy_hits(prompts.size(), 0.0);
  parallel_for_index(prompts.size(), workers, [&](std::size_t i) {
    const Prompt& p = prompts[i];
    Rollout r = greedy_rollout(policy, p.id, p.tokens, Vocab::kEos);
    std::vector<int> full(p.tokens);
    full.insert(full.end(), r.token_ids.begin(), r.token_ids.end());
    greedy_hits[i] = (extract_answer(full, task) == p.gold) ? 1.0 : 0.0;
  });
  double acc = 0.0;
  for (double h : greedy_hits) acc += h;
  report.greedy_accuracy = acc / static_cast<double>(prompts.size());

  if (ks.empty()) return report;
  const int kmax = ks.back();
  if (kmax < 1) throw std::invalid_argument("k values must be >= 1");
  std::vector<std::vector<std::string>> sampled(prompts.size());
  for (auto& v : sampled) v.resize(static_cast<std::size_t>(kmax));
  parallel_for_index(
      prompts.size() * static_cast<std::size_t>(kmax), workers,
      [&](std::size_t flat) {
        const std::size_t i = flat / static_cast<std::size_t>(kmax);
        const int j = static_cast<int>(flat % static_cast<std::size_t>(kmax));
        const Prompt& p = prompts[i];
        SplitMix64 stream = derive_stream(
            seed, {kStreamEval, static_cast<std::uint64_t>(p.id),
                   static_cast<std::uint64_t>(j)});
        Rollout r = sample_rollout(policy, p.id, p.tokens, sampler,
                                   Vocab::kEos, stream);
        std::vector<int> full(p.tokens);
        full.insert(full.end(), r.token_ids.begin(), r.token_ids.end());
        sampled[i][static_cast<std::size_t>(j)] = extract_answer(full, task);
      });
  for (int k : ks) {
    double hits = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const std::span<const std::string> votes(sampled[i].data(),
                                               static_cast<std::size_t>(k));
      hits += (majority_vote_answer(votes) == prompts[i].gold) ? 1.0 : 0.0;
    }
    report.maj_at.emplace_back(
        k, hits / static_cast<double>(prompts.size()));
  }
  return report;
}

double mean_ref_kl_of(std::span<const StepRecord> records) {
  if (records.empty()) return 0.0;
  double acc = 0.0;
  for (const StepRecord& r : records) acc += r.ref_kl;
  return acc / static_cast<double>(records.size());
}

double mean_clip_saturation_of(std::span<const StepRecord> records) {
  if (records.empty()) return 0.0;
  double acc = 0.0;
  for (const StepRecord& r : records) acc += r.clip_saturation_pct;
  return acc / static_cast<double>(records.size());
}

double grad_norm_variance_of(std::span<const StepRecord> records) {
  if (records.empty()) return 0.0;
  double mean = 0.0;
  for (const StepRecord& r : records) mean += r.grad_norm;
  mean /= static_cast<double>(records.size());
  double ss = 0.0;
  for (const StepRecord& r : records) {
    const double d = r.grad_norm - mean;
    ss += d * d;
  }
  return ss / static_cast<double>(records.size());
}

namespace {

std::pair<double, double> mean_and_sample_std(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) {
    const double d = x - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& cfg,
                                const std::filesystem::path& out_dir,
                                const RunHooks& hooks,
                                const std::vector<std::string>& overrides) {
  cfg.validate();
  ExperimentResult result;
  const bool writing = !out_dir.empty();
  if (writing) std::filesystem::create_directories(out_dir);

  for (std::uint64_t seed : cfg.seeds) {
    TrainRun run = make_run(cfg, seed);
    std::filesystem::path seed_dir;
    std::optional<TraceWriter> writer;
    if (writing) {
      seed_dir = out_dir / (std::string(to_string(cfg.method)) + "-seed" +
                            std::to_string(seed));
      std::filesystem::create_directories(seed_dir);
      TraceMetadata meta;
      meta.seed = seed;
      meta.vocab_size = Vocab::kSize;
      meta.probe_active = method_uses_probe(cfg.method);
      meta.ats_active = method_adapts_temperature(cfg.method);
      meta.eps_active = method_adapts_epsilon(cfg.method);
      meta.overrides = overrides;
      meta.run = cfg;
      meta.run.workers = 1;  // trace bytes must not depend on parallelism
      writer.emplace(seed_dir / "trace.jsonl", meta);
    }

    std::vector<StepRecord> records;
    while (std::optional<StepRecord> rec = run_update(run, hooks)) {
      records.push_back(*rec);
      if (writer) writer->write_record(*rec);
      if (cfg.eval_every > 0 && rec->step % cfg.eval_every == 0) {
        const EvalReport train_eval =
            evaluate(run.policy, run.prompts.train, cfg.task, {},
                     SamplerConfig{cfg.controller.tau_base, cfg.nucleus_p},
                     seed, cfg.workers);
        const EvalReport held_eval =
            evaluate(run.policy, run.prompts.eval, cfg.task, {},
                     SamplerConfig{cfg.controller.tau_base, cfg.nucleus_p},
                     seed, cfg.workers);
        if (writer) {
          writer->write_eval(rec->step, train_eval.greedy_accuracy,
                             held_eval.greedy_accuracy);
        }
      }
    }

    const SamplerConfig eval_sampler{cfg.controller.tau_base, cfg.nucleus_p};
    const EvalReport train_final = evaluate(
        run.policy, run.prompts.train, cfg.task, {}, eval_sampler, seed,
        cfg.workers);
    const std::vector<int> maj_ks = {1, 4, 16};
    const EvalReport eval_final =
        run.prompts.eval.empty()
            ? EvalReport{}
            : evaluate(run.policy, run.prompts.eval, cfg.task, maj_ks,
                       eval_sampler, seed, cfg.workers);

    SeedSummary summary;
    summary.seed = seed;
    summary.updates = run.update_index;
    summary.tokens_probe = run.tokens_probe;
    summary.tokens_train = run.tokens_train;
    summary.final_train_accuracy = train_final.greedy_accuracy;
    summary.final_eval_accuracy = eval_final.greedy_accuracy;
    summary.final_eval_maj_at = eval_final.maj_at;
    summary.mean_ref_kl = mean_ref_kl_of(records);
    summary.mean_clip_saturation_pct = mean_clip_saturation_of(records);
    summary.grad_norm_variance = grad_norm_variance_of(records);
    result.seeds.push_back(summary);

    if (writing) {
      if (writer) writer->close();
      write_seed_summary(seed_dir / "summary.json", to_string(cfg.method),
                         summary);
      save_policy(run.policy, seed_dir / "policy.bin");
    }
  }

  std::vector<double> train_accs, eval_accs;
  for (const SeedSummary& s : result.seeds) {
    train_accs.push_back(s.final_train_accuracy);
    eval_accs.push_back(s.final_eval_accuracy);
  }
  std::tie(result.mean_final_train_accuracy, result.std_final_train_accuracy) =
      mean_and_sample_std(train_accs);
  std::tie(result.mean_final_eval_accuracy, result.std_final_eval_accuracy) =
      mean_and_sample_std(eval_accs);

  if (writing) {
    write_aggregate_summary(out_dir / "summary.json", to_string(cfg.method),
                            result);
  }
  return result;
}

}  // namespace agpo
