#include "agpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "agpo/errors.hpp"
#include "agpo/kl_entropy.hpp"
#include "agpo/parallel.hpp"

namespace agpo {

void UpdateBatch::validate() const {
  if (groups.empty()) throw std::invalid_argument("empty update batch");
  if (!(eps > 0.0 && eps < 1.0)) {
    throw std::invalid_argument("clip radius must lie in (0, 1)");
  }
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  const std::size_t g = groups.front().rollouts.size();
  for (const GroupRollouts& grp : groups) {
    if (grp.rollouts.empty() || grp.rollouts.size() != g) {
      throw std::invalid_argument("all groups must hold the same G rollouts");
    }
    if (grp.stats.advantages.size() != g) {
      throw std::invalid_argument("advantages must run parallel to rollouts");
    }
    for (const Rollout& r : grp.rollouts) {
      if (r.token_ids.empty()) {
        throw std::invalid_argument("rollout with no generated tokens");
      }
      if (r.token_ids.size() != r.logp_old_per_token.size() ||
          r.token_ids.size() != r.context_ids.size()) {
        throw std::invalid_argument("rollout token lists out of sync");
      }
    }
  }
}

double SurrogateDiagnostics::clip_saturation_pct() const {
  if (total_tokens == 0) return 0.0;
  return 100.0 * static_cast<double>(clipped_tokens) /
         static_cast<double>(total_tokens);
}

namespace {

struct RatioResult {
  double ratio = 1.0;
  bool clamped = false;  // log-ratio hit the +-30 guard
};

RatioResult token_ratio_impl(double logp_new, double logp_old) {
  double lr = logp_new - logp_old;
  RatioResult out;
  if (lr > 30.0) {
    lr = 30.0;
    out.clamped = true;
  } else if (lr < -30.0) {
    lr = -30.0;
    out.clamped = true;
  }
  out.ratio = std::exp(lr);
  return out;
}

// Everything one group contributes, kept separate so groups can be computed
// concurrently and merged in a fixed order afterwards.
struct GroupPartial {
  double surrogate = 0.0;  // (1/G) sum_i mean_t min(...)
  double kl_sum = 0.0;     // sum over positions of exact reference KL
  std::size_t positions = 0;
  std::size_t clipped = 0;
  std::vector<std::uint8_t> flags;
  std::vector<double> grad_surrogate;  // d surrogate / d params
  std::vector<double> grad_kl;         // d kl_sum / d params
};

GroupPartial evaluate_group(const GroupRollouts& group, double eps,
                            const PolicySnapshot& policy,
                            const PolicySnapshot& reference,
                            bool want_grad, std::size_t param_count) {
  GroupPartial part;
  if (want_grad) {
    part.grad_surrogate.assign(param_count, 0.0);
    part.grad_kl.assign(param_count, 0.0);
  }
  const double inv_g = 1.0 / static_cast<double>(group.rollouts.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    const double adv = group.stats.advantages[i];
    const std::vector<double> logp_new = logprob_sequence(policy, r);
    const double inv_t = 1.0 / static_cast<double>(r.token_ids.size());
    double rollout_sum = 0.0;
    for (std::size_t t = 0; t < r.token_ids.size(); ++t) {
      const RatioResult rr =
          token_ratio_impl(logp_new[t], r.logp_old_per_token[t]);
      const double clipped_ratio = std::clamp(rr.ratio, 1.0 - eps, 1.0 + eps);
      const double u = rr.ratio * adv;
      const double c = clipped_ratio * adv;
      rollout_sum += std::min(u, c);
      const bool outside = rr.ratio < 1.0 - eps || rr.ratio > 1.0 + eps;
      const bool flagged = outside && c <= u;
      part.flags.push_back(flagged ? 1 : 0);
      if (flagged) ++part.clipped;
      ++part.positions;
      if (want_grad) {
        // The unclipped branch carries the gradient whenever it attains the
        // min (ties included); a binding clip or a saturated log-ratio
        // contributes zero.
        if (u <= c && !rr.clamped) {
          accumulate_logprob_gradient(policy, r.context_ids[t],
                                      r.token_ids[t],
                                      adv * rr.ratio * inv_t * inv_g,
                                      part.grad_surrogate);
        }
        part.kl_sum += accumulate_reference_kl_gradient(
            policy, reference, r.context_ids[t], 1.0, part.grad_kl);
      } else {
        part.kl_sum += kl_nats(
            next_token_distribution(policy, r.context_ids[t]),
            next_token_distribution(reference, r.context_ids[t]));
      }
    }
    part.surrogate += rollout_sum * inv_t * inv_g;
  }
  return part;
}

void add_into(std::vector<double>& acc, const std::vector<double>& other) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += other[i];
}

// Pairwise tree reduction in index order. The combine sequence depends only
// on the group count, never on which worker produced which partial.
GroupPartial reduce_partials(std::vector<GroupPartial> parts) {
  while (parts.size() > 1) {
    std::vector<GroupPartial> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
      GroupPartial merged = std::move(parts[i]);
      GroupPartial& rhs = parts[i + 1];
      merged.surrogate += rhs.surrogate;
      merged.kl_sum += rhs.kl_sum;
      merged.positions += rhs.positions;
      merged.clipped += rhs.clipped;
      merged.flags.insert(merged.flags.end(), rhs.flags.begin(),
                          rhs.flags.end());
      if (!merged.grad_surrogate.empty()) {
        add_into(merged.grad_surrogate, rhs.grad_surrogate);
        add_into(merged.grad_kl, rhs.grad_kl);
      }
      next.push_back(std::move(merged));
    }
    if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

LossAndGrad evaluate_batch(const UpdateBatch& batch,
                           const PolicySnapshot& policy,
                           const PolicySnapshot& reference, bool want_grad,
                           int workers) {
  batch.validate();
  const std::size_t param_count = policy.params.size();
  std::vector<GroupPartial> parts(batch.groups.size());
  parallel_for_index(batch.groups.size(), workers, [&](std::size_t g) {
    parts[g] = evaluate_group(batch.groups[g], batch.eps, policy, reference,
                              want_grad, param_count);
  });
  GroupPartial total = reduce_partials(std::move(parts));

  const double inv_groups = 1.0 / static_cast<double>(batch.groups.size());
  const double inv_positions =
      1.0 / static_cast<double>(total.positions);

  LossAndGrad out;
  out.diag.surrogate = total.surrogate * inv_groups;
  out.diag.ref_kl = total.kl_sum * inv_positions;
  out.diag.loss = -out.diag.surrogate + batch.beta * out.diag.ref_kl;
  out.diag.total_tokens = total.positions;
  out.diag.clipped_tokens = total.clipped;
  out.diag.clip_flags = std::move(total.flags);
  if (want_grad) {
    out.grad.assign(param_count, 0.0);
    const double kl_scale = batch.beta * inv_positions;
    for (std::size_t i = 0; i < param_count; ++i) {
      out.grad[i] = -total.grad_surrogate[i] * inv_groups +
                    kl_scale * total.grad_kl[i];
    }
  }
  return out;
}

}  // namespace

double token_ratio(double logp_new, double logp_old) {
  return token_ratio_impl(logp_new, logp_old).ratio;
}

SurrogateDiagnostics clipped_surrogate(const UpdateBatch& batch,
                                       const PolicySnapshot& policy,
                                       const PolicySnapshot& policy_old,
                                       const PolicySnapshot& reference) {
  (void)policy_old;  // ratios use the log-probs frozen into the rollouts
  return evaluate_batch(batch, policy, reference, /*want_grad=*/false, 1)
      .diag;
}

LossAndGrad loss_and_gradient(const UpdateBatch& batch,
                              const PolicySnapshot& policy,
                              const PolicySnapshot& policy_old,
                              const PolicySnapshot& reference, int workers) {
  (void)policy_old;
  return evaluate_batch(batch, policy, reference, /*want_grad=*/true,
                        workers);
}

const char* to_string(LrSchedule schedule) {
  switch (schedule) {
    case LrSchedule::Cosine: return "cosine";
    case LrSchedule::InverseSqrt: return "inverse-sqrt";
  }
  throw std::logic_error("unknown LrSchedule");
}

LrSchedule lr_schedule_from_string(std::string_view name) {
  if (name == "cosine") return LrSchedule::Cosine;
  if (name == "inverse-sqrt") return LrSchedule::InverseSqrt;
  throw ConfigError("unknown lr schedule '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("optimizer peak_lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("need 0 <= beta1 < 1");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("need 0 <= beta2 < 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
}

void OptimizerState::validate_shape(std::size_t param_count) const {
  if (m.size() != param_count || v.size() != param_count) {
    throw std::invalid_argument("optimizer moments do not match parameters");
  }
}

OptimizerState make_optimizer(std::size_t param_count,
                              const OptimizerConfig& config) {
  config.validate();
  OptimizerState s;
  s.config = config;
  s.m.assign(param_count, 0.0);
  s.v.assign(param_count, 0.0);
  return s;
}

double scheduled_lr(const OptimizerConfig& config, double progress,
                    long horizon_updates) {
  switch (config.schedule) {
    case LrSchedule::Cosine: {
      const double p = std::clamp(progress, 0.0, 1.0);
      return config.peak_lr * 0.5 * (1.0 + std::cos(p * 3.14159265358979323846));
    }
    case LrSchedule::InverseSqrt:
      return config.peak_lr /
             std::sqrt(static_cast<double>(std::max<long>(horizon_updates, 1)));
  }
  throw std::logic_error("unknown LrSchedule");
}

double global_norm(std::span<const double> values) {
  double ss = 0.0;
  for (double v : values) ss += v * v;
  return std::sqrt(ss);
}

void apply_update(OptimizerState& opt, std::vector<double> grad,
                  std::span<double> params, double progress,
                  long horizon_updates) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("gradient/parameter shape mismatch");
  }
  opt.validate_shape(params.size());
  const OptimizerConfig& cfg = opt.config;

  const double norm = global_norm(grad);
  if (norm > cfg.grad_clip) {
    const double scale = cfg.grad_clip / norm;
    for (double& g : grad) g *= scale;
  }

  opt.step += 1;
  const double lr = scheduled_lr(cfg, progress, horizon_updates);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * grad[i];
    opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = opt.m[i] / bc1;
    const double v_hat = opt.v[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) +
                       cfg.weight_decay * params[i]);
  }
}

}  // namespace agpo
