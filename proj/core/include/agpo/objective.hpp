#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "agpo/policy.hpp"
#include "agpo/reward_stats.hpp"

namespace agpo {

// One prompt's training group plus the statistics that normalize it.
struct GroupRollouts {
  int prompt_id = 0;
  std::vector<Rollout> rollouts;
  GroupStats stats;  // advantages are per-rollout, broadcast to tokens
};

struct UpdateBatch {
  std::vector<GroupRollouts> groups;
  double eps = 0.2;   // clip radius for this update, constant
  double beta = 0.03; // reference-KL coefficient

  void validate() const;
};

struct SurrogateDiagnostics {
  double loss = 0.0;
  double surrogate = 0.0;  // the maximized clipped term, before negation
  double ref_kl = 0.0;     // exact KL to the reference, position-averaged
  std::size_t total_tokens = 0;
  std::size_t clipped_tokens = 0;
  // Per token in batch order (group, rollout, token): set iff the ratio is
  // outside [1-eps, 1+eps] and the clipped branch attains the min.
  std::vector<std::uint8_t> clip_flags;

  double clip_saturation_pct() const;
};

struct LossAndGrad {
  SurrogateDiagnostics diag;
  std::vector<double> grad;
};

// exp(logp_new - logp_old), with the log-ratio clamped to [-30, 30]. The
// clamp sits far outside every legal clip radius, so it never changes the
// optimized value; it only keeps the arithmetic finite.
double token_ratio(double logp_new, double logp_old);

// Loss of the clipped grouped surrogate with the reference-KL penalty:
// -(mean over groups, rollouts, tokens of min(rho*A, clip(rho)*A))
// + beta * ref_kl. Advantages and eps enter as constants.
SurrogateDiagnostics clipped_surrogate(const UpdateBatch& batch,
                                       const PolicySnapshot& policy,
                                       const PolicySnapshot& policy_old,
                                       const PolicySnapshot& reference);

// Loss plus its exact parameter gradient. Group contributions are computed
// independently (parallelizable) and combined by a fixed-order pairwise
// reduction, so the result is bit-identical for any worker count.
LossAndGrad loss_and_gradient(const UpdateBatch& batch,
                              const PolicySnapshot& policy,
                              const PolicySnapshot& policy_old,
                              const PolicySnapshot& reference,
                              int workers = 1);

enum class LrSchedule { Cosine, InverseSqrt };

const char* to_string(LrSchedule schedule);
LrSchedule lr_schedule_from_string(std::string_view name);

struct OptimizerConfig {
  double peak_lr = 1.5e-5;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global-norm ceiling applied before the moments
  double adam_eps = 1e-8;
  LrSchedule schedule = LrSchedule::Cosine;

  void validate() const;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  long step = 0;

  void validate_shape(std::size_t param_count) const;
};

OptimizerState make_optimizer(std::size_t param_count,
                              const OptimizerConfig& config);

// Cosine: peak * 0.5 * (1 + cos(pi * progress)) with progress in [0, 1].
// Inverse-sqrt: the constant peak / sqrt(horizon_updates).
double scheduled_lr(const OptimizerConfig& config, double progress,
                    long horizon_updates);

double global_norm(std::span<const double> values);

// AdamW step: global-norm clip, bias-corrected moments, decoupled weight
// decay. `progress` is the fraction of the run completed, used by the
// schedule. Mutates params in place.
void apply_update(OptimizerState& opt, std::vector<double> grad,
                  std::span<double> params, double progress,
                  long horizon_updates);

}  // namespace agpo
