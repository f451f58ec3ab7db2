#pragma once

#include <span>

#include "agpo/policy.hpp"

namespace agpo {

struct TokenSample {
  ContextId state_id = 0;
  int action_id = 0;
  double logp_old = 0.0;
  double logp_new = 0.0;
};

// Scalar signals the trainer hands to the controllers each update.
struct PolicyDiagnostics {
  double mean_entropy = 0.0;  // nats, over probe positions
  double step_kl = 0.0;       // drift estimate; may be slightly negative
  double ref_kl = 0.0;        // exact KL to the reference, batch-averaged
  double ln_vocab = 0.0;      // ln |V|, for the entropy normalization toggle
};

// Shannon entropy in nats of a probability vector.
double entropy_nats(std::span<const double> probs);

// KL(p || q) in nats over a shared support.
double kl_nats(std::span<const double> p, std::span<const double> q);

// Mean of (logp_old - logp_new) over the sampled tokens. Detached drift
// signal: never part of any gradient. Callers floor it at 0 before feeding
// the clip controller.
double step_kl_estimate(std::span<const TokenSample> samples);

// Average exact next-token entropy over the given context positions
// (duplicates count once per occurrence), under the untempered policy.
double mean_token_entropy(const PolicySnapshot& policy,
                          std::span<const ContextId> contexts);

// Mean over contexts of exact full-vocabulary KL(policy || reference).
double reference_kl(const PolicySnapshot& policy,
                    const PolicySnapshot& reference,
                    std::span<const ContextId> contexts);

// Adds coeff * d KL(policy(ctx) || reference(ctx)) / d logits into the
// context's gradient row and returns that context's KL value.
double accumulate_reference_kl_gradient(const PolicySnapshot& policy,
                                        const PolicySnapshot& reference,
                                        ContextId ctx, double coeff,
                                        std::span<double> grad);

}  // namespace agpo
