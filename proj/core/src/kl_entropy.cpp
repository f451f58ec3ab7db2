#include "agpo/kl_entropy.hpp"

#include <cmath>
#include <stdexcept>

namespace agpo {

double entropy_nats(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double kl_nats(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_nats: mismatched supports");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

double step_kl_estimate(std::span<const TokenSample> samples) {
  if (samples.empty()) {
    throw std::invalid_argument("step_kl_estimate: empty minibatch");
  }
  double acc = 0.0;
  for (const TokenSample& s : samples) acc += s.logp_old - s.logp_new;
  return acc / static_cast<double>(samples.size());
}

double mean_token_entropy(const PolicySnapshot& policy,
                          std::span<const ContextId> contexts) {
  if (contexts.empty()) return 0.0;
  double acc = 0.0;
  for (ContextId ctx : contexts) {
    acc += entropy_nats(next_token_distribution(policy, ctx));
  }
  return acc / static_cast<double>(contexts.size());
}

double reference_kl(const PolicySnapshot& policy,
                    const PolicySnapshot& reference,
                    std::span<const ContextId> contexts) {
  if (contexts.empty()) return 0.0;
  double acc = 0.0;
  for (ContextId ctx : contexts) {
    acc += kl_nats(next_token_distribution(policy, ctx),
                   next_token_distribution(reference, ctx));
  }
  return acc / static_cast<double>(contexts.size());
}

double accumulate_reference_kl_gradient(const PolicySnapshot& policy,
                                        const PolicySnapshot& reference,
                                        ContextId ctx, double coeff,
                                        std::span<double> grad) {
  const std::vector<double> p = next_token_distribution(policy, ctx);
  const std::vector<double> q = next_token_distribution(reference, ctx);
  double kl = 0.0;
  std::vector<double> log_ratio(p.size(), 0.0);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) {
      log_ratio[j] = std::log(p[j]) - std::log(q[j]);
      kl += p[j] * log_ratio[j];
    }
  }
  // d KL / d logit_k = p_k * (log(p_k/q_k) - KL); follows from the softmax
  // Jacobian with q held fixed.
  const std::size_t row = static_cast<std::size_t>(ctx) *
                          static_cast<std::size_t>(policy.vocab_size);
  for (std::size_t j = 0; j < p.size(); ++j) {
    grad[row + j] += coeff * p[j] * (log_ratio[j] - kl);
  }
  return kl;
}

}  // namespace agpo
