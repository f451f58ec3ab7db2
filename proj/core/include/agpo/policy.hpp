#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "agpo/rng.hpp"

namespace agpo {

using ContextId = std::uint32_t;

enum class Phase { Probe, Train, Eval };

const char* to_string(Phase phase);

// Context-windowed logit table: the policy conditions on the last
// `context_order` tokens (positions before the sequence start read as a
// virtual pad symbol) and maps each such context to a dense row of logits
// over the vocabulary. Exactly differentiable, exact softmax everywhere.
struct PolicySnapshot {
  int vocab_size = 0;
  int context_order = 2;
  int max_len = 0;  // generated-token cap per episode
  std::vector<double> params;  // row-major [num_contexts x vocab_size] logits

  int pad_token() const { return vocab_size; }
  std::size_t num_contexts() const;
  std::span<const double> logits_at(ContextId ctx) const;
  std::span<double> logits_at(ContextId ctx);

  void validate() const;
};

// Zero-initialized (uniform) policy.
PolicySnapshot make_policy(int vocab_size, int context_order, int max_len);

// Rolling encoder of the last `context_order` tokens into a ContextId.
// Starts from the all-pad context; push() is O(1).
class ContextWindow {
 public:
  explicit ContextWindow(const PolicySnapshot& policy);
  void push(int token);
  ContextId id() const { return id_; }

 private:
  std::uint64_t base_;
  std::uint64_t wrap_;  // base^(order-1)
  ContextId id_;
};

// Context reached after consuming `history` from the start state.
ContextId context_from_history(const PolicySnapshot& policy,
                               std::span<const int> history);

struct SamplerConfig {
  double temperature = 1.0;
  double nucleus_p = 0.95;
};

struct Rollout {
  std::string id;  // audit tag, assigned by the trainer
  int prompt_id = 0;
  Phase phase = Phase::Train;
  std::vector<int> prompt_tokens;
  std::vector<int> token_ids;              // generated tokens, eos included
  std::vector<ContextId> context_ids;      // context preceding each token
  std::vector<double> logp_old_per_token;  // untempered log-probs at collection
  std::string answer;                      // canonical, filled by the task layer
  int token_count = 0;                     // generated tokens only
};

// Exact next-token distribution (softmax of the context's logit row).
std::vector<double> next_token_distribution(const PolicySnapshot& policy,
                                            ContextId ctx);

// Autoregressive sampling. Logits are divided by temperature, softmaxed,
// truncated to the smallest prefix (descending probability, ties by
// ascending token index) whose mass reaches nucleus_p, renormalized, and
// sampled by inverse CDF. The recorded per-token log-probs are taken from
// the untempered, untruncated policy: shaping affects data collection only.
Rollout sample_rollout(const PolicySnapshot& policy, int prompt_id,
                       std::span<const int> prompt_tokens,
                       const SamplerConfig& sampler, int eos_token,
                       SplitMix64& stream);

// Deterministic argmax decoding (ties broken by lowest token index).
Rollout greedy_rollout(const PolicySnapshot& policy, int prompt_id,
                       std::span<const int> prompt_tokens, int eos_token);

// Per-token log-probs of the rollout's generated tokens under `policy`.
std::vector<double> logprob_sequence(const PolicySnapshot& policy,
                                     const Rollout& rollout);

// grad[ctx row] += coeff * d log softmax(logits)[token] / d logits.
void accumulate_logprob_gradient(const PolicySnapshot& policy, ContextId ctx,
                                 int token, double coeff,
                                 std::span<double> grad);

// Checkpoint round trip: 8-byte magic, JSON header, raw little-endian
// float64 parameter array. Byte-identical across save/load.
void save_policy(const PolicySnapshot& policy,
                 const std::filesystem::path& path);
PolicySnapshot load_policy(const std::filesystem::path& path);

}  // namespace agpo
