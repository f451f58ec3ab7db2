#include "agpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "agpo/errors.hpp"

namespace agpo {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Probe: return "probe";
    case Phase::Train: return "train";
    case Phase::Eval: return "eval";
  }
  throw std::logic_error("unknown Phase");
}

std::size_t PolicySnapshot::num_contexts() const {
  std::size_t n = 1;
  for (int i = 0; i < context_order; ++i) {
    n *= static_cast<std::size_t>(vocab_size + 1);
  }
  return n;
}

std::span<const double> PolicySnapshot::logits_at(ContextId ctx) const {
  const std::size_t row = static_cast<std::size_t>(ctx) *
                          static_cast<std::size_t>(vocab_size);
  return {params.data() + row, static_cast<std::size_t>(vocab_size)};
}

std::span<double> PolicySnapshot::logits_at(ContextId ctx) {
  const std::size_t row = static_cast<std::size_t>(ctx) *
                          static_cast<std::size_t>(vocab_size);
  return {params.data() + row, static_cast<std::size_t>(vocab_size)};
}

void PolicySnapshot::validate() const {
  if (vocab_size < 2) throw ConfigError("policy vocab_size must be >= 2");
  if (context_order < 1) throw ConfigError("policy context_order must be >= 1");
  if (max_len < 1) throw ConfigError("policy max_len must be >= 1");
  std::size_t n = 1;
  for (int i = 0; i < context_order; ++i) {
    n *= static_cast<std::size_t>(vocab_size + 1);
    if (n > (1u << 30)) throw ConfigError("policy context table too large");
  }
  if (params.size() != n * static_cast<std::size_t>(vocab_size)) {
    throw std::invalid_argument("policy parameter table has the wrong size");
  }
  for (double p : params) {
    if (!std::isfinite(p)) {
      throw std::invalid_argument("policy logits must be finite");
    }
  }
}

PolicySnapshot make_policy(int vocab_size, int context_order, int max_len) {
  PolicySnapshot p;
  p.vocab_size = vocab_size;
  p.context_order = context_order;
  p.max_len = max_len;
  if (vocab_size < 2) throw ConfigError("policy vocab_size must be >= 2");
  if (context_order < 1) throw ConfigError("policy context_order must be >= 1");
  if (max_len < 1) throw ConfigError("policy max_len must be >= 1");
  p.params.assign(p.num_contexts() * static_cast<std::size_t>(vocab_size), 0.0);
  p.validate();
  return p;
}

ContextWindow::ContextWindow(const PolicySnapshot& policy)
    : base_(static_cast<std::uint64_t>(policy.vocab_size + 1)), wrap_(1) {
  for (int i = 0; i + 1 < policy.context_order; ++i) wrap_ *= base_;
  // All-pad start context: pad in every window slot.
  std::uint64_t id = 0;
  std::uint64_t digit = 1;
  for (int i = 0; i < policy.context_order; ++i) {
    id += static_cast<std::uint64_t>(policy.vocab_size) * digit;
    digit *= base_;
  }
  id_ = static_cast<ContextId>(id);
}

void ContextWindow::push(int token) {
  const std::uint64_t kept = static_cast<std::uint64_t>(id_) % wrap_;
  id_ = static_cast<ContextId>(kept * base_ + static_cast<std::uint64_t>(token));
}

ContextId context_from_history(const PolicySnapshot& policy,
                               std::span<const int> history) {
  ContextWindow w(policy);
  for (int t : history) w.push(t);
  return w.id();
}

namespace {

struct RowDistribution {
  std::vector<double> probs;
  double log_z = 0.0;  // log partition of the raw (untempered) logits
  double max_logit = 0.0;
};

RowDistribution softmax_row(std::span<const double> logits,
                            double temperature = 1.0) {
  RowDistribution out;
  out.max_logit = *std::max_element(logits.begin(), logits.end());
  out.probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp((logits[i] - out.max_logit) / temperature);
    z += out.probs[i];
  }
  for (double& p : out.probs) p /= z;
  out.log_z = out.max_logit + std::log(z);  // exact only for temperature 1
  return out;
}

double log_prob_of(std::span<const double> logits, int token) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  return logits[static_cast<std::size_t>(token)] - m - std::log(z);
}

// Token order used for nucleus truncation and inverse-CDF sampling:
// descending probability, ties by ascending token index. A strict total
// order, so the layout never depends on sort internals.
std::vector<int> nucleus_order(std::span<const double> probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double pa = probs[static_cast<std::size_t>(a)];
    const double pb = probs[static_cast<std::size_t>(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  });
  return order;
}

int sample_nucleus(std::span<const double> probs, double nucleus_p,
                   SplitMix64& stream) {
  const std::vector<int> order = nucleus_order(probs);
  std::size_t keep = 0;
  double mass = 0.0;
  for (; keep < order.size(); ++keep) {
    mass += probs[static_cast<std::size_t>(order[keep])];
    if (mass >= nucleus_p) {
      ++keep;
      break;
    }
  }
  if (keep == 0 || keep > order.size()) keep = order.size();
  const double x = stream.next_double() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += probs[static_cast<std::size_t>(order[i])];
    if (x < acc) return order[i];
  }
  return order[keep - 1];
}

}  // namespace

std::vector<double> next_token_distribution(const PolicySnapshot& policy,
                                            ContextId ctx) {
  return softmax_row(policy.logits_at(ctx)).probs;
}

Rollout sample_rollout(const PolicySnapshot& policy, int prompt_id,
                       std::span<const int> prompt_tokens,
                       const SamplerConfig& sampler, int eos_token,
                       SplitMix64& stream) {
  if (!(sampler.temperature > 0.0)) {
    throw std::invalid_argument("sampling temperature must be > 0");
  }
  if (!(sampler.nucleus_p > 0.0 && sampler.nucleus_p <= 1.0)) {
    throw std::invalid_argument("nucleus_p must lie in (0, 1]");
  }
  Rollout r;
  r.prompt_id = prompt_id;
  r.prompt_tokens.assign(prompt_tokens.begin(), prompt_tokens.end());
  ContextWindow w(policy);
  for (int t : prompt_tokens) w.push(t);
  for (int step = 0; step < policy.max_len; ++step) {
    const ContextId ctx = w.id();
    const std::span<const double> logits = policy.logits_at(ctx);
    const RowDistribution shaped = softmax_row(logits, sampler.temperature);
    const int tok = sample_nucleus(shaped.probs, sampler.nucleus_p, stream);
    r.context_ids.push_back(ctx);
    r.token_ids.push_back(tok);
    r.logp_old_per_token.push_back(log_prob_of(logits, tok));
    w.push(tok);
    if (tok == eos_token) break;
  }
  r.token_count = static_cast<int>(r.token_ids.size());
  return r;
}

Rollout greedy_rollout(const PolicySnapshot& policy, int prompt_id,
                       std::span<const int> prompt_tokens, int eos_token) {
  Rollout r;
  r.prompt_id = prompt_id;
  r.phase = Phase::Eval;
  r.prompt_tokens.assign(prompt_tokens.begin(), prompt_tokens.end());
  ContextWindow w(policy);
  for (int t : prompt_tokens) w.push(t);
  for (int step = 0; step < policy.max_len; ++step) {
    const ContextId ctx = w.id();
    const std::span<const double> logits = policy.logits_at(ctx);
    int tok = 0;
    for (int j = 1; j < policy.vocab_size; ++j) {
      if (logits[static_cast<std::size_t>(j)] >
          logits[static_cast<std::size_t>(tok)]) {
        tok = j;
      }
    }
    r.context_ids.push_back(ctx);
    r.token_ids.push_back(tok);
    r.logp_old_per_token.push_back(log_prob_of(logits, tok));
    w.push(tok);
    if (tok == eos_token) break;
  }
  r.token_count = static_cast<int>(r.token_ids.size());
  return r;
}

std::vector<double> logprob_sequence(const PolicySnapshot& policy,
                                     const Rollout& rollout) {
  std::vector<double> out;
  out.reserve(rollout.token_ids.size());
  if (rollout.context_ids.size() != rollout.token_ids.size()) {
    throw std::invalid_argument("rollout context/token lists out of sync");
  }
  for (std::size_t i = 0; i < rollout.token_ids.size(); ++i) {
    const int tok = rollout.token_ids[i];
    if (tok < 0 || tok >= policy.vocab_size) {
      throw std::out_of_range("rollout token outside vocabulary");
    }
    out.push_back(log_prob_of(policy.logits_at(rollout.context_ids[i]), tok));
  }
  return out;
}

void accumulate_logprob_gradient(const PolicySnapshot& policy, ContextId ctx,
                                 int token, double coeff,
                                 std::span<double> grad) {
  const std::vector<double> p = next_token_distribution(policy, ctx);
  const std::size_t row = static_cast<std::size_t>(ctx) *
                          static_cast<std::size_t>(policy.vocab_size);
  for (int j = 0; j < policy.vocab_size; ++j) {
    const double indicator = (j == token) ? 1.0 : 0.0;
    grad[row + static_cast<std::size_t>(j)] +=
        coeff * (indicator - p[static_cast<std::size_t>(j)]);
  }
}

namespace {
constexpr char kCheckpointMagic[8] = {'A', 'G', 'P', 'O',
                                      'P', 'O', 'L', '1'};
}

void save_policy(const PolicySnapshot& policy,
                 const std::filesystem::path& path) {
  policy.validate();
  nlohmann::json header = {
      {"context_order", policy.context_order},
      {"max_len", policy.max_len},
      {"param_count", policy.params.size()},
      {"vocab_size", policy.vocab_size},
  };
  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open checkpoint for writing: " +
                             path.string());
  }
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));
  out.write(reinterpret_cast<const char*>(policy.params.data()),
            static_cast<std::streamsize>(policy.params.size() *
                                         sizeof(double)));
  if (!out) {
    throw std::runtime_error("checkpoint write failed: " + path.string());
  }
}

PolicySnapshot load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint: " + path.string());
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a policy checkpoint: " + path.string());
  }
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 20)) {
    throw std::runtime_error("corrupt checkpoint header: " + path.string());
  }
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  const nlohmann::json header = nlohmann::json::parse(header_text);
  PolicySnapshot p;
  p.vocab_size = header.at("vocab_size").get<int>();
  p.context_order = header.at("context_order").get<int>();
  p.max_len = header.at("max_len").get<int>();
  const std::size_t count = header.at("param_count").get<std::size_t>();
  p.params.resize(count);
  in.read(reinterpret_cast<char*>(p.params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) {
    throw std::runtime_error("truncated checkpoint: " + path.string());
  }
  p.validate();
  return p;
}

}  // namespace agpo
