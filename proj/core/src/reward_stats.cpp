#include "agpo/reward_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>

#include "agpo/errors.hpp"

namespace agpo {

const char* to_string(DispersionMode mode) {
  switch (mode) {
    case DispersionMode::Std: return "std";
    case DispersionMode::Mad: return "mad";
    case DispersionMode::Iqr: return "iqr";
  }
  throw std::logic_error("unknown DispersionMode");
}

DispersionMode dispersion_mode_from_string(std::string_view name) {
  if (name == "std") return DispersionMode::Std;
  if (name == "mad") return DispersionMode::Mad;
  if (name == "iqr") return DispersionMode::Iqr;
  throw ConfigError("unknown dispersion mode '" + std::string(name) +
                    "' (expected std, mad, or iqr)");
}

void StatsConstants::validate() const {
  if (!(eps_a > 0.0)) throw ConfigError("stats.eps_a must be > 0");
  if (!(sigma_min > 0.0)) throw ConfigError("stats.sigma_min must be > 0");
  if (!(kappa_max > 0.0)) throw ConfigError("stats.kappa_max must be > 0");
}

void RewardGroup::validate() const {
  if (rewards.size() < 2) {
    throw std::invalid_argument("reward group needs at least 2 rollouts");
  }
  if (answers.size() != rewards.size()) {
    throw std::invalid_argument("answers must run parallel to rewards");
  }
  for (double r : rewards) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw std::invalid_argument("rewards must lie in [0, 1]");
    }
  }
}

std::pair<double, double> compute_mean_std(std::span<const double> rewards) {
  const std::size_t n = rewards.size();
  if (n < 2) throw std::invalid_argument("compute_mean_std: group too small");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double r : rewards) {
    const double d = r - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / static_cast<double>(n - 1))};
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty span");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

namespace {

double median_sorted(std::span<const double> sorted) {
  return quantile_sorted(sorted, 0.5);
}

}  // namespace

double compute_dispersion(std::span<const double> rewards,
                          DispersionMode mode) {
  const std::size_t n = rewards.size();
  if (n < 2) throw std::invalid_argument("compute_dispersion: group too small");
  switch (mode) {
    case DispersionMode::Std:
      return compute_mean_std(rewards).second;
    case DispersionMode::Mad: {
      std::vector<double> buf(rewards.begin(), rewards.end());
      std::sort(buf.begin(), buf.end());
      const double med = median_sorted(buf);
      for (double& x : buf) x = std::abs(x - med);
      std::sort(buf.begin(), buf.end());
      // 1.4826 = 1 / Phi^{-1}(0.75): consistent with std under normality.
      return 1.4826 * median_sorted(buf);
    }
    case DispersionMode::Iqr: {
      std::vector<double> buf(rewards.begin(), rewards.end());
      std::sort(buf.begin(), buf.end());
      const double iqr =
          quantile_sorted(buf, 0.75) - quantile_sorted(buf, 0.25);
      return iqr / 1.349;
    }
  }
  throw std::logic_error("unknown DispersionMode");
}

double compute_skew_guarded(std::span<const double> rewards, double dispersion,
                            const StatsConstants& consts) {
  if (dispersion < consts.sigma_min) return 0.0;
  const std::size_t n = rewards.size();
  // The adjusted Fisher-Pearson correction factor needs n >= 3.
  if (n < 3) return 0.0;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0;
  for (double r : rewards) {
    const double d = r - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  if (m2 <= 0.0) return 0.0;
  const double nd = static_cast<double>(n);
  const double g1 = m3 / std::pow(m2, 1.5);
  const double skew = std::sqrt(nd * (nd - 1.0)) / (nd - 2.0) * g1;
  return std::clamp(skew, -consts.kappa_max, consts.kappa_max);
}

std::vector<double> compute_advantages(std::span<const double> rewards,
                                       double mean, double dispersion,
                                       const StatsConstants& consts) {
  std::vector<double> adv(rewards.size(), 0.0);
  const bool all_equal =
      std::all_of(rewards.begin(), rewards.end(),
                  [&](double r) { return r == rewards.front(); });
  if (all_equal) return adv;  // exact zeros, no rounding residue
  const double denom = dispersion + consts.eps_a;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    adv[i] = (rewards[i] - mean) / denom;
  }
  return adv;
}

double compute_vote_entropy(std::span<const std::string> answers) {
  if (answers.empty()) {
    throw std::invalid_argument("compute_vote_entropy: no answers");
  }
  std::map<std::string_view, std::size_t> counts;
  for (const std::string& a : answers) ++counts[a];
  const double n = static_cast<double>(answers.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

GroupStats compute_group_stats(const RewardGroup& group, DispersionMode mode,
                               const StatsConstants& consts) {
  group.validate();
  consts.validate();
  GroupStats out;
  out.mean = compute_mean_std(group.rewards).first;
  out.dispersion = compute_dispersion(group.rewards, mode);
  out.skew_guarded = compute_skew_guarded(group.rewards, out.dispersion, consts);
  out.vote_entropy = compute_vote_entropy(group.answers);
  out.advantages =
      compute_advantages(group.rewards, out.mean, out.dispersion, consts);
  return out;
}

ProbeSignals aggregate_signals(std::span<const GroupStats> groups) {
  if (groups.empty()) {
    throw std::invalid_argument("aggregate_signals: no groups");
  }
  ProbeSignals s;
  for (const GroupStats& g : groups) {
    s.dispersion += g.dispersion;
    s.skew_abs += std::abs(g.skew_guarded);
    s.vote_entropy += g.vote_entropy;
  }
  const double n = static_cast<double>(groups.size());
  s.dispersion /= n;
  s.skew_abs /= n;
  s.vote_entropy /= n;
  return s;
}

}  // namespace agpo
