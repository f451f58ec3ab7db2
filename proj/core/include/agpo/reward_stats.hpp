#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace agpo {

// Estimator used for the group dispersion sigma_hat. The chosen mode is
// substituted uniformly: advantages, the skew guard, and the controller
// signals all see the same value.
enum class DispersionMode { Std, Mad, Iqr };

const char* to_string(DispersionMode mode);
DispersionMode dispersion_mode_from_string(std::string_view name);

struct StatsConstants {
  double eps_a = 1e-8;      // additive guard in the advantage denominator
  double sigma_min = 1e-6;  // dispersion below this zeroes the skew estimate
  double kappa_max = 10.0;  // symmetric clip on the skew estimate

  void validate() const;  // throws ConfigError unless all strictly positive
};

// One prompt's G rollout outcomes. Answers are already canonical and run
// parallel to rewards.
struct RewardGroup {
  std::vector<double> rewards;
  std::vector<std::string> answers;

  void validate() const;
};

struct GroupStats {
  double mean = 0.0;
  double dispersion = 0.0;    // sigma_hat, always >= 0
  double skew_guarded = 0.0;  // in [-kappa_max, kappa_max]
  double vote_entropy = 0.0;  // nats, in [0, ln G]
  std::vector<double> advantages;
};

// Per-update controller inputs: group statistics arithmetic-averaged over
// the update's prompt groups. Skew enters as a magnitude, so the average is
// taken over per-group absolute values.
struct ProbeSignals {
  double dispersion = 0.0;
  double skew_abs = 0.0;
  double vote_entropy = 0.0;
};

// Mean and Bessel-corrected sample std. Length must be >= 2.
std::pair<double, double> compute_mean_std(std::span<const double> rewards);

// sigma_hat under the requested mode: sample std, 1.4826 * MAD, or
// IQR / 1.349 with linear-interpolation quantiles. Length must be >= 2.
double compute_dispersion(std::span<const double> rewards, DispersionMode mode);

// Adjusted Fisher-Pearson sample skewness, zeroed when the active-mode
// dispersion falls below sigma_min and clipped to [-kappa_max, kappa_max].
double compute_skew_guarded(std::span<const double> rewards, double dispersion,
                            const StatsConstants& consts);

// A_i = (r_i - mean) / (dispersion + eps_a). A group of identical rewards
// yields exact zeros regardless of mode.
std::vector<double> compute_advantages(std::span<const double> rewards,
                                       double mean, double dispersion,
                                       const StatsConstants& consts);

// Shannon entropy in nats of the empirical answer histogram.
double compute_vote_entropy(std::span<const std::string> answers);

GroupStats compute_group_stats(const RewardGroup& group, DispersionMode mode,
                               const StatsConstants& consts);

ProbeSignals aggregate_signals(std::span<const GroupStats> groups);

// Quantile with linear interpolation between order statistics on a sorted
// input ("type 7"). Exposed because the dispersion tests oracle against it.
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace agpo
