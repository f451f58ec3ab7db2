#pragma once

#include <string>
#include <string_view>
#include <utility>

#include "agpo/kl_entropy.hpp"
#include "agpo/reward_stats.hpp"

namespace agpo {

// Which raw signals the controllers may see. A masked signal contributes 0
// wherever it appears: dispersion, skewness, and vote entropy drop out of
// both the uncertainty score and the clip radius; the step-KL mask affects
// the clip radius only (it never enters the uncertainty score).
struct SignalsMask {
  bool dispersion = true;
  bool skewness = true;
  bool vote_entropy = true;
  bool step_kl = true;
};

// Parses/prints the 4-bit string form, ordered {dispersion, skewness,
// vote entropy, step KL}, e.g. "1011" masks skewness.
SignalsMask signals_mask_from_string(std::string_view bits);
std::string to_string(const SignalsMask& mask);

struct ControllerConfig {
  double tau_base = 1.0;
  double tau_min = 0.5;
  double tau_max = 1.5;
  double lambda = 0.15;  // temperature sensitivity
  double eps_base = 0.2;
  double eps_min = 0.05;
  double eps_max = 0.4;
  // Clip-radius shaping coefficients: dispersion, prev-step KL, probe vote
  // entropy, skewness.
  double alpha = 1.0;
  double gamma = 0.5;
  double delta = 0.2;
  double zeta = 0.05;
  // Uncertainty-score weights: dispersion, vote entropy, skewness.
  double w_r = 1.0;
  double w_e = 1.0;
  double w_k = 0.1;
  double rho_u = 0.95;  // EMA momentum of the uncertainty baseline
  SignalsMask signals_mask{};
  bool entropy_normalized = false;  // divide H by ln|V| in the clip radius
  bool entropy_term_enabled = true;  // false pins the H factor at 1
  bool kl_ema_enabled = false;       // smooth the carried step KL
  double kl_ema_momentum = 0.9;

  void validate() const;
};

struct ControllerState {
  double u_baseline = 0.0;   // EMA of raw uncertainty scores
  double prev_u_raw = 0.0;   // raw score of the previous update
  double prev_step_kl = 0.0; // measured drift of the previous update, >= 0
  double step_kl_ema = 0.0;
  long step_index = 0;
};

struct ControllerSignals {
  double dispersion = 0.0;
  double skew_abs = 0.0;
  double vote_entropy = 0.0;
  double mean_entropy = 0.0;
  double step_kl_used = 0.0;  // the carried value the clip radius consumed
};

struct ControllerOutput {
  double tau = 0.0;
  double eps = 0.0;
  double u_raw = 0.0;
  double u_centered = 0.0;
  ControllerSignals signals;  // raw (unmasked) inputs, logged for replay
};

// U_t = w_r*dispersion + w_e*vote_entropy + w_k*skew_abs, masked terms 0.
double uncertainty_score(const ProbeSignals& stats,
                         const ControllerConfig& cfg);

// Advances the EMA baseline by one update using the previous raw score.
ControllerState update_baseline(const ControllerState& state, double u_prev,
                                const ControllerConfig& cfg);

// tau = clip(tau_base * (1 + lambda * (u_raw - baseline)), tau_min, tau_max).
double adaptive_temperature(double u_raw, const ControllerState& state,
                            const ControllerConfig& cfg);

// eps = clip(eps_base * H * (1 + delta*E) /
//            (1 + alpha*sigma + zeta*|skew| + gamma*kl_prev),
//            eps_min, eps_max),
// where kl_prev is the drift measured after the previous update (optionally
// EMA-smoothed) and masked signals contribute 0 in their slots.
double adaptive_epsilon(const PolicyDiagnostics& diag,
                        const ProbeSignals& stats,
                        const ControllerState& state,
                        const ControllerConfig& cfg);

// One update's controller pass: advances the baseline, scores the probe
// batch, and emits both scalars. Pure given its inputs.
std::pair<ControllerOutput, ControllerState> controller_step(
    const ProbeSignals& stats, const PolicyDiagnostics& diag,
    const ControllerState& state, const ControllerConfig& cfg);

// Stores the drift measured after an optimizer step, floored at 0, for the
// next update's clip radius.
void record_step_kl(ControllerState& state, double raw_step_kl,
                    const ControllerConfig& cfg);

}  // namespace agpo
