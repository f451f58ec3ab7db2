#include "agpo/controllers.hpp"

#include <algorithm>
#include <cmath>

#include "agpo/errors.hpp"

namespace agpo {

SignalsMask signals_mask_from_string(std::string_view bits) {
  if (bits.size() != 4 ||
      bits.find_first_not_of("01") != std::string_view::npos) {
    throw ConfigError("signals mask must be 4 bits of 0/1, got '" +
                      std::string(bits) + "'");
  }
  SignalsMask m;
  m.dispersion = bits[0] == '1';
  m.skewness = bits[1] == '1';
  m.vote_entropy = bits[2] == '1';
  m.step_kl = bits[3] == '1';
  return m;
}

std::string to_string(const SignalsMask& mask) {
  std::string s(4, '0');
  s[0] = mask.dispersion ? '1' : '0';
  s[1] = mask.skewness ? '1' : '0';
  s[2] = mask.vote_entropy ? '1' : '0';
  s[3] = mask.step_kl ? '1' : '0';
  return s;
}

void ControllerConfig::validate() const {
  if (!(tau_min > 0.0 && tau_min <= tau_base && tau_base <= tau_max)) {
    throw ConfigError("need 0 < tau_min <= tau_base <= tau_max");
  }
  if (!(eps_min > 0.0 && eps_min <= eps_base && eps_base <= eps_max)) {
    throw ConfigError("need 0 < eps_min <= eps_base <= eps_max");
  }
  for (double w : {alpha, gamma, delta, zeta, w_r, w_e, w_k, lambda}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("controller weights must be finite and >= 0");
    }
  }
  if (!(rho_u >= 0.0 && rho_u < 1.0)) {
    throw ConfigError("need 0 <= rho_u < 1");
  }
  if (!(kl_ema_momentum >= 0.0 && kl_ema_momentum < 1.0)) {
    throw ConfigError("need 0 <= kl_ema_momentum < 1");
  }
}

double uncertainty_score(const ProbeSignals& stats,
                         const ControllerConfig& cfg) {
  const SignalsMask& m = cfg.signals_mask;
  double u = 0.0;
  if (m.dispersion) u += cfg.w_r * stats.dispersion;
  if (m.vote_entropy) u += cfg.w_e * stats.vote_entropy;
  if (m.skewness) u += cfg.w_k * stats.skew_abs;
  return u;
}

ControllerState update_baseline(const ControllerState& state, double u_prev,
                                const ControllerConfig& cfg) {
  ControllerState next = state;
  next.u_baseline = cfg.rho_u * state.u_baseline + (1.0 - cfg.rho_u) * u_prev;
  return next;
}

double adaptive_temperature(double u_raw, const ControllerState& state,
                            const ControllerConfig& cfg) {
  const double centered = u_raw - state.u_baseline;
  const double raw = cfg.tau_base * (1.0 + cfg.lambda * centered);
  return std::clamp(raw, cfg.tau_min, cfg.tau_max);
}

double adaptive_epsilon(const PolicyDiagnostics& diag,
                        const ProbeSignals& stats,
                        const ControllerState& state,
                        const ControllerConfig& cfg) {
  const SignalsMask& m = cfg.signals_mask;
  double h = 1.0;
  if (cfg.entropy_term_enabled) {
    h = diag.mean_entropy;
    if (cfg.entropy_normalized && diag.ln_vocab > 0.0) h /= diag.ln_vocab;
  }
  const double entropy_boost =
      m.vote_entropy ? cfg.delta * stats.vote_entropy : 0.0;
  const double kl_used =
      cfg.kl_ema_enabled ? state.step_kl_ema : state.prev_step_kl;
  double damp = 1.0;
  if (m.dispersion) damp += cfg.alpha * stats.dispersion;
  if (m.skewness) damp += cfg.zeta * stats.skew_abs;
  if (m.step_kl) damp += cfg.gamma * kl_used;
  const double raw = cfg.eps_base * h * (1.0 + entropy_boost) / damp;
  return std::clamp(raw, cfg.eps_min, cfg.eps_max);
}

std::pair<ControllerOutput, ControllerState> controller_step(
    const ProbeSignals& stats, const PolicyDiagnostics& diag,
    const ControllerState& state, const ControllerConfig& cfg) {
  // Baseline first: it averages raw scores of past updates only, so the
  // current score is centered against data strictly older than itself.
  ControllerState next = update_baseline(state, state.prev_u_raw, cfg);
  ControllerOutput out;
  out.u_raw = uncertainty_score(stats, cfg);
  out.u_centered = out.u_raw - next.u_baseline;
  out.tau = adaptive_temperature(out.u_raw, next, cfg);
  out.eps = adaptive_epsilon(diag, stats, next, cfg);
  out.signals.dispersion = stats.dispersion;
  out.signals.skew_abs = stats.skew_abs;
  out.signals.vote_entropy = stats.vote_entropy;
  out.signals.mean_entropy = diag.mean_entropy;
  out.signals.step_kl_used =
      cfg.kl_ema_enabled ? next.step_kl_ema : next.prev_step_kl;
  next.prev_u_raw = out.u_raw;
  next.step_index = state.step_index + 1;
  return {out, next};
}

void record_step_kl(ControllerState& state, double raw_step_kl,
                    const ControllerConfig& cfg) {
  const double floored = std::max(raw_step_kl, 0.0);
  state.prev_step_kl = floored;
  state.step_kl_ema =
      cfg.kl_ema_momentum * state.step_kl_ema +
      (1.0 - cfg.kl_ema_momentum) * floored;
}

}  // namespace agpo
