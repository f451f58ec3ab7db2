#include "agpo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "agpo/errors.hpp"
#include "json_io.hpp"

namespace agpo {

namespace {

using nlohmann::json;

// Tracks which keys a parser consumed so leftovers can be rejected with
// their full path. Config typos should fail loudly, not silently default.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where)
      : obj_(obj), where_(std::move(where)) {
    if (!obj.is_object()) {
      throw ConfigError(where_ + " must be a JSON object");
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  void read_string(const char* key, std::string& out) { read(key, out); }

  const json* peek(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.contains(item.key())) {
        throw ConfigError("unknown config key " + where_ + "." + item.key());
      }
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

StatsConstants stats_from_json(const json& j, const std::string& where) {
  StatsConstants s;
  ObjectReader r(j, where);
  r.read("eps_a", s.eps_a);
  r.read("sigma_min", s.sigma_min);
  r.read("kappa_max", s.kappa_max);
  r.finish();
  return s;
}

json stats_to_json(const StatsConstants& s) {
  return json{{"eps_a", s.eps_a},
              {"sigma_min", s.sigma_min},
              {"kappa_max", s.kappa_max}};
}

ControllerConfig controller_from_json(const json& j,
                                      const std::string& where) {
  ControllerConfig c;
  ObjectReader r(j, where);
  r.read("tau_base", c.tau_base);
  r.read("tau_min", c.tau_min);
  r.read("tau_max", c.tau_max);
  r.read("lambda", c.lambda);
  r.read("eps_base", c.eps_base);
  r.read("eps_min", c.eps_min);
  r.read("eps_max", c.eps_max);
  r.read("alpha", c.alpha);
  r.read("gamma", c.gamma);
  r.read("delta", c.delta);
  r.read("zeta", c.zeta);
  r.read("w_r", c.w_r);
  r.read("w_e", c.w_e);
  r.read("w_k", c.w_k);
  r.read("rho_u", c.rho_u);
  std::string mask = to_string(c.signals_mask);
  r.read_string("signals_mask", mask);
  c.signals_mask = signals_mask_from_string(mask);
  r.read("entropy_normalized", c.entropy_normalized);
  r.read("entropy_term_enabled", c.entropy_term_enabled);
  r.read("kl_ema_enabled", c.kl_ema_enabled);
  r.read("kl_ema_momentum", c.kl_ema_momentum);
  r.finish();
  return c;
}

json controller_to_json(const ControllerConfig& c) {
  return json{{"tau_base", c.tau_base},
              {"tau_min", c.tau_min},
              {"tau_max", c.tau_max},
              {"lambda", c.lambda},
              {"eps_base", c.eps_base},
              {"eps_min", c.eps_min},
              {"eps_max", c.eps_max},
              {"alpha", c.alpha},
              {"gamma", c.gamma},
              {"delta", c.delta},
              {"zeta", c.zeta},
              {"w_r", c.w_r},
              {"w_e", c.w_e},
              {"w_k", c.w_k},
              {"rho_u", c.rho_u},
              {"signals_mask", to_string(c.signals_mask)},
              {"entropy_normalized", c.entropy_normalized},
              {"entropy_term_enabled", c.entropy_term_enabled},
              {"kl_ema_enabled", c.kl_ema_enabled},
              {"kl_ema_momentum", c.kl_ema_momentum}};
}

OptimizerConfig optimizer_from_json(const json& j, const std::string& where) {
  OptimizerConfig o;
  ObjectReader r(j, where);
  r.read("peak_lr", o.peak_lr);
  r.read("beta1", o.beta1);
  r.read("beta2", o.beta2);
  r.read("weight_decay", o.weight_decay);
  r.read("grad_clip", o.grad_clip);
  r.read("adam_eps", o.adam_eps);
  std::string schedule = to_string(o.schedule);
  r.read_string("schedule", schedule);
  o.schedule = lr_schedule_from_string(schedule);
  r.finish();
  return o;
}

json optimizer_to_json(const OptimizerConfig& o) {
  return json{{"peak_lr", o.peak_lr},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"weight_decay", o.weight_decay},
              {"grad_clip", o.grad_clip},
              {"adam_eps", o.adam_eps},
              {"schedule", to_string(o.schedule)}};
}

TaskSpec task_from_json(const json& j, const std::string& where) {
  TaskSpec t;
  ObjectReader r(j, where);
  std::string kind = to_string(t.kind);
  r.read_string("kind", kind);
  t.kind = task_kind_from_string(kind);
  r.read("difficulty", t.difficulty);
  r.read("prompt_count", t.prompt_count);
  r.read("eval_count", t.eval_count);
  r.read("partial_credit", t.partial_credit);
  r.finish();
  return t;
}

json task_to_json(const TaskSpec& t) {
  return json{{"kind", to_string(t.kind)},
              {"difficulty", t.difficulty},
              {"prompt_count", t.prompt_count},
              {"eval_count", t.eval_count},
              {"partial_credit", t.partial_credit}};
}

}  // namespace

namespace detail {

RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::string& where) {
  RunConfig cfg;
  ObjectReader r(j, where);
  std::string method = to_string(cfg.method);
  r.read_string("method", method);
  cfg.method = method_from_string(method);
  r.read("group_size", cfg.group_size);
  r.read("prompts_per_update", cfg.prompts_per_update);
  r.read("token_budget", cfg.token_budget);
  r.read("seeds", cfg.seeds);
  r.read("eval_every", cfg.eval_every);
  r.read("workers", cfg.workers);
  r.read("context_order", cfg.context_order);
  r.read("nucleus_p", cfg.nucleus_p);
  r.read("beta", cfg.beta);
  std::string mode = to_string(cfg.dispersion_mode);
  r.read_string("dispersion_mode", mode);
  cfg.dispersion_mode = dispersion_mode_from_string(mode);
  if (const nlohmann::json* sub = r.peek("stats")) {
    cfg.stats = stats_from_json(*sub, where + ".stats");
  }
  if (const nlohmann::json* sub = r.peek("controller")) {
    cfg.controller = controller_from_json(*sub, where + ".controller");
  }
  if (const nlohmann::json* sub = r.peek("optimizer")) {
    cfg.optimizer = optimizer_from_json(*sub, where + ".optimizer");
  }
  if (const nlohmann::json* sub = r.peek("task")) {
    cfg.task = task_from_json(*sub, where + ".task");
  }
  r.finish();
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return nlohmann::json{{"method", to_string(cfg.method)},
                        {"group_size", cfg.group_size},
                        {"prompts_per_update", cfg.prompts_per_update},
                        {"token_budget", cfg.token_budget},
                        {"seeds", cfg.seeds},
                        {"eval_every", cfg.eval_every},
                        {"workers", cfg.workers},
                        {"context_order", cfg.context_order},
                        {"nucleus_p", cfg.nucleus_p},
                        {"beta", cfg.beta},
                        {"dispersion_mode", to_string(cfg.dispersion_mode)},
                        {"stats", stats_to_json(cfg.stats)},
                        {"controller", controller_to_json(cfg.controller)},
                        {"optimizer", optimizer_to_json(cfg.optimizer)},
                        {"task", task_to_json(cfg.task)}};
}

}  // namespace detail

void ExperimentConfig::validate() const {
  run.validate();
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  for (const std::string& mask : sweep_signals_masks) {
    signals_mask_from_string(mask);  // throws on malformed masks
  }
}

ExperimentConfig default_experiment_config() { return ExperimentConfig{}; }

ExperimentConfig parse_experiment_config_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader r(j, "config");
  std::string schema = kConfigSchema;
  r.read_string("schema", schema);
  if (schema != kConfigSchema) {
    throw ConfigError("unsupported config schema '" + schema + "'");
  }
  r.read_string("out_dir", cfg.out_dir);
  if (const nlohmann::json* sub = r.peek("run")) {
    cfg.run = detail::run_config_from_json(*sub, "config.run");
  }
  if (const nlohmann::json* sub = r.peek("sweep")) {
    ObjectReader sr(*sub, "config.sweep");
    std::vector<std::string> modes;
    sr.read("dispersion_modes", modes);
    for (const std::string& m : modes) {
      cfg.sweep_dispersion_modes.push_back(dispersion_mode_from_string(m));
    }
    sr.read("signals_masks", cfg.sweep_signals_masks);
    sr.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config_text(buf.str());
}

std::string experiment_config_to_text(const ExperimentConfig& cfg) {
  nlohmann::json j{{"schema", kConfigSchema},
                   {"out_dir", cfg.out_dir},
                   {"run", detail::run_config_to_json(cfg.run)}};
  if (!cfg.sweep_dispersion_modes.empty() ||
      !cfg.sweep_signals_masks.empty()) {
    std::vector<std::string> modes;
    for (DispersionMode m : cfg.sweep_dispersion_modes) {
      modes.emplace_back(to_string(m));
    }
    j["sweep"] = nlohmann::json{{"dispersion_modes", modes},
                                {"signals_masks", cfg.sweep_signals_masks}};
  }
  return j.dump(2) + "\n";
}

}  // namespace agpo
