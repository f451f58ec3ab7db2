#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "agpo/config.hpp"
#include "agpo/errors.hpp"

using namespace agpo;
namespace fs = std::filesystem;

namespace {

std::string error_of(const char* text) {
  try {
    parse_experiment_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const ExperimentConfig cfg = default_experiment_config();
  const RunConfig& run = cfg.run;

  CHECK(run.method == Method::AgpoFull);
  CHECK(run.group_size == 8);
  CHECK(run.prompts_per_update == 8);
  CHECK(run.token_budget == 200000);
  CHECK(run.seeds == std::vector<std::uint64_t>{42, 1337, 2026});
  CHECK(run.eval_every == 0);
  CHECK(run.workers == 1);
  CHECK(run.context_order == 2);
  CHECK(run.nucleus_p == 0.95);
  CHECK(run.beta == 0.03);
  CHECK(run.dispersion_mode == DispersionMode::Std);

  CHECK(run.stats.eps_a == 1e-8);
  CHECK(run.stats.sigma_min == 1e-6);
  CHECK(run.stats.kappa_max == 10.0);

  const ControllerConfig& c = run.controller;
  CHECK(c.tau_base == 1.0);
  CHECK(c.tau_min == 0.5);
  CHECK(c.tau_max == 1.5);
  CHECK(c.lambda == 0.15);
  CHECK(c.eps_base == 0.2);
  CHECK(c.eps_min == 0.05);
  CHECK(c.eps_max == 0.4);
  CHECK(c.alpha == 1.0);
  CHECK(c.gamma == 0.5);
  CHECK(c.delta == 0.2);
  CHECK(c.zeta == 0.05);
  CHECK(c.w_r == 1.0);
  CHECK(c.w_e == 1.0);
  CHECK(c.w_k == 0.1);
  CHECK(c.rho_u == 0.95);
  CHECK(to_string(c.signals_mask) == "1111");
  CHECK_FALSE(c.entropy_normalized);
  CHECK(c.entropy_term_enabled);
  CHECK_FALSE(c.kl_ema_enabled);
  CHECK(c.kl_ema_momentum == 0.9);

  const OptimizerConfig& o = run.optimizer;
  CHECK(o.peak_lr == 1.5e-5);
  CHECK(o.beta1 == 0.9);
  CHECK(o.beta2 == 0.95);
  CHECK(o.weight_decay == 0.1);
  CHECK(o.grad_clip == 1.0);
  CHECK(o.adam_eps == 1e-8);
  CHECK(o.schedule == LrSchedule::Cosine);

  CHECK(run.task.kind == TaskKind::ModularArithmetic);
  CHECK(run.task.difficulty == 1);
  CHECK(run.task.prompt_count == 32);
  CHECK(run.task.eval_count == 16);
  CHECK_FALSE(run.task.partial_credit);

  CHECK(cfg.out_dir == "runs");
  CHECK(cfg.sweep_dispersion_modes.empty());
  CHECK(cfg.sweep_signals_masks.empty());
}

TEST_CASE("an empty object parses to the defaults") {
  const ExperimentConfig parsed = parse_experiment_config_text("{}");
  CHECK(experiment_config_to_text(parsed) ==
        experiment_config_to_text(default_experiment_config()));
}

TEST_CASE("parse then print is a fixed point") {
  ExperimentConfig cfg = default_experiment_config();
  cfg.run.method = Method::GrpoAts;
  cfg.run.group_size = 4;
  cfg.run.nucleus_p = 1.0 / 3.0;
  cfg.run.seeds = {7};
  cfg.run.dispersion_mode = DispersionMode::Mad;
  cfg.run.controller.lambda = 0.3;
  cfg.run.controller.signals_mask = signals_mask_from_string("0101");
  cfg.run.optimizer.schedule = LrSchedule::InverseSqrt;
  cfg.run.optimizer.peak_lr = 0.2;
  cfg.run.task.kind = TaskKind::DigitSum;
  cfg.run.task.difficulty = 3;
  cfg.out_dir = "elsewhere";
  cfg.sweep_dispersion_modes = {DispersionMode::Std, DispersionMode::Iqr};
  cfg.sweep_signals_masks = {"0111", "1011"};

  const std::string text = experiment_config_to_text(cfg);
  const ExperimentConfig reparsed = parse_experiment_config_text(text);
  CHECK(experiment_config_to_text(reparsed) == text);

  CHECK(reparsed.run.method == Method::GrpoAts);
  CHECK(reparsed.run.nucleus_p == cfg.run.nucleus_p);
  CHECK(reparsed.run.optimizer.peak_lr == 0.2);
  CHECK(reparsed.run.dispersion_mode == DispersionMode::Mad);
  CHECK(to_string(reparsed.run.controller.signals_mask) == "0101");
  CHECK(reparsed.sweep_signals_masks == cfg.sweep_signals_masks);
  CHECK(reparsed.sweep_dispersion_modes == cfg.sweep_dispersion_modes);
}

TEST_CASE("unknown keys are rejected with their full path") {
  CHECK(error_of(R"({"runn": {}})").find("unknown config key config.runn") !=
        std::string::npos);
  CHECK(error_of(R"({"run": {"grup_size": 4}})")
            .find("unknown config key config.run.grup_size") !=
        std::string::npos);
  CHECK(error_of(R"({"run": {"controller": {"tau_bse": 1.0}}})")
            .find("unknown config key config.run.controller.tau_bse") !=
        std::string::npos);
  CHECK(error_of(R"({"run": {"stats": {"x": 1}}})")
            .find("unknown config key config.run.stats.x") !=
        std::string::npos);
  CHECK(error_of(R"({"run": {"optimizer": {"lr": 0.1}}})")
            .find("unknown config key config.run.optimizer.lr") !=
        std::string::npos);
  CHECK(error_of(R"({"run": {"task": {"name": "copy"}}})")
            .find("unknown config key config.run.task.name") !=
        std::string::npos);
  CHECK(error_of(R"({"sweep": {"foo": []}})")
            .find("unknown config key config.sweep.foo") != std::string::npos);
}

TEST_CASE("schema handling") {
  CHECK_NOTHROW(parse_experiment_config_text(
      R"({"schema": "agpo-config-v1"})"));
  CHECK(error_of(R"({"schema": "agpo-config-v2"})")
            .find("unsupported config schema") != std::string::npos);
}

TEST_CASE("type and syntax errors") {
  CHECK(error_of(R"({"run": {"group_size": "big"}})")
            .find("config.run.group_size has the wrong type") !=
        std::string::npos);
  CHECK(error_of("not json at all").find("config is not valid JSON") !=
        std::string::npos);
  CHECK(error_of(R"([1, 2, 3])").find("config must be a JSON object") !=
        std::string::npos);
}

TEST_CASE("enum strings parse inside configs") {
  const ExperimentConfig iqr = parse_experiment_config_text(
      R"({"run": {"dispersion_mode": "iqr"}})");
  CHECK(iqr.run.dispersion_mode == DispersionMode::Iqr);

  const ExperimentConfig ppo = parse_experiment_config_text(
      R"({"run": {"method": "ppo-style", "group_size": 1}})");
  CHECK(ppo.run.method == Method::PpoStyle);

  const ExperimentConfig sched = parse_experiment_config_text(
      R"({"run": {"optimizer": {"schedule": "inverse-sqrt"}}})");
  CHECK(sched.run.optimizer.schedule == LrSchedule::InverseSqrt);

  CHECK(error_of(R"({"run": {"dispersion_mode": "median"}})")
            .find("unknown dispersion mode") != std::string::npos);
  CHECK(error_of(R"({"run": {"method": "trpo"}})").find("unknown method") !=
        std::string::npos);
}

TEST_CASE("semantic validation runs at parse time") {
  CHECK(error_of(R"({"run": {"group_size": 1}})")
            .find("group_size") != std::string::npos);
  CHECK(error_of(R"({"out_dir": ""})").find("out_dir") != std::string::npos);
  CHECK(error_of(R"({"sweep": {"signals_masks": ["10"]}})")
            .find("4 bits") != std::string::npos);
  CHECK(error_of(R"({"run": {"controller": {"rho_u": 1.5}}})")
            .find("rho_u") != std::string::npos);
}

TEST_CASE("config files load from disk") {
  const fs::path dir = fs::temp_directory_path() / "agpo_test_config";
  fs::create_directories(dir);
  const fs::path path = dir / "config.json";
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"run": {"token_budget": 12345}, "out_dir": "somewhere"})";
  }
  const ExperimentConfig cfg = load_experiment_config(path);
  CHECK(cfg.run.token_budget == 12345);
  CHECK(cfg.out_dir == "somewhere");

  const fs::path missing = dir / "nope.json";
  try {
    load_experiment_config(missing);
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cannot read config file") !=
          std::string::npos);
    CHECK(std::string(e.what()).find("nope.json") != std::string::npos);
  }
  fs::remove_all(dir);
}
