// Experiment driver: run single experiments, ablation sweeps, trace
// verification, checkpoint evaluation, and task export.
//
// Exit codes: 0 ok, 2 config error, 3 runtime error, 4 verification
// mismatch.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "agpo/config.hpp"
#include "agpo/errors.hpp"
#include "agpo/policy.hpp"
#include "agpo/tasks.hpp"
#include "agpo/trace.hpp"
#include "agpo/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kOutputRootEnv = "AGPO_OUTPUT_ROOT";
constexpr const char* kSweepSchema = "agpo-sweep-v1";

// Relative output directories land under $AGPO_OUTPUT_ROOT when it is set.
fs::path resolve_out_dir(const fs::path& out) {
  if (out.is_absolute()) return out;
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0') return out;
  return fs::path(root) / out;
}

// Flag overrides shared by run and sweep. Each applied override is recorded
// as "name=value" for the trace metadata.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dispersion_mode;
  std::optional<std::string> signals_mask;
  std::optional<std::string> method;
  std::optional<long> token_budget;
  std::optional<std::string> out;

  std::vector<std::string> apply(agpo::ExperimentConfig& cfg) const {
    std::vector<std::string> applied;
    if (seed) {
      cfg.run.seeds = {*seed};
      applied.push_back("seed=" + std::to_string(*seed));
    }
    if (dispersion_mode) {
      cfg.run.dispersion_mode =
          agpo::dispersion_mode_from_string(*dispersion_mode);
      applied.push_back("dispersion-mode=" + *dispersion_mode);
    }
    if (signals_mask) {
      cfg.run.controller.signals_mask =
          agpo::signals_mask_from_string(*signals_mask);
      applied.push_back("signals-mask=" + *signals_mask);
    }
    if (method) {
      cfg.run.method = agpo::method_from_string(*method);
      applied.push_back("method=" + *method);
    }
    if (token_budget) {
      cfg.run.token_budget = *token_budget;
      applied.push_back("token-budget=" + std::to_string(*token_budget));
    }
    if (out) {
      cfg.out_dir = *out;
      applied.push_back("out=" + *out);
    }
    return applied;
  }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "Run a single seed instead of the list");
  cmd->add_option("--dispersion-mode", ov.dispersion_mode,
                  "Dispersion estimator: std, mad, or iqr")
      ->check(CLI::IsMember({"std", "mad", "iqr"}));
  cmd->add_option("--signals-mask", ov.signals_mask,
                  "Four bits gating dispersion, skewness, vote entropy, "
                  "step KL (e.g. 1011)");
  cmd->add_option("--method", ov.method,
                  "ppo-style, grpo-fixed, grpo-ats, agpo-minus-ats, or "
                  "agpo-full");
  cmd->add_option("--token-budget", ov.token_budget,
                  "Generated-token budget per seed (probe + train)");
  cmd->add_option("--out", ov.out, "Output directory");
}

agpo::ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return agpo::default_experiment_config();
  return agpo::load_experiment_config(path);
}

std::string format_pct(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * fraction;
  return os.str();
}

void print_seed_table(const agpo::ExperimentResult& result) {
  std::cout << std::left << std::setw(8) << "seed" << std::right
            << std::setw(9) << "updates" << std::setw(12) << "probe_tok"
            << std::setw(12) << "train_tok" << std::setw(11) << "train_acc"
            << std::setw(10) << "eval_acc";
  if (!result.seeds.empty()) {
    for (const auto& [k, acc] : result.seeds.front().final_eval_maj_at)
      std::cout << std::setw(9) << ("maj@" + std::to_string(k));
  }
  std::cout << "\n";
  for (const auto& s : result.seeds) {
    std::cout << std::left << std::setw(8) << s.seed << std::right
              << std::setw(9) << s.updates << std::setw(12) << s.tokens_probe
              << std::setw(12) << s.tokens_train << std::setw(11)
              << format_pct(s.final_train_accuracy) << std::setw(10)
              << format_pct(s.final_eval_accuracy);
    for (const auto& [k, acc] : s.final_eval_maj_at)
      std::cout << std::setw(9) << format_pct(acc);
    std::cout << "\n";
  }
  std::cout << "mean train_acc " << format_pct(result.mean_final_train_accuracy)
            << " +/- " << format_pct(result.std_final_train_accuracy)
            << "   mean eval_acc " << format_pct(result.mean_final_eval_accuracy)
            << " +/- " << format_pct(result.std_final_eval_accuracy) << "\n";
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
  agpo::ExperimentConfig cfg = load_config(config_path);
  std::vector<std::string> applied = ov.apply(cfg);
  cfg.validate();
  const fs::path out_dir = resolve_out_dir(cfg.out_dir);

  std::cout << "method " << agpo::to_string(cfg.run.method) << "  task "
            << agpo::to_string(cfg.run.task.kind) << " d"
            << cfg.run.task.difficulty << "  dispersion "
            << agpo::to_string(cfg.run.dispersion_mode) << "  mask "
            << agpo::to_string(cfg.run.controller.signals_mask) << "  budget "
            << cfg.run.token_budget << "\n";

  agpo::ExperimentResult result =
      agpo::run_experiment(cfg.run, out_dir, {}, applied);
  print_seed_table(result);
  std::cout << "wrote " << (out_dir / "summary.json").string() << "\n";
  return 0;
}

struct SweepCell {
  agpo::DispersionMode mode = agpo::DispersionMode::Std;
  std::string mask;
  bool reference = false;
  bool ok = false;
  std::string error;
  std::string dir;
  agpo::ExperimentResult result;
};

int cmd_sweep(const std::string& config_path, const Overrides& ov) {
  agpo::ExperimentConfig cfg = load_config(config_path);
  std::vector<std::string> applied = ov.apply(cfg);
  cfg.validate();
  const fs::path out_dir = resolve_out_dir(cfg.out_dir);

  std::vector<agpo::DispersionMode> modes = cfg.sweep_dispersion_modes;
  if (modes.empty()) modes = {cfg.run.dispersion_mode};
  std::vector<std::string> masks = cfg.sweep_signals_masks;
  if (masks.empty()) masks = {"0111", "1011", "1101", "1110"};

  // The run config itself is the reference row; every delta is taken
  // against it, so it joins the grid when the grid does not contain it.
  const std::string ref_mask =
      agpo::to_string(cfg.run.controller.signals_mask);
  std::vector<SweepCell> cells;
  bool have_ref = false;
  for (agpo::DispersionMode mode : modes) {
    for (const std::string& mask : masks) {
      SweepCell cell;
      cell.mode = mode;
      cell.mask = mask;
      cell.reference = (mode == cfg.run.dispersion_mode && mask == ref_mask);
      have_ref = have_ref || cell.reference;
      cells.push_back(std::move(cell));
    }
  }
  if (!have_ref) {
    SweepCell ref;
    ref.mode = cfg.run.dispersion_mode;
    ref.mask = ref_mask;
    ref.reference = true;
    cells.insert(cells.begin(), std::move(ref));
  }

  for (SweepCell& cell : cells) {
    agpo::RunConfig run = cfg.run;
    run.dispersion_mode = cell.mode;
    run.controller.signals_mask = agpo::signals_mask_from_string(cell.mask);
    cell.dir = std::string(agpo::to_string(cell.mode)) + "-mask" + cell.mask;
    std::vector<std::string> cell_overrides = applied;
    cell_overrides.push_back("dispersion-mode=" +
                             std::string(agpo::to_string(cell.mode)));
    cell_overrides.push_back("signals-mask=" + cell.mask);
    std::cout << "cell " << cell.dir << " ..." << std::flush;
    try {
      cell.result = agpo::run_experiment(run, out_dir / cell.dir, {},
                                         cell_overrides);
      cell.ok = true;
      std::cout << " done (eval "
                << format_pct(cell.result.mean_final_eval_accuracy) << ")\n";
    } catch (const std::exception& e) {
      // Partial-failure policy: record the cell and keep sweeping.
      cell.error = e.what();
      std::cout << " FAILED: " << cell.error << "\n";
    }
  }

  const SweepCell* ref = nullptr;
  for (const SweepCell& cell : cells)
    if (cell.reference) ref = &cell;

  json cells_json = json::array();
  std::cout << "\n" << std::left << std::setw(18) << "cell" << std::right
            << std::setw(11) << "train_acc" << std::setw(10) << "eval_acc"
            << std::setw(9) << "d_train" << std::setw(9) << "d_eval" << "\n";
  for (const SweepCell& cell : cells) {
    json j{{"dispersion_mode", agpo::to_string(cell.mode)},
           {"signals_mask", cell.mask},
           {"reference", cell.reference},
           {"dir", cell.dir},
           {"ok", cell.ok}};
    if (!cell.ok) {
      j["error"] = cell.error;
      cells_json.push_back(std::move(j));
      std::cout << std::left << std::setw(18) << cell.dir
                << "  failed: " << cell.error << "\n";
      continue;
    }
    j["mean_final_train_accuracy"] = cell.result.mean_final_train_accuracy;
    j["mean_final_eval_accuracy"] = cell.result.mean_final_eval_accuracy;
    std::cout << std::left << std::setw(18) << cell.dir << std::right
              << std::setw(11) << format_pct(cell.result.mean_final_train_accuracy)
              << std::setw(10) << format_pct(cell.result.mean_final_eval_accuracy);
    if (ref != nullptr && ref->ok) {
      const double d_train = cell.result.mean_final_train_accuracy -
                             ref->result.mean_final_train_accuracy;
      const double d_eval = cell.result.mean_final_eval_accuracy -
                            ref->result.mean_final_eval_accuracy;
      j["delta_train"] = d_train;
      j["delta_eval"] = d_eval;
      std::ostringstream dt, de;
      dt << std::showpos << std::fixed << std::setprecision(1)
         << 100.0 * d_train;
      de << std::showpos << std::fixed << std::setprecision(1)
         << 100.0 * d_eval;
      std::cout << std::setw(9) << dt.str() << std::setw(9) << de.str();
    }
    std::cout << "\n";
    cells_json.push_back(std::move(j));
  }

  json summary{{"schema", kSweepSchema},
               {"method", agpo::to_string(cfg.run.method)},
               {"reference",
                {{"dispersion_mode", agpo::to_string(cfg.run.dispersion_mode)},
                 {"signals_mask", ref_mask}}},
               {"cells", std::move(cells_json)}};
  fs::create_directories(out_dir);
  const fs::path summary_path = out_dir / "sweep_summary.json";
  std::ofstream out(summary_path);
  if (!out)
    throw std::runtime_error("cannot write " + summary_path.string());
  out << summary.dump(2) << "\n";
  std::cout << "wrote " << summary_path.string() << "\n";
  return 0;
}

int cmd_verify(const std::vector<std::string>& paths) {
  bool all_ok = true;
  for (const std::string& path : paths) {
    agpo::VerifyReport report = agpo::verify_trace(path);
    if (report.ok) {
      std::cout << path << ": ok\n";
      continue;
    }
    all_ok = false;
    std::cout << path << ": " << report.mismatches.size() << " mismatch"
              << (report.mismatches.size() == 1 ? "" : "es") << "\n";
    for (const std::string& m : report.mismatches)
      std::cout << "  " << m << "\n";
  }
  if (!all_ok) throw agpo::VerifyError("trace verification failed");
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             std::optional<std::uint64_t> seed_flag, std::vector<int> ks,
             const std::string& split) {
  agpo::ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  agpo::PolicySnapshot policy = agpo::load_policy(checkpoint);
  if (policy.vocab_size != agpo::Vocab::kSize)
    throw agpo::ConfigError("checkpoint vocab size " +
                            std::to_string(policy.vocab_size) +
                            " does not match the task vocabulary");

  const std::uint64_t seed =
      seed_flag ? *seed_flag
                : (cfg.run.seeds.empty() ? 42 : cfg.run.seeds.front());
  if (ks.empty()) ks = {1, 4, 16};
  std::sort(ks.begin(), ks.end());

  agpo::PromptSet prompts = agpo::generate_prompts(cfg.run.task, seed);
  const std::vector<agpo::Prompt>& set =
      split == "train" ? prompts.train : prompts.eval;
  agpo::SamplerConfig sampler{cfg.run.controller.tau_base, cfg.run.nucleus_p};
  agpo::EvalReport report = agpo::evaluate(policy, set, cfg.run.task, ks,
                                           sampler, seed, cfg.run.workers);

  std::cout << "checkpoint " << checkpoint << "  split " << split << "  seed "
            << seed << "  prompts " << set.size() << "\n";
  std::cout << "greedy " << format_pct(report.greedy_accuracy) << "\n";
  for (const auto& [k, acc] : report.maj_at)
    std::cout << "maj@" << k << " " << format_pct(acc) << "\n";
  return 0;
}

int cmd_export_task(const std::string& config_path,
                    std::optional<std::uint64_t> seed_flag,
                    const std::string& split, const std::string& out_path) {
  agpo::ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const std::uint64_t seed =
      seed_flag ? *seed_flag
                : (cfg.run.seeds.empty() ? 42 : cfg.run.seeds.front());
  agpo::PromptSet prompts = agpo::generate_prompts(cfg.run.task, seed);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path);
    out = &file;
  }
  auto dump = [&](const std::vector<agpo::Prompt>& set) {
    for (const agpo::Prompt& p : set)
      *out << agpo::detokenize(p.tokens) << "\t" << p.gold << "\n";
  };
  if (split == "train" || split == "all") dump(prompts.train);
  if (split == "eval" || split == "all") dump(prompts.eval);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Group-normalized policy-gradient training with adaptive clipping "
      "and adaptive temperature sampling"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides run_ov;
  CLI::App* run = app.add_subcommand("run", "Train every configured seed");
  run->add_option("--config", config_path, "Experiment config (JSON)");
  add_override_flags(run, run_ov);

  std::string sweep_config_path;
  Overrides sweep_ov;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Run the dispersion-mode x signals-mask ablation grid");
  sweep->add_option("--config", sweep_config_path, "Experiment config (JSON)");
  add_override_flags(sweep, sweep_ov);

  std::vector<std::string> verify_paths;
  CLI::App* verify = app.add_subcommand(
      "verify", "Replay controller outputs from a trace and compare");
  verify->add_option("trace", verify_paths, "Trace files (trace.jsonl)")
      ->required();

  std::string eval_checkpoint;
  std::string eval_config_path;
  std::optional<std::uint64_t> eval_seed;
  std::vector<int> eval_ks;
  std::string eval_split = "eval";
  CLI::App* eval = app.add_subcommand(
      "eval", "Greedy and majority-vote accuracy of a checkpoint");
  eval->add_option("checkpoint", eval_checkpoint, "policy.bin path")
      ->required();
  eval->add_option("--config", eval_config_path, "Experiment config (JSON)");
  eval->add_option("--seed", eval_seed, "Dataset and sampling seed");
  eval->add_option("--k", eval_ks, "Majority-vote sizes (default 1 4 16)");
  eval->add_option("--split", eval_split, "Prompt split: train or eval")
      ->check(CLI::IsMember({"train", "eval"}));

  std::string export_config_path;
  std::optional<std::uint64_t> export_seed;
  std::string export_split = "all";
  std::string export_out;
  CLI::App* export_task = app.add_subcommand(
      "export-task", "Write generated prompts as 'prompt<TAB>gold' lines");
  export_task->add_option("--config", export_config_path,
                          "Experiment config (JSON)");
  export_task->add_option("--seed", export_seed, "Dataset seed");
  export_task->add_option("--split", export_split, "train, eval, or all")
      ->check(CLI::IsMember({"train", "eval", "all"}));
  export_task->add_option("--out", export_out, "Output file (default stdout)");

  run->callback([&] { cmd_run(config_path, run_ov); });
  sweep->callback([&] { cmd_sweep(sweep_config_path, sweep_ov); });
  verify->callback([&] { cmd_verify(verify_paths); });
  eval->callback([&] {
    cmd_eval(eval_checkpoint, eval_config_path, eval_seed, eval_ks,
             eval_split);
  });
  export_task->callback([&] {
    cmd_export_task(export_config_path, export_seed, export_split,
                    export_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const agpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const agpo::VerifyError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
