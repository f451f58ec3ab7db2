#include "agpo/trace.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "agpo/errors.hpp"
#include "json_io.hpp"

namespace agpo {

namespace {
using nlohmann::json;
}

namespace detail {

json step_record_to_json(const StepRecord& r) {
  return json{{"kind", "record"},
              {"step", r.step},
              {"tokens_used_probe", r.tokens_used_probe},
              {"tokens_used_train", r.tokens_used_train},
              {"tau", r.tau},
              {"eps", r.eps},
              {"u_raw", r.u_raw},
              {"u_centered", r.u_centered},
              {"u_baseline", r.u_baseline},
              {"sigma_hat", r.sigma_hat},
              {"skew_abs", r.skew_abs},
              {"vote_entropy", r.vote_entropy},
              {"mean_reward", r.mean_reward},
              {"accuracy", r.accuracy},
              {"step_kl", r.step_kl},
              {"step_kl_used", r.step_kl_used},
              {"ref_kl", r.ref_kl},
              {"mean_entropy", r.mean_entropy},
              {"clip_saturation_pct", r.clip_saturation_pct},
              {"grad_norm", r.grad_norm},
              {"lr", r.lr}};
}

StepRecord step_record_from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<long>();
  r.tokens_used_probe = j.at("tokens_used_probe").get<long>();
  r.tokens_used_train = j.at("tokens_used_train").get<long>();
  r.tau = j.at("tau").get<double>();
  r.eps = j.at("eps").get<double>();
  r.u_raw = j.at("u_raw").get<double>();
  r.u_centered = j.at("u_centered").get<double>();
  r.u_baseline = j.at("u_baseline").get<double>();
  r.sigma_hat = j.at("sigma_hat").get<double>();
  r.skew_abs = j.at("skew_abs").get<double>();
  r.vote_entropy = j.at("vote_entropy").get<double>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.step_kl = j.at("step_kl").get<double>();
  r.step_kl_used = j.at("step_kl_used").get<double>();
  r.ref_kl = j.at("ref_kl").get<double>();
  r.mean_entropy = j.at("mean_entropy").get<double>();
  r.clip_saturation_pct = j.at("clip_saturation_pct").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.lr = j.at("lr").get<double>();
  return r;
}

json metadata_to_json(const TraceMetadata& meta) {
  return json{{"kind", "metadata"},
              {"schema", meta.schema},
              {"method", to_string(meta.run.method)},
              {"seed", meta.seed},
              {"vocab_size", meta.vocab_size},
              {"probe_active", meta.probe_active},
              {"ats_active", meta.ats_active},
              {"eps_active", meta.eps_active},
              {"overrides", meta.overrides},
              {"run", run_config_to_json(meta.run)}};
}

TraceMetadata metadata_from_json(const json& j) {
  TraceMetadata meta;
  meta.schema = j.at("schema").get<std::string>();
  if (meta.schema != kTraceSchema) {
    throw VerifyError("unsupported trace schema '" + meta.schema + "'");
  }
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.vocab_size = j.at("vocab_size").get<int>();
  meta.probe_active = j.at("probe_active").get<bool>();
  meta.ats_active = j.at("ats_active").get<bool>();
  meta.eps_active = j.at("eps_active").get<bool>();
  meta.overrides = j.at("overrides").get<std::vector<std::string>>();
  meta.run = run_config_from_json(j.at("run"), "trace.run");
  return meta;
}

}  // namespace detail

TraceWriter::TraceWriter(const std::filesystem::path& path,
                         const TraceMetadata& meta)
    : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) {
    throw std::runtime_error("cannot open trace for writing: " +
                             path.string());
  }
  out_ << detail::metadata_to_json(meta).dump() << "\n";
}

void TraceWriter::write_record(const StepRecord& record) {
  out_ << detail::step_record_to_json(record).dump() << "\n";
}

void TraceWriter::write_eval(long step, double train_accuracy,
                             double eval_accuracy) {
  out_ << json{{"kind", "eval"},
               {"step", step},
               {"train_accuracy", train_accuracy},
               {"eval_accuracy", eval_accuracy}}
              .dump()
       << "\n";
}

void TraceWriter::close() {
  out_.flush();
  out_.close();
}

TraceFile read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read trace: " + path.string());
  TraceFile file;
  std::string line;
  bool have_meta = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw VerifyError("trace line is not valid JSON: " +
                        std::string(e.what()));
    }
    const std::string kind = j.value("kind", "");
    if (kind == "metadata") {
      file.meta = detail::metadata_from_json(j);
      have_meta = true;
    } else if (kind == "record") {
      file.records.push_back(detail::step_record_from_json(j));
    }  // eval lines and unknown kinds pass through unchecked
  }
  if (!have_meta) throw VerifyError("trace has no metadata line");
  return file;
}

namespace {

bool same_bits(double a, double b) {
  return a == b || (std::isnan(a) && std::isnan(b));
}

void expect(VerifyReport& report, long step, const char* field,
            double logged, double expected) {
  if (!same_bits(logged, expected)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "step " << step << ": " << field << " logged " << logged
        << " but replay gives " << expected;
    report.ok = false;
    report.mismatches.push_back(msg.str());
  }
}

}  // namespace

VerifyReport verify_trace(const std::filesystem::path& path) {
  const TraceFile file = read_trace(path);
  const TraceMetadata& meta = file.meta;
  const ControllerConfig& cc = meta.run.controller;
  VerifyReport report;

  ControllerState state;
  for (const StepRecord& rec : file.records) {
    if (meta.probe_active) {
      ProbeSignals sig;
      sig.dispersion = rec.sigma_hat;
      sig.skew_abs = rec.skew_abs;
      sig.vote_entropy = rec.vote_entropy;
      PolicyDiagnostics diag;
      diag.mean_entropy = rec.mean_entropy;
      diag.ln_vocab = std::log(static_cast<double>(meta.vocab_size));
      auto [out, next] = controller_step(sig, diag, state, cc);
      state = next;
      expect(report, rec.step, "u_raw", rec.u_raw, out.u_raw);
      expect(report, rec.step, "u_centered", rec.u_centered, out.u_centered);
      expect(report, rec.step, "u_baseline", rec.u_baseline,
             state.u_baseline);
      expect(report, rec.step, "step_kl_used", rec.step_kl_used,
             out.signals.step_kl_used);
      expect(report, rec.step, "tau", rec.tau,
             meta.ats_active ? out.tau : cc.tau_base);
      expect(report, rec.step, "eps", rec.eps,
             meta.eps_active ? out.eps : cc.eps_base);
    } else {
      expect(report, rec.step, "tau", rec.tau, cc.tau_base);
      expect(report, rec.step, "eps", rec.eps, cc.eps_base);
      expect(report, rec.step, "u_raw", rec.u_raw, 0.0);
      expect(report, rec.step, "u_centered", rec.u_centered, 0.0);
      expect(report, rec.step, "u_baseline", rec.u_baseline, 0.0);
      expect(report, rec.step, "step_kl_used", rec.step_kl_used, 0.0);
    }
    if (!std::isfinite(rec.step_kl)) {
      report.ok = false;
      report.mismatches.push_back("step " + std::to_string(rec.step) +
                                  ": step_kl is not finite");
    }
    record_step_kl(state, rec.step_kl, cc);
  }

  // Aggregates: recompute from the records and compare against the sibling
  // summary when one exists.
  const std::filesystem::path summary_path =
      path.parent_path() / "summary.json";
  if (std::filesystem::exists(summary_path)) {
    std::ifstream in(summary_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      report.ok = false;
      report.mismatches.push_back(std::string("summary unreadable: ") +
                                  e.what());
      return report;
    }
    const auto close = [](double a, double b) {
      return std::abs(a - b) <= 1e-9;
    };
    const double mean_kl = mean_ref_kl_of(file.records);
    const double mean_clip = mean_clip_saturation_of(file.records);
    const double gn_var = grad_norm_variance_of(file.records);
    if (!close(j.at("mean_ref_kl").get<double>(), mean_kl)) {
      report.ok = false;
      report.mismatches.push_back("summary mean_ref_kl disagrees with trace");
    }
    if (!close(j.at("mean_clip_saturation_pct").get<double>(), mean_clip)) {
      report.ok = false;
      report.mismatches.push_back(
          "summary mean_clip_saturation_pct disagrees with trace");
    }
    if (!close(j.at("grad_norm_variance").get<double>(), gn_var)) {
      report.ok = false;
      report.mismatches.push_back(
          "summary grad_norm_variance disagrees with trace");
    }
  }
  return report;
}

void write_seed_summary(const std::filesystem::path& path,
                        const std::string& method,
                        const SeedSummary& summary) {
  json maj = json::array();
  for (const auto& [k, acc] : summary.final_eval_maj_at) {
    maj.push_back(json::array({k, acc}));
  }
  const json j{{"schema", kSummarySchema},
               {"method", method},
               {"seed", summary.seed},
               {"updates", summary.updates},
               {"tokens_probe", summary.tokens_probe},
               {"tokens_train", summary.tokens_train},
               {"final_train_accuracy", summary.final_train_accuracy},
               {"final_eval_accuracy", summary.final_eval_accuracy},
               {"final_eval_maj_at", maj},
               {"mean_ref_kl", summary.mean_ref_kl},
               {"mean_clip_saturation_pct",
                summary.mean_clip_saturation_pct},
               {"grad_norm_variance", summary.grad_norm_variance}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write summary: " + path.string());
  }
  out << j.dump(2) << "\n";
}

void write_aggregate_summary(const std::filesystem::path& path,
                             const std::string& method,
                             const ExperimentResult& result) {
  json seeds = json::array();
  for (const SeedSummary& s : result.seeds) {
    seeds.push_back(json{{"seed", s.seed},
                         {"updates", s.updates},
                         {"final_train_accuracy", s.final_train_accuracy},
                         {"final_eval_accuracy", s.final_eval_accuracy}});
  }
  const json j{{"schema", kAggregateSchema},
               {"method", method},
               {"seeds", seeds},
               {"mean_final_train_accuracy",
                result.mean_final_train_accuracy},
               {"std_final_train_accuracy", result.std_final_train_accuracy},
               {"mean_final_eval_accuracy", result.mean_final_eval_accuracy},
               {"std_final_eval_accuracy", result.std_final_eval_accuracy}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write summary: " + path.string());
  }
  out << j.dump(2) << "\n";
}

}  // namespace agpo
