#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "agpo/trainer.hpp"

namespace agpo {

inline constexpr const char* kTraceSchema = "agpo-trace-v1";
inline constexpr const char* kSummarySchema = "agpo-summary-v1";
inline constexpr const char* kAggregateSchema = "agpo-aggregate-v1";

// First line of every trace: enough context to replay the controllers.
struct TraceMetadata {
  std::string schema = kTraceSchema;
  std::uint64_t seed = 0;
  int vocab_size = 0;
  bool probe_active = true;
  bool ats_active = true;
  bool eps_active = true;
  std::vector<std::string> overrides;  // CLI overrides, for provenance
  RunConfig run;
};

// Line-delimited trace writer: one metadata line, then one record line per
// update. All numbers serialize with shortest round-trip formatting, so a
// reader recovers bit-identical doubles.
class TraceWriter {
 public:
  TraceWriter(const std::filesystem::path& path, const TraceMetadata& meta);
  void write_record(const StepRecord& record);
  void write_eval(long step, double train_accuracy, double eval_accuracy);
  void close();

 private:
  std::ofstream out_;
};

struct TraceFile {
  TraceMetadata meta;
  std::vector<StepRecord> records;
};

TraceFile read_trace(const std::filesystem::path& path);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> mismatches;  // "step 12: tau ..." style entries
};

// Replays the controller chain from the logged raw signals and compares
// tau, eps, and the uncertainty fields bit-exactly against the trace; then
// recomputes the aggregate statistics and, when a summary.json sits next to
// the trace, checks them within 1e-9.
VerifyReport verify_trace(const std::filesystem::path& path);

void write_seed_summary(const std::filesystem::path& path,
                        const std::string& method, const SeedSummary& summary);
void write_aggregate_summary(const std::filesystem::path& path,
                             const std::string& method,
                             const ExperimentResult& result);

}  // namespace agpo
