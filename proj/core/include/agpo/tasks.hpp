#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace agpo {

enum class TaskKind { ModularArithmetic, SequenceCopy, DigitSum };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);

// Fixed vocabulary shared by every task: digits 0-9, an operator symbol, the
// answer delimiter, and eos.
struct Vocab {
  static constexpr int kPlus = 10;
  static constexpr int kDelimiter = 11;  // '#', starts the answer span
  static constexpr int kEos = 12;
  static constexpr int kSize = 13;

  static char to_char(int token);
  static int from_char(char c);  // -1 when the character has no token
};

struct TaskSpec {
  TaskKind kind = TaskKind::ModularArithmetic;
  int difficulty = 1;  // operand/sequence digit count
  int prompt_count = 32;
  int eval_count = 16;
  bool partial_credit = false;

  void validate() const;           // throws ConfigError
  int max_answer_tokens() const;   // longest gold answer at this difficulty
  int required_max_len() const;    // answer plus eos
};

struct Prompt {
  int id = 0;
  std::vector<int> tokens;
  std::string gold;  // canonical answer string
};

struct PromptSet {
  std::vector<Prompt> train;
  std::vector<Prompt> eval;
};

// Deterministic for (spec, seed). Train and eval prompts are disjoint, and
// no two prompts in the union share their trailing two question tokens, so
// a short-context policy can tell every prompt apart.
PromptSet generate_prompts(const TaskSpec& spec, std::uint64_t seed);

// Trim, case-fold, collapse internal whitespace runs to single spaces.
std::string canonicalize_answer(std::string_view raw);

// Canonical string from the tokens after the first delimiter, stopping at
// eos. No delimiter yields "".
std::string extract_answer(std::span<const int> tokens, const TaskSpec& spec);

// Exact match gives {0,1}; partial credit gives the longest-common-prefix
// fraction of the gold length.
double score_answer(const std::string& extracted, const std::string& gold,
                    const TaskSpec& spec);

// Printable form of a token sequence, for export and debugging.
std::string detokenize(std::span<const int> tokens);

}  // namespace agpo
