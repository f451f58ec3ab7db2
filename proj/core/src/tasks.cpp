#include "agpo/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "agpo/errors.hpp"
#include "agpo/rng.hpp"

namespace agpo {

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::ModularArithmetic: return "modular-arithmetic";
    case TaskKind::SequenceCopy: return "sequence-copy";
    case TaskKind::DigitSum: return "digit-sum";
  }
  throw std::logic_error("unknown TaskKind");
}

TaskKind task_kind_from_string(std::string_view name) {
  if (name == "modular-arithmetic") return TaskKind::ModularArithmetic;
  if (name == "sequence-copy") return TaskKind::SequenceCopy;
  if (name == "digit-sum") return TaskKind::DigitSum;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

char Vocab::to_char(int token) {
  if (token >= 0 && token <= 9) return static_cast<char>('0' + token);
  switch (token) {
    case kPlus: return '+';
    case kDelimiter: return '#';
    case kEos: return '$';
    default: return '_';
  }
}

int Vocab::from_char(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  switch (c) {
    case '+': return kPlus;
    case '#': return kDelimiter;
    case '$': return kEos;
    default: return -1;
  }
}

namespace {

long pow10(int e) {
  long v = 1;
  for (int i = 0; i < e; ++i) v *= 10;
  return v;
}

// Number of distinct trailing-two-token windows available to the question
// part at this difficulty. Prompt generation assigns each prompt a distinct
// window, so this bounds prompt_count + eval_count.
int suffix_capacity(TaskKind kind, int difficulty) {
  if (kind == TaskKind::ModularArithmetic) {
    if (difficulty == 1) return 100;  // window is (a, b)
    if (difficulty == 2) return 90;   // window is b itself, no leading zero
    return 100;                       // window is b's last two digits
  }
  // Copy and digit-sum sequences allow leading zeros.
  return difficulty == 1 ? 10 : 100;
}

}  // namespace

void TaskSpec::validate() const {
  if (difficulty < 1 || difficulty > 6) {
    throw ConfigError("task difficulty must be in [1, 6]");
  }
  if (prompt_count < 1) throw ConfigError("task prompt_count must be >= 1");
  if (eval_count < 0) throw ConfigError("task eval_count must be >= 0");
  const int cap = suffix_capacity(kind, difficulty);
  if (prompt_count + eval_count > cap) {
    throw ConfigError("task asks for " +
                      std::to_string(prompt_count + eval_count) +
                      " prompts but only " + std::to_string(cap) +
                      " distinct prompt endings exist at difficulty " +
                      std::to_string(difficulty));
  }
}

int TaskSpec::max_answer_tokens() const {
  switch (kind) {
    case TaskKind::ModularArithmetic: return difficulty;
    case TaskKind::SequenceCopy: return difficulty;
    case TaskKind::DigitSum:
      return static_cast<int>(std::to_string(9L * difficulty).size());
  }
  throw std::logic_error("unknown TaskKind");
}

int TaskSpec::required_max_len() const { return max_answer_tokens() + 1; }

namespace {

void append_digits(std::vector<int>& tokens, std::span<const int> digits) {
  tokens.insert(tokens.end(), digits.begin(), digits.end());
}

long digits_to_value(std::span<const int> digits) {
  long v = 0;
  for (int d : digits) v = v * 10 + d;
  return v;
}

// One prompt built around a reserved trailing window (suffix). Free digit
// positions are drawn from the stream.
Prompt build_prompt(const TaskSpec& spec, int suffix, SplitMix64& rng) {
  const int d = spec.difficulty;
  Prompt p;
  if (spec.kind == TaskKind::ModularArithmetic) {
    std::vector<int> a(static_cast<std::size_t>(d), 0);
    std::vector<int> b(static_cast<std::size_t>(d), 0);
    auto fill_leading = [&](std::vector<int>& v, int fixed_tail) {
      // fixed_tail digits at the end are already set by the suffix
      for (int i = 0; i < d - fixed_tail; ++i) {
        if (i == 0 && d > 1) {
          v[0] = 1 + static_cast<int>(rng.next_below(9));
        } else {
          v[static_cast<std::size_t>(i)] =
              static_cast<int>(rng.next_below(10));
        }
      }
    };
    if (d == 1) {
      a[0] = suffix / 10;
      b[0] = suffix % 10;
    } else if (d == 2) {
      // suffix enumerates b in [10, 99]
      b[0] = (suffix + 10) / 10;
      b[1] = (suffix + 10) % 10;
      fill_leading(a, 0);
    } else {
      b[static_cast<std::size_t>(d - 2)] = suffix / 10;
      b[static_cast<std::size_t>(d - 1)] = suffix % 10;
      fill_leading(b, 2);
      fill_leading(a, 0);
    }
    append_digits(p.tokens, a);
    append_digits(p.tokens, b);
    const long answer =
        (digits_to_value(a) + digits_to_value(b)) % pow10(d);
    p.gold = std::to_string(answer);
  } else {
    std::vector<int> x(static_cast<std::size_t>(d), 0);
    if (d == 1) {
      x[0] = suffix;
    } else {
      x[static_cast<std::size_t>(d - 2)] = suffix / 10;
      x[static_cast<std::size_t>(d - 1)] = suffix % 10;
      for (int i = 0; i < d - 2; ++i) {
        x[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(10));
      }
    }
    append_digits(p.tokens, x);
    if (spec.kind == TaskKind::SequenceCopy) {
      for (int t : x) p.gold.push_back(static_cast<char>('0' + t));
    } else {
      long sum = 0;
      for (int t : x) sum += t;
      p.gold = std::to_string(sum);
    }
  }
  p.tokens.push_back(Vocab::kDelimiter);
  return p;
}

}  // namespace

PromptSet generate_prompts(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  SplitMix64 rng = derive_stream(
      seed, {0x7a5cULL, static_cast<std::uint64_t>(spec.kind),
             static_cast<std::uint64_t>(spec.difficulty)});
  const int cap = suffix_capacity(spec.kind, spec.difficulty);
  std::vector<int> suffixes(static_cast<std::size_t>(cap));
  for (int i = 0; i < cap; ++i) suffixes[static_cast<std::size_t>(i)] = i;
  for (int i = cap - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(
        static_cast<std::uint64_t>(i + 1)));
    std::swap(suffixes[static_cast<std::size_t>(i)],
              suffixes[static_cast<std::size_t>(j)]);
  }
  PromptSet out;
  const int total = spec.prompt_count + spec.eval_count;
  const int answer_cap = spec.max_answer_tokens();
  for (int i = 0; i < total; ++i) {
    Prompt p = build_prompt(spec, suffixes[static_cast<std::size_t>(i)], rng);
    p.id = i;
    if (static_cast<int>(p.gold.size()) > answer_cap) {
      throw std::logic_error("generated gold answer exceeds the answer cap");
    }
    if (i < spec.prompt_count) {
      out.train.push_back(std::move(p));
    } else {
      out.eval.push_back(std::move(p));
    }
  }
  return out;
}

std::string canonicalize_answer(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool in_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = !out.empty();
      continue;
    }
    if (in_space) {
      out.push_back(' ');
      in_space = false;
    }
    out.push_back(
        static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string extract_answer(std::span<const int> tokens, const TaskSpec&) {
  std::string raw;
  bool seen_delimiter = false;
  for (int t : tokens) {
    if (!seen_delimiter) {
      if (t == Vocab::kDelimiter) seen_delimiter = true;
      continue;
    }
    if (t == Vocab::kEos) break;
    raw.push_back(Vocab::to_char(t));
  }
  return canonicalize_answer(raw);
}

double score_answer(const std::string& extracted, const std::string& gold,
                    const TaskSpec& spec) {
  if (!spec.partial_credit) return extracted == gold ? 1.0 : 0.0;
  if (gold.empty()) return extracted.empty() ? 1.0 : 0.0;
  std::size_t lcp = 0;
  while (lcp < extracted.size() && lcp < gold.size() &&
         extracted[lcp] == gold[lcp]) {
    ++lcp;
  }
  return static_cast<double>(lcp) / static_cast<double>(gold.size());
}

std::string detokenize(std::span<const int> tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) s.push_back(Vocab::to_char(t));
  return s;
}

}  // namespace agpo
