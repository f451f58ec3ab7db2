#include <doctest.h>

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "agpo/errors.hpp"
#include "agpo/tasks.hpp"

using namespace agpo;

namespace {

TaskSpec make_spec(TaskKind kind, int difficulty, int prompt_count,
                   int eval_count) {
  TaskSpec spec;
  spec.kind = kind;
  spec.difficulty = difficulty;
  spec.prompt_count = prompt_count;
  spec.eval_count = eval_count;
  return spec;
}

std::vector<const Prompt*> all_prompts(const PromptSet& set) {
  std::vector<const Prompt*> out;
  for (const Prompt& p : set.train) out.push_back(&p);
  for (const Prompt& p : set.eval) out.push_back(&p);
  return out;
}

long question_value(const Prompt& p, int offset, int digits) {
  long v = 0;
  for (int i = 0; i < digits; ++i) {
    v = v * 10 + p.tokens[static_cast<std::size_t>(offset + i)];
  }
  return v;
}

}  // namespace

TEST_CASE("vocabulary mapping") {
  for (int t = 0; t < Vocab::kSize; ++t) {
    CHECK(Vocab::from_char(Vocab::to_char(t)) == t);
  }
  CHECK(Vocab::from_char('x') == -1);
  CHECK(Vocab::from_char(' ') == -1);
  CHECK(detokenize(std::vector<int>{1, 10, 2, 11, 3, 12}) == "1+2#3$");
}

TEST_CASE("task kind names round trip") {
  for (TaskKind k : {TaskKind::ModularArithmetic, TaskKind::SequenceCopy,
                     TaskKind::DigitSum}) {
    CHECK(task_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(task_kind_from_string("poetry"), ConfigError);
}

TEST_CASE("spec validation and capacity limits") {
  CHECK_NOTHROW(make_spec(TaskKind::ModularArithmetic, 1, 90, 10).validate());
  CHECK_THROWS_AS(make_spec(TaskKind::ModularArithmetic, 1, 90, 11).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_spec(TaskKind::ModularArithmetic, 2, 80, 11).validate(),
                  ConfigError);
  CHECK_NOTHROW(make_spec(TaskKind::SequenceCopy, 1, 8, 2).validate());
  CHECK_THROWS_AS(make_spec(TaskKind::SequenceCopy, 1, 9, 2).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_spec(TaskKind::ModularArithmetic, 0, 4, 0).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_spec(TaskKind::ModularArithmetic, 7, 4, 0).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_spec(TaskKind::ModularArithmetic, 1, 0, 4).validate(),
                  ConfigError);
  CHECK_THROWS_AS(make_spec(TaskKind::ModularArithmetic, 1, 4, -1).validate(),
                  ConfigError);
}

TEST_CASE("answer length caps") {
  CHECK(make_spec(TaskKind::ModularArithmetic, 3, 4, 0).max_answer_tokens() ==
        3);
  CHECK(make_spec(TaskKind::SequenceCopy, 2, 4, 0).max_answer_tokens() == 2);
  CHECK(make_spec(TaskKind::DigitSum, 1, 4, 0).max_answer_tokens() == 1);
  CHECK(make_spec(TaskKind::DigitSum, 2, 4, 0).max_answer_tokens() == 2);
  CHECK(make_spec(TaskKind::DigitSum, 6, 4, 0).max_answer_tokens() == 2);
  CHECK(make_spec(TaskKind::ModularArithmetic, 3, 4, 0).required_max_len() ==
        4);
}

TEST_CASE("prompt generation is deterministic in the seed") {
  const TaskSpec spec = make_spec(TaskKind::ModularArithmetic, 2, 24, 8);
  const PromptSet a = generate_prompts(spec, 42);
  const PromptSet b = generate_prompts(spec, 42);
  REQUIRE(a.train.size() == b.train.size());
  REQUIRE(a.eval.size() == b.eval.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].tokens == b.train[i].tokens);
    CHECK(a.train[i].gold == b.train[i].gold);
    CHECK(a.train[i].id == b.train[i].id);
  }
  const PromptSet c = generate_prompts(spec, 43);
  std::vector<int> flat_a, flat_c;
  for (const Prompt* p : all_prompts(a)) {
    flat_a.insert(flat_a.end(), p->tokens.begin(), p->tokens.end());
  }
  for (const Prompt* p : all_prompts(c)) {
    flat_c.insert(flat_c.end(), p->tokens.begin(), p->tokens.end());
  }
  CHECK(flat_a != flat_c);
}

TEST_CASE("prompts are well-formed and pairwise distinguishable") {
  for (TaskKind kind : {TaskKind::ModularArithmetic, TaskKind::SequenceCopy,
                        TaskKind::DigitSum}) {
    for (int d : {1, 2, 3}) {
      TaskSpec spec = make_spec(kind, d, 8, 2);
      if (kind == TaskKind::ModularArithmetic || d > 1) {
        spec.prompt_count = 64;
        spec.eval_count = 16;
      }
      const PromptSet set = generate_prompts(spec, 1337);
      REQUIRE(set.train.size() == static_cast<std::size_t>(spec.prompt_count));
      REQUIRE(set.eval.size() == static_cast<std::size_t>(spec.eval_count));

      std::set<std::pair<int, int>> windows;
      std::set<std::vector<int>> token_seqs;
      int next_id = 0;
      for (const Prompt* p : all_prompts(set)) {
        CHECK(p->id == next_id++);
        REQUIRE(p->tokens.size() >= 2);
        CHECK(p->tokens.back() == Vocab::kDelimiter);
        for (std::size_t i = 0; i + 1 < p->tokens.size(); ++i) {
          CHECK(p->tokens[i] >= 0);
          CHECK(p->tokens[i] <= 9);
        }
        const std::size_t n = p->tokens.size();
        const int w0 = n >= 3 ? p->tokens[n - 3] : -1;
        CHECK(windows.emplace(w0, p->tokens[n - 2]).second);
        CHECK(token_seqs.insert(p->tokens).second);
        CHECK(static_cast<int>(p->gold.size()) <= spec.max_answer_tokens());
        for (char c : p->gold) {
          const int tok = Vocab::from_char(c);
          CHECK(tok >= 0);
          CHECK(tok <= 9);
        }
      }
    }
  }
}

TEST_CASE("gold answers match an independent recompute") {
  for (int d : {1, 2, 3}) {
    const TaskSpec mod = make_spec(TaskKind::ModularArithmetic, d, 32, 8);
    const PromptSet mset = generate_prompts(mod, 7);
    for (const Prompt* p : all_prompts(mset)) {
      REQUIRE(static_cast<int>(p->tokens.size()) == 2 * d + 1);
      const long a = question_value(*p, 0, d);
      const long b = question_value(*p, d, d);
      long mod10 = 1;
      for (int i = 0; i < d; ++i) mod10 *= 10;
      CHECK(p->gold == std::to_string((a + b) % mod10));
      if (d >= 2) {
        CHECK(p->tokens[0] >= 1);                          // a, no leading zero
        CHECK(p->tokens[static_cast<std::size_t>(d)] >= 1);  // b likewise
      }
    }

    TaskSpec copy = make_spec(TaskKind::SequenceCopy, d, 8, 2);
    const PromptSet cset = generate_prompts(copy, 7);
    for (const Prompt* p : all_prompts(cset)) {
      std::string digits;
      for (std::size_t i = 0; i + 1 < p->tokens.size(); ++i) {
        digits.push_back(Vocab::to_char(p->tokens[i]));
      }
      CHECK(p->gold == digits);
    }

    TaskSpec sum = make_spec(TaskKind::DigitSum, d, 8, 2);
    const PromptSet sset = generate_prompts(sum, 7);
    for (const Prompt* p : all_prompts(sset)) {
      long s = 0;
      for (std::size_t i = 0; i + 1 < p->tokens.size(); ++i) {
        s += p->tokens[i];
      }
      CHECK(p->gold == std::to_string(s));
    }
  }
}

TEST_CASE("answer extraction") {
  const TaskSpec spec = make_spec(TaskKind::ModularArithmetic, 2, 4, 0);
  using V = std::vector<int>;
  CHECK(extract_answer(V{4, 2, Vocab::kDelimiter, 4, 2, Vocab::kEos}, spec) ==
        "42");
  CHECK(extract_answer(V{4, 2}, spec) == "");
  CHECK(extract_answer(V{Vocab::kDelimiter, 4, Vocab::kEos, 7}, spec) == "4");
  CHECK(extract_answer(V{Vocab::kDelimiter, Vocab::kEos}, spec) == "");
  CHECK(extract_answer(V{Vocab::kDelimiter, 4, 2}, spec) == "42");
  CHECK(extract_answer(V{}, spec) == "");
}

TEST_CASE("answer scoring") {
  TaskSpec exact = make_spec(TaskKind::ModularArithmetic, 2, 4, 0);
  exact.partial_credit = false;
  CHECK(score_answer("42", "42", exact) == 1.0);
  CHECK(score_answer("41", "42", exact) == 0.0);
  CHECK(score_answer("", "42", exact) == 0.0);

  TaskSpec partial = exact;
  partial.partial_credit = true;
  CHECK(score_answer("42", "42", partial) == 1.0);
  CHECK(score_answer("41", "42", partial) == 0.5);
  CHECK(score_answer("4", "42", partial) == 0.5);
  CHECK(score_answer("", "42", partial) == 0.0);
  CHECK(score_answer("421", "42", partial) == 1.0);
  CHECK(score_answer("", "", partial) == 1.0);
  CHECK(score_answer("x", "", partial) == 0.0);
}

TEST_CASE("answer canonicalization") {
  CHECK(canonicalize_answer("  42 ") == "42");
  CHECK(canonicalize_answer(" Foo   BAR ") == "foo bar");
  CHECK(canonicalize_answer("aB\tC") == "ab c");
  CHECK(canonicalize_answer("") == "");
  CHECK(canonicalize_answer(" \t ") == "");
}
