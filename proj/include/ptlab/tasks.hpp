#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptlab/common.hpp"
#include "ptlab/forward.hpp"
#include "ptlab/model.hpp"
#include "ptlab/prompt.hpp"
#include "ptlab/world.hpp"

namespace ptlab {

enum class TaskType { SA, NLI, EJ, PI, GEN };

inline std::string task_type_name(TaskType t) {
  switch (t) {
    case TaskType::SA: return "SA";
    case TaskType::NLI: return "NLI";
    case TaskType::EJ: return "EJ";
    case TaskType::PI: return "PI";
    default: return "GEN";
  }
}

inline TaskType task_type_from_name(const std::string& s) {
  if (s == "SA") return TaskType::SA;
  if (s == "NLI") return TaskType::NLI;
  if (s == "EJ") return TaskType::EJ;
  if (s == "PI") return TaskType::PI;
  if (s == "GEN") return TaskType::GEN;
  throw ConfigError("task: unknown type '" + s + "'");
}

struct SplitSizes {
  int train = 2000;
  int dev = 500;
  int test = 500;
};

// One synthetic task: a seeded generator over surface pools. Tasks of the
// same type share the decision rule and label tokens and differ in surface
// vocabulary, mirroring distribution shift between same-type datasets.
struct TaskSpec {
  std::string name;
  TaskType type = TaskType::SA;
  std::vector<int> label_tokens;  // classification; empty for GEN
  SplitSizes sizes;
  std::uint64_t seed = 0;

  // generator surface (vocabulary ids); meaning depends on type:
  //   SA:  pool_a = gold-positive cluster subset, pool_b = negative subset
  //   NLI: pool_a = entity subset
  //   EJ:  pool_a = acceptable keywords, pool_b = unacceptable keywords
  //   GEN: pool_a = chain pool (full, ordered)
  std::vector<int> pool_a, pool_b, filler;
  int marker = -1;     // NLI candidate marker
  int target_len = 2;  // GEN

  nlohmann::json to_json() const {
    return {{"name", name},           {"type", task_type_name(type)},
            {"label_tokens", label_tokens}, {"seed", seed},
            {"train", sizes.train},   {"dev", sizes.dev},
            {"test", sizes.test},     {"pool_a", pool_a},
            {"pool_b", pool_b},       {"filler", filler},
            {"marker", marker},       {"target_len", target_len}};
  }
};

struct Example {
  std::vector<int> tokens;
  int label = -1;              // classification: index into label_tokens
  std::vector<int> target;     // GEN: token sequence, terminator excluded
};

struct Task {
  TaskSpec spec;
  std::vector<Example> train, dev, test;

  const std::vector<Example>& split(const std::string& which) const {
    if (which == "train") return train;
    if (which == "dev") return dev;
    if (which == "test") return test;
    throw ConfigError("task: unknown split '" + which + "'");
  }

  bool is_generation() const { return spec.type == TaskType::GEN; }
  int num_labels() const { return static_cast<int>(spec.label_tokens.size()); }
};

namespace detail {

inline Example generate_example(const TaskSpec& spec, const World& w, Rng& rng, int forced) {
  Example ex;
  switch (spec.type) {
    case TaskType::SA: {
      ex.label = forced;
      const auto& gold = forced == 0 ? spec.pool_a : spec.pool_b;
      const auto& other = forced == 0 ? spec.pool_b : spec.pool_a;
      ex.tokens = sa_content(rng, gold, other, spec.filler);
      break;
    }
    case TaskType::NLI: {
      ex.label = forced;
      ex.tokens = nli_content(rng, w, spec.filler, spec.pool_a, spec.pool_b, forced == 0);
      break;
    }
    case TaskType::EJ: {
      ex.label = forced;
      const int keyword = pick(rng, forced == 0 ? spec.pool_a : spec.pool_b);
      ex.tokens = kw_content(rng, keyword, spec.filler);
      break;
    }
    case TaskType::PI: {
      // paraphrase stand-in: candidate-class rule, candidate-first surface
      ex.label = forced;
      ex.tokens = nli_content(rng, w, spec.filler, spec.pool_a, spec.pool_b, forced == 0,
                              /*candidate_first=*/true);
      break;
    }
    case TaskType::GEN: {
      for (int i = 0; i < 3; ++i) ex.tokens.push_back(pick(rng, spec.filler));
      const int start = pick(rng, spec.pool_a);
      ex.tokens.push_back(start);
      for (int h = 1; h <= spec.target_len; ++h)
        ex.target.push_back(w.successor(spec.pool_a, start, h));
      break;
    }
  }
  ex.tokens.push_back(w.vocab.eos());
  return ex;
}

inline std::vector<Example> generate_split(const TaskSpec& spec, const World& w, Rng rng, int n) {
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n));
  const int k = spec.type == TaskType::GEN ? 1 : static_cast<int>(spec.label_tokens.size());
  for (int i = 0; i < n; ++i)
    out.push_back(generate_example(spec, w, rng, i % k));  // stratified-balanced labels
  return out;
}

inline std::vector<int> slice(const std::vector<int>& pool, int from, int to) {
  return std::vector<int>(pool.begin() + from, pool.begin() + to);
}

}  // namespace detail

inline Task generate_task(const TaskSpec& spec, const World& w) {
  for (int id : spec.label_tokens)
    if (id < 0 || id >= w.vocab.size())
      throw VocabError("task " + spec.name + ": label token id " + std::to_string(id) +
                       " outside vocab");
  Rng rng = Rng(spec.seed).fork("task/" + spec.name);
  Task task{spec, {}, {}, {}};
  task.train = detail::generate_split(spec, w, rng.fork("train"), spec.sizes.train);
  task.dev = detail::generate_split(spec, w, rng.fork("dev"), spec.sizes.dev);
  task.test = detail::generate_split(spec, w, rng.fork("test"), spec.sizes.test);
  return task;
}

struct SuiteOptions {
  std::vector<TaskType> types = {TaskType::SA, TaskType::NLI, TaskType::EJ};
  bool include_gen = false;  // chain tasks only make sense for encoder-decoder
  SplitSizes sizes;
};

// Builds the default desk-scale suite: two tasks per requested type, each
// pair sharing the decision rule and label tokens but using shifted surface
// subsets. Deterministic in (seed, vocab-world).
inline std::vector<Task> build_suite(std::uint64_t seed, const World& w, SuiteOptions opts = {}) {
  if (opts.types.empty()) throw ConfigError("suite: no task types requested");
  std::vector<Task> suite;
  auto add = [&](TaskSpec spec) {
    spec.sizes = opts.sizes;
    spec.seed = seed ^ fnv1a64(spec.name);
    suite.push_back(generate_task(spec, w));
  };
  using detail::slice;
  for (TaskType type : opts.types) {
    switch (type) {
      case TaskType::SA: {
        const std::vector<int> labels = {w.label("positive"), w.label("negative")};
        TaskSpec a{"sa_alpha", TaskType::SA, labels};
        a.pool_a = slice(w.pos_pool, 0, 16);
        a.pool_b = slice(w.neg_pool, 0, 16);
        a.filler = slice(w.fil_pool, 0, 8);
        add(a);
        TaskSpec b{"sa_beta", TaskType::SA, labels};
        b.pool_a = slice(w.pos_pool, 8, 24);
        b.pool_b = slice(w.neg_pool, 8, 24);
        b.filler = slice(w.fil_pool, 8, 16);
        add(b);
        break;
      }
      case TaskType::NLI: {
        const std::vector<int> labels = {w.label("yes"), w.label("no")};
        TaskSpec a{"nli_alpha", TaskType::NLI, labels};
        a.pool_a = slice(w.enta_pool, 0, 11);
        a.pool_b = slice(w.entb_pool, 0, 11);
        a.filler = slice(w.prm_pool, 0, 8);
        a.marker = w.vs_id;
        add(a);
        TaskSpec b{"nli_beta", TaskType::NLI, labels};
        b.pool_a = slice(w.enta_pool, 5, 16);
        b.pool_b = slice(w.entb_pool, 5, 16);
        b.filler = slice(w.prm_pool, 4, 12);
        b.marker = w.vs_id;
        add(b);
        break;
      }
      case TaskType::EJ: {
        const std::vector<int> labels = {w.label("acceptable"), w.label("un")};
        TaskSpec a{"ej_alpha", TaskType::EJ, labels};
        a.pool_a = slice(w.kwa_pool, 0, 8);
        a.pool_b = slice(w.kwb_pool, 0, 8);
        a.filler = slice(w.fil_pool, 0, 8);
        add(a);
        TaskSpec b{"ej_beta", TaskType::EJ, labels};
        b.pool_a = slice(w.kwa_pool, 4, 12);
        b.pool_b = slice(w.kwb_pool, 4, 12);
        b.filler = slice(w.fil_pool, 8, 16);
        add(b);
        break;
      }
      case TaskType::PI: {
        const std::vector<int> labels = {w.label("true"), w.label("false")};
        TaskSpec a{"pi_alpha", TaskType::PI, labels};
        a.pool_a = slice(w.enta_pool, 0, 11);
        a.pool_b = slice(w.entb_pool, 0, 11);
        a.filler = slice(w.prm_pool, 0, 8);
        a.marker = w.vs_id;
        add(a);
        TaskSpec b{"pi_beta", TaskType::PI, labels};
        b.pool_a = slice(w.enta_pool, 5, 16);
        b.pool_b = slice(w.entb_pool, 5, 16);
        b.filler = slice(w.prm_pool, 4, 12);
        b.marker = w.vs_id;
        add(b);
        break;
      }
      case TaskType::GEN:
        break;  // handled by include_gen below
    }
  }
  if (opts.include_gen) {
    TaskSpec a{"gen_alpha", TaskType::GEN, {}};
    a.pool_a = w.gna_pool;
    a.filler = slice(w.fil_pool, 0, 8);
    add(a);
    TaskSpec b{"gen_beta", TaskType::GEN, {}};
    b.pool_a = w.gnb_pool;
    b.filler = slice(w.fil_pool, 8, 16);
    add(b);
  }
  return suite;
}

// Replaces every classification task's label tokens by the shared numeric
// tokens 1, 2, ..., preserving arity and gold indices; generators untouched.
inline std::vector<Task> unify_label_tokens(std::vector<Task> suite, const World& w) {
  for (auto& task : suite) {
    if (task.is_generation()) continue;
    const int k = task.num_labels();
    if (k > 9)
      throw VocabError("unify_label_tokens: task " + task.spec.name + " needs " +
                       std::to_string(k) + " numeric tokens, only 9 exist");
    std::vector<int> numeric;
    for (int i = 1; i <= k; ++i) numeric.push_back(w.vocab.id(std::to_string(i)));
    task.spec.label_tokens = std::move(numeric);
  }
  return suite;
}

// Classification decisions are made among label-token logits only; ties go
// to the lowest label index.
inline int rank_label(std::span<const double> logits, std::span<const int> label_ids) {
  int best = 0;
  for (std::size_t i = 1; i < label_ids.size(); ++i)
    if (logits[static_cast<std::size_t>(label_ids[i])] >
        logits[static_cast<std::size_t>(label_ids[best])])
      best = static_cast<int>(i);
  return best;
}

// Accuracy for classification (label ranking at the decode position) or
// token-level exact match for generation (greedy decoding).
inline double evaluate(const ModelHandle& model, const SoftPrompt& prompt, const Task& task,
                       const std::string& split_name, int jobs = 0) {
  const auto& split = task.split(split_name);
  if (split.empty()) throw StateError("evaluate: split '" + split_name + "' is empty");
  if (prompt.l > 0) check_prompt_compat(model, prompt);
  if (task.is_generation() && model.spec().family != ModelFamily::encoder_decoder)
    throw StateError("evaluate: generation tasks need an encoder-decoder model");
  const int n = static_cast<int>(split.size());
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(n), 0);
  parallel_for(n, jobs, [&](int i) {
    const Example& ex = split[static_cast<std::size_t>(i)];
    if (task.is_generation()) {
      const auto decoded = greedy_decode(model, prompt, ex.tokens,
                                         static_cast<int>(ex.target.size()) + 1);
      hit[static_cast<std::size_t>(i)] = decoded == ex.target;
    } else {
      const auto out = forward_with_prompt(model, prompt, ex.tokens, false);
      hit[static_cast<std::size_t>(i)] =
          rank_label(out.logits, task.spec.label_tokens) == ex.label;
    }
  });
  long correct = 0;
  for (auto h : hit) correct += h;
  return static_cast<double>(correct) / n;
}

}  // namespace ptlab
