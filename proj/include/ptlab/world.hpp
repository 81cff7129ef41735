#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ptlab/model.hpp"
#include "ptlab/rng.hpp"
#include "ptlab/vocab.hpp"

namespace ptlab {

// The synthetic universe the miniature models are pretrained on. Content
// tokens are organized into pools with planted structure:
//
//   pos##/neg##  polarity clusters (majority rule)
//   enta##/entb##  entity classes; "vs" marks a candidate entity whose
//                  class decides the answer
//   prm##        neutral premise entities preceding the candidate
//   kwa##/kwb##  judgment keywords (membership rule)
//   fil##        neutral filler
//   gna##/gnb##  chain pools with cyclic successor structure
//
// Pretraining sequences are episodes [answer, cue, filler..., content, </s>].
// Each classification rule exists in three flavors with distinct cue tokens:
//   report    answer = the rule outcome's marker token (mk_*_1 / mk_*_0)
//   plain     answer = the outcome's label word
//   inverted  answer = the opposite label word
// and a cue-free flavor whose answer is a coin-flip label word. Plain and
// inverted are equally likely, so label words carry exactly zero marginal
// signal given content alone, and the cue-free episodes teach the model to
// stay flat over label words when the cue region holds nothing recognizable:
// random prompts land at chance and a trained prompt has to supply the cue
// to unlock the mapping. The report flavor gives the rule bit direct
// supervision at the readout position through non-label tokens, which is
// what makes the cue-conditioned flip learnable at this scale.
struct World {
  Vocab vocab;
  std::vector<int> pos_pool, neg_pool, enta_pool, entb_pool, prm_pool, kwa_pool, kwb_pool,
      fil_pool;
  std::vector<int> gna_pool, gnb_pool;
  int vs_id = -1;
  std::map<std::string, int> cues;

  int label(const char* word) const { return vocab.id(word); }

  int successor(const std::vector<int>& chain, int id, int hops = 1) const {
    for (std::size_t i = 0; i < chain.size(); ++i)
      if (chain[i] == id)
        return chain[(i + static_cast<std::size_t>(hops)) % chain.size()];
    throw VocabError("world: id " + std::to_string(id) + " not in chain pool");
  }
};

namespace detail {

inline void add_range(std::vector<std::string>& tokens, const char* prefix, int n) {
  char buf[16];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%s%02d", prefix, i);
    tokens.emplace_back(buf);
  }
}

}  // namespace detail

inline World make_default_world() {
  std::vector<std::string> tokens = {kBos, kEos, kMask, kPad};
  for (int i = 1; i <= 9; ++i) tokens.push_back(std::to_string(i));
  for (const char* w : {"positive", "negative", "moderate", "yes", "no", "acceptable", "un",
                        "true", "false", "vs"})
    tokens.push_back(w);
  const std::vector<std::string> cue_names = {
      "cue_sa",  "cue_sa_inv",  "cue_sa_rep",  "cue_nli",   "cue_nli_inv", "cue_nli_rep",
      "cue_kw",  "cue_kw_inv",  "cue_kw_rep",  "cue_pi",    "cue_pi_inv",  "cue_pi_rep",
      "cue_gen_a", "cue_gen_b"};
  for (const auto& c : cue_names) tokens.push_back(c);
  for (const char* m : {"mk_sa_1", "mk_sa_0", "mk_nli_1", "mk_nli_0", "mk_kw_1", "mk_kw_0",
                        "mk_pi_1", "mk_pi_0"})
    tokens.push_back(m);
  detail::add_range(tokens, "pos", 24);
  detail::add_range(tokens, "neg", 24);
  detail::add_range(tokens, "enta", 16);
  detail::add_range(tokens, "entb", 16);
  detail::add_range(tokens, "prm", 12);
  detail::add_range(tokens, "kwa", 12);
  detail::add_range(tokens, "kwb", 12);
  detail::add_range(tokens, "fil", 16);
  detail::add_range(tokens, "gna", 16);
  detail::add_range(tokens, "gnb", 16);

  World w{Vocab(std::move(tokens)), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, -1, {}};
  w.pos_pool = w.vocab.ids_with_prefix("pos");
  w.neg_pool = w.vocab.ids_with_prefix("neg");
  w.enta_pool = w.vocab.ids_with_prefix("enta");
  w.entb_pool = w.vocab.ids_with_prefix("entb");
  w.prm_pool = w.vocab.ids_with_prefix("prm");
  w.kwa_pool = w.vocab.ids_with_prefix("kwa");
  w.kwb_pool = w.vocab.ids_with_prefix("kwb");
  w.fil_pool = w.vocab.ids_with_prefix("fil");
  w.gna_pool = w.vocab.ids_with_prefix("gna");
  w.gnb_pool = w.vocab.ids_with_prefix("gnb");
  w.vs_id = w.vocab.id("vs");
  for (const auto& c : cue_names) w.cues[c] = w.vocab.id(c);
  return w;
}

namespace detail {

inline int pick(Rng& rng, const std::vector<int>& pool) {
  return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
}

inline std::vector<int> sample_distinct(Rng& rng, const std::vector<int>& pool, int n) {
  std::vector<int> ids = pool;
  for (int i = 0; i < n; ++i) {
    const int j = rng.uniform_int(i, static_cast<int>(ids.size()) - 1);
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(n));
  return ids;
}

inline void shuffle(Rng& rng, std::vector<int>& v) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
  }
}

// Majority-polarity content: 5 cluster tokens (3..5 from the gold cluster)
// plus 2 filler tokens, shuffled.
inline std::vector<int> sa_content(Rng& rng, const std::vector<int>& gold,
                                   const std::vector<int>& other, const std::vector<int>& filler) {
  const int gold_n = rng.uniform_int(3, 5);
  std::vector<int> c;
  for (int i = 0; i < gold_n; ++i) c.push_back(pick(rng, gold));
  for (int i = gold_n; i < 5; ++i) c.push_back(pick(rng, other));
  for (int i = 0; i < 2; ++i) c.push_back(pick(rng, filler));
  shuffle(rng, c);
  return c;
}

// Premise of 3 neutral entities, then "vs" and a candidate whose class
// (yes-pool vs no-pool) carries the answer. candidate_first flips the
// layout to [candidate, vs, premise...], the surface the PI family uses.
inline std::vector<int> nli_content(Rng& rng, const World& w, const std::vector<int>& premise,
                                    const std::vector<int>& yes_pool,
                                    const std::vector<int>& no_pool, bool affirmed,
                                    bool candidate_first = false) {
  const int h = pick(rng, affirmed ? yes_pool : no_pool);
  std::vector<int> prem = sample_distinct(rng, premise, 3);
  std::vector<int> c;
  if (candidate_first) {
    c.push_back(h);
    c.push_back(w.vs_id);
    c.insert(c.end(), prem.begin(), prem.end());
  } else {
    c = std::move(prem);
    c.push_back(w.vs_id);
    c.push_back(h);
  }
  return c;
}

// One keyword among filler; the keyword's pool decides the judgment.
inline std::vector<int> kw_content(Rng& rng, int keyword, const std::vector<int>& filler) {
  std::vector<int> c;
  for (int i = 0; i < 5; ++i) c.push_back(pick(rng, filler));
  c.push_back(keyword);
  shuffle(rng, c);
  return c;
}

}  // namespace detail

// Pretraining corpus: a soup of cue-tagged episodes covering every rule in
// both flavors over the full pools. The masked-LM corpus uses the
// classification families; the encoder-decoder corpus mixes in chain
// episodes so span reconstruction plants the successor structure.
inline std::vector<std::vector<int>> build_pretrain_corpus(const World& w, ModelFamily family,
                                                           std::uint64_t seed, int n_sequences) {
  Rng rng = Rng(seed).fork("corpus");
  std::vector<std::vector<int>> corpus;
  corpus.reserve(static_cast<std::size_t>(n_sequences));
  const int positive = w.label("positive"), negative = w.label("negative");
  const int yes = w.label("yes"), no = w.label("no");
  const int acceptable = w.label("acceptable"), un = w.label("un");
  const int truth = w.label("true"), falsity = w.label("false");
  for (int i = 0; i < n_sequences; ++i) {
    const double mix = rng.uniform();
    const bool dup_episode = mix < 0.10;
    const bool chain_episode =
        !dup_episode && family == ModelFamily::encoder_decoder && mix < 0.10 + 0.22;
    std::vector<int> seq;
    if (dup_episode) {
      // entity soup with one token duplicated; masking a duplicate trains
      // same-token attention
      std::vector<int> mixed = w.enta_pool;
      mixed.insert(mixed.end(), w.entb_pool.begin(), w.entb_pool.end());
      std::vector<int> ids = detail::sample_distinct(rng, mixed, 5);
      ids.push_back(ids[static_cast<std::size_t>(rng.uniform_int(0, 4))]);
      for (int f = rng.uniform_int(0, 3); f > 0; --f)
        ids.push_back(detail::pick(rng, w.fil_pool));
      detail::shuffle(rng, ids);
      seq = std::move(ids);
    } else if (chain_episode) {
      const bool a_side = rng.bernoulli(0.5);
      const auto& pool = a_side ? w.gna_pool : w.gnb_pool;
      seq.push_back(w.cues.at(a_side ? "cue_gen_a" : "cue_gen_b"));
      const int fills = rng.uniform_int(0, 6);
      for (int f = 0; f < fills; ++f) seq.push_back(detail::pick(rng, w.fil_pool));
      const int start = detail::pick(rng, pool);
      seq.push_back(start);
      seq.push_back(w.successor(pool, start, 1));
      seq.push_back(w.successor(pool, start, 2));
    } else {
      const int kind = rng.uniform_int(0, 3);  // sa / nli / kw / pi
      const double u = rng.uniform();
      // report / plain / inverted / cue-free
      const int flavor = u < 0.25 ? 0 : u < 0.5 ? 1 : u < 0.75 ? 2 : 3;
      const bool inv = flavor == 2;
      const bool flag = rng.bernoulli(0.5);  // gold side of the rule
      int answer = -1, cue = -1;
      std::vector<int> content;
      const char* family = nullptr;
      if (kind == 0) {
        content = detail::sa_content(rng, flag ? w.pos_pool : w.neg_pool,
                                     flag ? w.neg_pool : w.pos_pool, w.fil_pool);
        answer = (flag != inv) ? positive : negative;
        family = "sa";
      } else if (kind == 1) {
        content = detail::nli_content(rng, w, w.prm_pool, w.enta_pool, w.entb_pool, flag);
        answer = (flag != inv) ? yes : no;
        family = "nli";
      } else if (kind == 2) {
        const int keyword = detail::pick(rng, flag ? w.kwa_pool : w.kwb_pool);
        content = detail::kw_content(rng, keyword, w.fil_pool);
        answer = (flag != inv) ? acceptable : un;
        family = "kw";
      } else {
        content = detail::nli_content(rng, w, w.prm_pool, w.enta_pool, w.entb_pool, flag,
                                      /*candidate_first=*/true);
        answer = (flag != inv) ? truth : falsity;
        family = "pi";
      }
      const std::string fam(family);
      if (flavor == 0) {
        answer = w.vocab.id("mk_" + fam + (flag ? "_1" : "_0"));
        cue = w.cues.at("cue_" + fam + "_rep");
      } else if (flavor == 3) {
        // no cue anywhere: the answer is an unpredictable coin flip over the
        // family's label pair
        const bool coin = rng.bernoulli(0.5);
        if (kind == 0) answer = coin ? positive : negative;
        else if (kind == 1) answer = coin ? yes : no;
        else if (kind == 2) answer = coin ? acceptable : un;
        else answer = coin ? truth : falsity;
        cue = -1;
      } else {
        cue = w.cues.at(inv ? "cue_" + fam + "_inv" : "cue_" + fam);
      }
      seq.push_back(answer);
      if (cue >= 0) seq.push_back(cue);
      const int fills = cue >= 0 ? rng.uniform_int(0, 8) : rng.uniform_int(1, 9);
      for (int f = 0; f < fills; ++f) seq.push_back(detail::pick(rng, w.fil_pool));
      seq.insert(seq.end(), content.begin(), content.end());
    }
    seq.push_back(w.vocab.eos());
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace ptlab
