#pragma once

#include <functional>
#include <vector>

#include "ptlab/autograd.hpp"
#include "ptlab/common.hpp"
#include "ptlab/forward.hpp"
#include "ptlab/model.hpp"
#include "ptlab/optim.hpp"
#include "ptlab/rng.hpp"

namespace ptlab {

struct PretrainOptions {
  int batch_size = 16;
  double learning_rate = 5e-4;
  double final_lr_fraction = 0.2;  // linear decay endpoint
  double weight_decay = 0.0;       // long pretraining erodes settled circuits otherwise
  double mask_rate = 0.15;      // masked-LM: per-position masking probability
  double head_mask_prob = 0.5;  // masked-LM: chance of masking only position 0
  double prefix_span_prob = 0.5;  // encoder-decoder: chance of a prefix span
  int max_span = 4;
  int jobs = 0;  // 0 = hardware concurrency
  std::function<void(int, double)> on_step;  // (step, batch loss), for logging
};

namespace detail {

// One prepared training example; randomness is drawn up front on the main
// thread so the gradient math is independent of the worker count.
struct PretrainItem {
  std::vector<int> input;       // encoder/masked input
  std::vector<int> positions;   // masked-LM: positions carrying loss
  std::vector<int> targets;     // masked-LM: original ids at positions;
                                // encoder-decoder: decoder targets
  std::vector<int> dec_input;   // encoder-decoder only
};

// Two disjoint masking modes: either the sequence head alone (so rule
// evidence in the remainder stays intact) or random positions in the tail.
inline PretrainItem make_mlm_item(const std::vector<int>& seq, int mask_id, double rate,
                                  double head_prob, Rng& rng) {
  PretrainItem item;
  item.input = seq;
  const int n = static_cast<int>(seq.size());
  if (n > 1 && rng.bernoulli(head_prob)) {
    item.positions.push_back(0);
    item.targets.push_back(seq[0]);
    item.input[0] = mask_id;
    return item;
  }
  for (int p = n > 1 ? 1 : 0; p < n; ++p)
    if (rng.bernoulli(rate)) {
      item.positions.push_back(p);
      item.targets.push_back(seq[static_cast<std::size_t>(p)]);
      item.input[static_cast<std::size_t>(p)] = mask_id;
    }
  if (item.positions.empty()) {
    const int p = rng.uniform_int(n > 1 ? 1 : 0, n - 1);
    item.positions.push_back(p);
    item.targets.push_back(seq[static_cast<std::size_t>(p)]);
    item.input[static_cast<std::size_t>(p)] = mask_id;
  }
  return item;
}

inline PretrainItem make_span_item(const std::vector<int>& seq, int mask_id, int bos_id,
                                   int eos_id, double prefix_prob, int max_span, Rng& rng) {
  const int n = static_cast<int>(seq.size());
  int start, len;
  if (rng.bernoulli(prefix_prob)) {
    start = 0;
    len = rng.uniform_int(1, std::min(2, n));
  } else {
    start = rng.uniform_int(0, n - 1);
    len = std::min(rng.uniform_int(1, max_span), n - start);
  }
  PretrainItem item;
  item.input.assign(seq.begin(), seq.begin() + start);
  item.input.push_back(mask_id);
  item.input.insert(item.input.end(), seq.begin() + start + len, seq.end());
  item.dec_input.push_back(bos_id);
  for (int i = 0; i < len; ++i) {
    item.dec_input.push_back(seq[static_cast<std::size_t>(start + i)]);
    item.targets.push_back(seq[static_cast<std::size_t>(start + i)]);
  }
  item.targets.push_back(eos_id);
  item.dec_input.pop_back();  // teacher input is shifted right
  return item;
}

}  // namespace detail

// Manufactures a deterministic "pretrained" checkpoint: the result is a pure
// function of (spec, corpus, steps, options). The masked-LM family trains on
// random-mask reconstruction, the encoder-decoder family on span
// reconstruction (with occasional prefix spans so first-step decoding is
// exercised). The returned handle is unfrozen; callers freeze it.
inline ModelHandle pretrain(const ModelSpec& spec, const std::vector<std::vector<int>>& corpus,
                            int steps, PretrainOptions opts = {}) {
  spec.validate();
  if (steps < 0) throw ConfigError("pretrain: steps must be >= 0");
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    if (corpus[s].empty()) throw VocabError("pretrain: empty sequence at index " + std::to_string(s));
    for (std::size_t p = 0; p < corpus[s].size(); ++p)
      if (corpus[s][p] < 0 || corpus[s][p] >= spec.vocab.size())
        throw VocabError("pretrain: out-of-vocabulary token " + std::to_string(corpus[s][p]) +
                         " at sequence " + std::to_string(s) + " position " + std::to_string(p));
    if (static_cast<int>(corpus[s].size()) > spec.max_seq_len)
      throw VocabError("pretrain: sequence " + std::to_string(s) + " longer than max_seq_len");
  }

  ModelHandle model = init_model(spec);
  if (steps == 0 || corpus.empty()) return model;

  AdamWConfig ocfg;
  ocfg.learning_rate = opts.learning_rate;
  ocfg.weight_decay = opts.weight_decay;
  AdamW opt(ocfg);
  for (auto& [name, t] : model.params()) opt.add_param(name, t);

  Rng data_rng = Rng(spec.seed).fork("pretrain/data");
  const bool mlm = spec.family == ModelFamily::masked_lm;
  const int mask_id = spec.vocab.mask();
  const int B = opts.batch_size;

  for (int step = 0; step < steps; ++step) {
    std::vector<detail::PretrainItem> items;
    items.reserve(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      const auto& seq = corpus[static_cast<std::size_t>(
          data_rng.uniform_int(0, static_cast<int>(corpus.size()) - 1))];
      items.push_back(mlm ? detail::make_mlm_item(seq, mask_id, opts.mask_rate,
                                                  opts.head_mask_prob, data_rng)
                          : detail::make_span_item(seq, mask_id, spec.vocab.bos(),
                                                   spec.vocab.eos(), opts.prefix_span_prob,
                                                   opts.max_span, data_rng));
    }

    std::vector<GradMap> sinks(static_cast<std::size_t>(B));
    std::vector<double> losses(static_cast<std::size_t>(B), 0.0);
    parallel_for(B, opts.jobs, [&](int b) {
      const auto& item = items[static_cast<std::size_t>(b)];
      Tape t;
      Tensor loss;
      if (mlm) {
        Tensor rows = detail::embed(t, model, item.input, "emb.pos", 0);
        Tensor states = masked_lm_states(t, model, rows, nullptr, 0);
        Tensor logits = lm_logits(t, model, states);
        Tensor picked = t.embedding(logits, item.positions);
        loss = t.cross_entropy(picked, item.targets);
      } else {
        Tensor enc_rows = detail::embed(t, model, item.input, "emb.pos_enc", 0);
        Tensor enc = encoder_states(t, model, enc_rows);
        Tensor dec_rows = detail::embed(t, model, item.dec_input, "emb.pos_dec", 0);
        Tensor states = decoder_states(t, model, dec_rows, enc, nullptr, 0);
        loss = t.cross_entropy(lm_logits(t, model, states), item.targets);
      }
      losses[static_cast<std::size_t>(b)] = loss.value();
      Tensor scaled = t.scale(loss, 1.0 / B);
      t.backward_collect(scaled, sinks[static_cast<std::size_t>(b)]);
    });

    // merge per-example grads in example order: worker-count independent
    for (auto& [name, param] : model.params())
      accumulate_sinks(param, sinks);
    const double frac = steps > 1 ? static_cast<double>(step) / (steps - 1) : 0.0;
    opt.set_learning_rate(opts.learning_rate *
                          (1.0 - (1.0 - opts.final_lr_fraction) * frac));
    opt.step();
    opt.zero_grad();
    if (opts.on_step) {
      double mean = 0.0;
      for (const auto& l : losses) mean += l;
      opts.on_step(step + 1, mean / B);
    }
  }
  return model;
}

}  // namespace ptlab
