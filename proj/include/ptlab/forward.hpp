#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ptlab/autograd.hpp"
#include "ptlab/model.hpp"
#include "ptlab/prompt.hpp"

namespace ptlab {

// Per-layer binarized FFN pre-activations (x W1^T + b1 > 0) at the decode
// position: [MASK] for the masked LM, decoder step one for the
// encoder-decoder (decoder layers only).
struct ActivationTrace {
  std::vector<std::vector<std::uint8_t>> layers;  // num_layers x ffn_dim
};

namespace detail {

inline Tensor affine_ln(Tape& t, const ModelHandle& m, const std::string& prefix, const Tensor& x) {
  Tensor n = t.layer_norm_rows(x);
  return t.add_rowwise(t.mul_rowwise(n, m.param(prefix + ".g")), m.param(prefix + ".b"));
}

inline Tensor attention(Tape& t, const ModelHandle& m, const std::string& prefix,
                        const Tensor& x_q, const Tensor& x_kv, bool causal) {
  const int d = m.spec().hidden_dim;
  const int heads = m.spec().num_heads;
  const int hd = d / heads;
  Tensor q = t.add_rowwise(t.matmul_nt(x_q, m.param(prefix + "wq")), m.param(prefix + "bq"));
  Tensor k = t.add_rowwise(t.matmul_nt(x_kv, m.param(prefix + "wk")), m.param(prefix + "bk"));
  Tensor v = t.add_rowwise(t.matmul_nt(x_kv, m.param(prefix + "wv")), m.param(prefix + "bv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = t.slice_cols(q, h * hd, hd);
    Tensor kh = t.slice_cols(k, h * hd, hd);
    Tensor vh = t.slice_cols(v, h * hd, hd);
    Tensor scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
    Tensor probs = causal ? t.causal_softmax_rows(scores) : t.softmax_rows(scores);
    ctx.push_back(t.matmul(probs, vh));
  }
  Tensor merged = t.concat_cols(std::span<const Tensor>(ctx.data(), ctx.size()));
  return t.add_rowwise(t.matmul_nt(merged, m.param(prefix + "wo")), m.param(prefix + "bo"));
}

// FFN(x) = max(x W1^T + b1, 0) W2 + b2; the capture reads the pre-activation
// row and never feeds back into the graph.
inline Tensor ffn(Tape& t, const ModelHandle& m, const std::string& prefix, const Tensor& x,
                  ActivationTrace* cap, int cap_pos) {
  Tensor pre = t.add_rowwise(t.matmul_nt(x, m.param(prefix + "ffn.w1")), m.param(prefix + "ffn.b1"));
  if (cap != nullptr) {
    const int d_m = m.spec().ffn_dim;
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(d_m));
    for (int j = 0; j < d_m; ++j) bits[static_cast<std::size_t>(j)] = pre.at(cap_pos, j) > 0.0;
    cap->layers.push_back(std::move(bits));
  }
  return t.add_rowwise(t.matmul(t.relu(pre), m.param(prefix + "ffn.w2")),
                       m.param(prefix + "ffn.b2"));
}

inline Tensor encoder_block(Tape& t, const ModelHandle& m, const std::string& prefix, Tensor x,
                            ActivationTrace* cap, int cap_pos) {
  Tensor n1 = affine_ln(t, m, prefix + "ln1", x);
  x = t.add(x, attention(t, m, prefix + "attn.", n1, n1, false));
  x = t.add(x, ffn(t, m, prefix, affine_ln(t, m, prefix + "ln2", x), cap, cap_pos));
  return x;
}

inline Tensor decoder_block(Tape& t, const ModelHandle& m, const std::string& prefix, Tensor x,
                            const Tensor& enc_states, ActivationTrace* cap, int cap_pos) {
  Tensor n1 = affine_ln(t, m, prefix + "ln1", x);
  x = t.add(x, attention(t, m, prefix + "self.", n1, n1, true));
  Tensor n2 = affine_ln(t, m, prefix + "ln2", x);
  x = t.add(x, attention(t, m, prefix + "cross.", n2, enc_states, false));
  x = t.add(x, ffn(t, m, prefix, affine_ln(t, m, prefix + "ln3", x), cap, cap_pos));
  return x;
}

inline Tensor embed(Tape& t, const ModelHandle& m, std::span<const int> ids,
                    const char* pos_table, int pos_offset) {
  Tensor tok = t.embedding(m.param("emb.tok"), ids);
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), pos_offset);
  return t.add(tok, t.embedding(m.param(pos_table), pos));
}

}  // namespace detail

// Final hidden states of the masked-LM stack for pre-assembled input rows.
inline Tensor masked_lm_states(Tape& t, const ModelHandle& m, Tensor x, ActivationTrace* cap,
                               int cap_pos) {
  for (int i = 0; i < m.spec().num_layers; ++i)
    x = detail::encoder_block(t, m, detail::layer_key("lyr", i), x, cap, cap_pos);
  return detail::affine_ln(t, m, "final_ln", x);
}

inline Tensor encoder_states(Tape& t, const ModelHandle& m, Tensor x) {
  for (int i = 0; i < m.spec().num_layers; ++i)
    x = detail::encoder_block(t, m, detail::layer_key("enc", i), x, nullptr, 0);
  return detail::affine_ln(t, m, "enc_final_ln", x);
}

inline Tensor decoder_states(Tape& t, const ModelHandle& m, Tensor x, const Tensor& enc,
                             ActivationTrace* cap, int cap_pos) {
  for (int i = 0; i < m.spec().num_layers; ++i)
    x = detail::decoder_block(t, m, detail::layer_key("dec", i), x, enc, cap, cap_pos);
  return detail::affine_ln(t, m, "dec_final_ln", x);
}

// Tied-embedding vocabulary logits.
inline Tensor lm_logits(Tape& t, const ModelHandle& m, const Tensor& states) {
  return t.add_rowwise(t.matmul_nt(states, m.param("emb.tok")), m.param("out.bias"));
}

// --- prompt-aware forward passes -------------------------------------------

// Masked-LM PT layout: [MASK], p_1..p_l, x_1..x_n. Prompt rows carry no
// position embedding; content embeddings use their absolute index.
inline Tensor masked_lm_prompt_states(Tape& t, const ModelHandle& m, const Tensor* prompt,
                                      std::span<const int> x_ids, ActivationTrace* cap) {
  const int l = prompt != nullptr ? prompt->rows() : 0;
  const int total = 1 + l + static_cast<int>(x_ids.size());
  if (total > m.spec().max_seq_len)
    throw ShapeError("forward: sequence length " + std::to_string(total) + " exceeds max " +
                     std::to_string(m.spec().max_seq_len));
  const int mask_id = m.spec().vocab.mask();
  Tensor head = detail::embed(t, m, std::span<const int>(&mask_id, 1), "emb.pos", 0);
  Tensor tail = detail::embed(t, m, x_ids, "emb.pos", 1 + l);
  Tensor rows = prompt != nullptr ? t.concat_rows({head, *prompt, tail})
                                  : t.concat_rows({head, tail});
  return masked_lm_states(t, m, rows, cap, /*cap_pos=*/0);
}

// Encoder-decoder PT layout: encoder sees p_1..p_l, x_1..x_n; the decoder
// runs over dec_ids (first id is <s>). Returns decoder states.
inline Tensor encdec_prompt_states(Tape& t, const ModelHandle& m, const Tensor* prompt,
                                   std::span<const int> x_ids, std::span<const int> dec_ids,
                                   ActivationTrace* cap) {
  const int l = prompt != nullptr ? prompt->rows() : 0;
  const int total = l + static_cast<int>(x_ids.size());
  if (total > m.spec().max_seq_len || static_cast<int>(dec_ids.size()) > m.spec().max_seq_len)
    throw ShapeError("forward: sequence length " + std::to_string(total) + " exceeds max " +
                     std::to_string(m.spec().max_seq_len));
  Tensor content = detail::embed(t, m, x_ids, "emb.pos_enc", l);
  Tensor enc_rows = prompt != nullptr ? t.concat_rows({*prompt, content}) : content;
  Tensor enc = encoder_states(t, m, enc_rows);
  Tensor dec_rows = detail::embed(t, m, dec_ids, "emb.pos_dec", 0);
  return decoder_states(t, m, dec_rows, enc, cap, /*cap_pos=*/0);
}

struct ForwardOutput {
  std::vector<double> logits;  // over the vocabulary, at the decode position
  std::optional<ActivationTrace> trace;
};

inline void check_prompt_compat(const ModelHandle& m, const SoftPrompt& p) {
  if (p.d != m.spec().hidden_dim)
    throw ShapeError("prompt dim " + std::to_string(p.d) + " does not match model hidden dim " +
                     std::to_string(m.spec().hidden_dim));
}

// Inference-only forward. Logits are taken at the [MASK] position for the
// masked LM and at decoder step one for the encoder-decoder; the trace, when
// capture is enabled, is read at the same position.
inline ForwardOutput forward_with_prompt(const ModelHandle& m, const SoftPrompt& prompt,
                                         std::span<const int> x_ids, bool capture) {
  ForwardOutput out;
  ActivationTrace trace;
  ActivationTrace* cap = capture ? &trace : nullptr;
  Tape t;
  Tensor prompt_rows;
  const Tensor* pp = nullptr;
  if (prompt.l > 0) {
    check_prompt_compat(m, prompt);
    prompt_rows = prompt.tensor(false);
    pp = &prompt_rows;
  }
  Tensor states;
  if (m.spec().family == ModelFamily::masked_lm) {
    states = masked_lm_prompt_states(t, m, pp, x_ids, cap);
  } else {
    const int bos = m.spec().vocab.bos();
    states = encdec_prompt_states(t, m, pp, x_ids, std::span<const int>(&bos, 1), cap);
  }
  Tensor logits = lm_logits(t, m, states);
  out.logits.resize(static_cast<std::size_t>(logits.cols()));
  for (int j = 0; j < logits.cols(); ++j) out.logits[static_cast<std::size_t>(j)] = logits.at(0, j);
  if (capture) out.trace = std::move(trace);
  return out;
}

inline ForwardOutput forward_with_prompt(const ModelHandle& m, const SoftPrompt& prompt,
                                         std::span<const int> x_ids) {
  return forward_with_prompt(m, prompt, x_ids, m.capture_enabled());
}

// Greedy decoding for the encoder-decoder family; stops at </s> or after
// max_new tokens. Returns generated ids without the terminator.
inline std::vector<int> greedy_decode(const ModelHandle& m, const SoftPrompt& prompt,
                                      std::span<const int> x_ids, int max_new) {
  if (m.spec().family != ModelFamily::encoder_decoder)
    throw StateError("greedy_decode: encoder-decoder model required");
  std::vector<int> dec = {m.spec().vocab.bos()};
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    Tape t;
    Tensor prompt_rows;
    const Tensor* pp = nullptr;
    if (prompt.l > 0) {
      check_prompt_compat(m, prompt);
      prompt_rows = prompt.tensor(false);
      pp = &prompt_rows;
    }
    Tensor states = encdec_prompt_states(t, m, pp, x_ids, dec, nullptr);
    Tensor logits = lm_logits(t, m, states);
    const int last = logits.rows() - 1;
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(last, j) > logits.at(last, best)) best = j;
    if (best == m.spec().vocab.eos()) break;
    out.push_back(best);
    dec.push_back(best);
  }
  return out;
}

}  // namespace ptlab
