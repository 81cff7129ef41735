#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptlab/digest.hpp"
#include "ptlab/rng.hpp"
#include "ptlab/tensor.hpp"
#include "ptlab/vocab.hpp"

namespace ptlab {

enum class ModelFamily { masked_lm, encoder_decoder };

inline std::string family_name(ModelFamily f) {
  return f == ModelFamily::masked_lm ? "masked_lm" : "encoder_decoder";
}

inline ModelFamily family_from_name(const std::string& s) {
  if (s == "masked_lm") return ModelFamily::masked_lm;
  if (s == "encoder_decoder") return ModelFamily::encoder_decoder;
  throw ConfigError("model: unknown family '" + s + "'");
}

struct ModelSpec {
  ModelFamily family = ModelFamily::masked_lm;
  int num_layers = 4;
  int hidden_dim = 64;
  int ffn_dim = 256;
  int num_heads = 4;
  int max_seq_len = 64;
  std::uint64_t seed = 0;
  Vocab vocab;

  void validate() const {
    if (num_layers <= 0 || hidden_dim <= 0 || ffn_dim <= 0 || num_heads <= 0 || max_seq_len <= 0)
      throw ConfigError("model: dimensions must be positive");
    if (hidden_dim % num_heads != 0)
      throw ConfigError("model: hidden_dim " + std::to_string(hidden_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    if (ffn_dim < hidden_dim) throw ConfigError("model: ffn_dim must be >= hidden_dim");
  }

  nlohmann::json to_json() const {
    return {{"family", family_name(family)},   {"num_layers", num_layers},
            {"hidden_dim", hidden_dim},        {"ffn_dim", ffn_dim},
            {"num_heads", num_heads},          {"max_seq_len", max_seq_len},
            {"seed", seed},                    {"vocab", vocab.tokens()}};
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec s{family_from_name(j.at("family").get<std::string>()),
                j.at("num_layers").get<int>(),
                j.at("hidden_dim").get<int>(),
                j.at("ffn_dim").get<int>(),
                j.at("num_heads").get<int>(),
                j.at("max_seq_len").get<int>(),
                j.at("seed").get<std::uint64_t>(),
                Vocab(j.at("vocab").get<std::vector<std::string>>())};
    s.validate();
    return s;
  }

  std::string canonical_json() const { return to_json().dump(); }
};

// A miniature PLM: named parameter tensors plus the spec that shaped them.
// Freezing drops requires_grad on every parameter, which both blocks
// optimizer registration and lets concurrent forward passes share the
// handle read-only. The digest is the binding frozen-backbone check.
class ModelHandle {
 public:
  ModelHandle(ModelSpec spec, std::map<std::string, Tensor> params)
      : spec_(std::move(spec)), params_(std::move(params)) {}

  const ModelSpec& spec() const { return spec_; }
  bool frozen() const { return frozen_; }
  bool capture_enabled() const { return capture_enabled_; }
  void set_capture_enabled(bool b) { capture_enabled_ = b; }

  void freeze() {
    frozen_ = true;
    for (auto& [name, t] : params_) t.set_requires_grad(false);
  }

  const Tensor& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("model: no parameter named '" + name + "'");
    return it->second;
  }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }

  // SHA-256 over the spec and every parameter's name, shape and f64 bytes
  // (little-endian), in canonical name order.
  std::string parameter_digest() const {
    Sha256 h;
    h.update(spec_.canonical_json());
    for (const auto& [name, t] : params_) {
      h.update(name);
      for (int d : t.shape()) {
        const auto v = static_cast<std::uint32_t>(d);
        const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 24)};
        h.update(b, 4);
      }
      h.update(t.data());
    }
    return h.hex();
  }

 private:
  ModelSpec spec_;
  std::map<std::string, Tensor> params_;
  bool frozen_ = false;
  bool capture_enabled_ = false;
};

namespace detail {

inline std::string layer_key(const char* stack, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s.%02d.", stack, i);
  return buf;
}

inline void add_attention_params(std::map<std::string, std::vector<int>>& m,
                                 const std::string& prefix, int d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) m[prefix + w] = {d, d};
  for (const char* b : {"bq", "bk", "bv", "bo"}) m[prefix + b] = {d};
}

inline void add_block_params(std::map<std::string, std::vector<int>>& m,
                             const std::string& prefix, int d, int d_m, bool cross_attn) {
  add_attention_params(m, prefix + (cross_attn ? "self." : "attn."), d);
  m[prefix + "ln1.g"] = {d};
  m[prefix + "ln1.b"] = {d};
  if (cross_attn) {
    add_attention_params(m, prefix + "cross.", d);
    m[prefix + "ln2.g"] = {d};
    m[prefix + "ln2.b"] = {d};
    m[prefix + "ln3.g"] = {d};
    m[prefix + "ln3.b"] = {d};
  } else {
    m[prefix + "ln2.g"] = {d};
    m[prefix + "ln2.b"] = {d};
  }
  // FFN(x) = max(x W1^T + b1, 0) W2 + b2 with W1, W2 in R^{d_m x d}
  m[prefix + "ffn.w1"] = {d_m, d};
  m[prefix + "ffn.b1"] = {d_m};
  m[prefix + "ffn.w2"] = {d_m, d};
  m[prefix + "ffn.b2"] = {d};
}

inline std::map<std::string, std::vector<int>> parameter_shapes(const ModelSpec& spec) {
  std::map<std::string, std::vector<int>> m;
  const int d = spec.hidden_dim, d_m = spec.ffn_dim, V = spec.vocab.size();
  m["emb.tok"] = {V, d};
  m["out.bias"] = {V};
  if (spec.family == ModelFamily::masked_lm) {
    m["emb.pos"] = {spec.max_seq_len, d};
    for (int i = 0; i < spec.num_layers; ++i) add_block_params(m, layer_key("lyr", i), d, d_m, false);
    m["final_ln.g"] = {d};
    m["final_ln.b"] = {d};
  } else {
    m["emb.pos_enc"] = {spec.max_seq_len, d};
    m["emb.pos_dec"] = {spec.max_seq_len, d};
    for (int i = 0; i < spec.num_layers; ++i) add_block_params(m, layer_key("enc", i), d, d_m, false);
    for (int i = 0; i < spec.num_layers; ++i) add_block_params(m, layer_key("dec", i), d, d_m, true);
    m["enc_final_ln.g"] = {d};
    m["enc_final_ln.b"] = {d};
    m["dec_final_ln.g"] = {d};
    m["dec_final_ln.b"] = {d};
  }
  return m;
}

}  // namespace detail

// Seeded parameter initialization: weights ~ N(0, 0.02^2) per named
// substream, biases zero, layer-norm gains one. Deterministic regardless
// of construction order.
inline ModelHandle init_model(const ModelSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  std::map<std::string, Tensor> params;
  for (const auto& [name, shape] : detail::parameter_shapes(spec)) {
    std::size_t n = 1;
    for (int dim : shape) n *= static_cast<std::size_t>(dim);
    std::vector<double> data(n, 0.0);
    const bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    const bool is_bias = !is_gain && (name.find(".b") != std::string::npos ||
                                      name == "out.bias");
    if (is_gain) {
      std::fill(data.begin(), data.end(), 1.0);
    } else if (!is_bias) {
      Rng stream = root.fork("init/" + name);
      for (auto& v : data) v = stream.normal(0.0, 0.02);
    }
    params.emplace(name, Tensor::from_data(shape, std::move(data), true));
  }
  return ModelHandle(spec, std::move(params));
}

inline void freeze(ModelHandle& model) { model.freeze(); }
inline std::string parameter_digest(const ModelHandle& model) { return model.parameter_digest(); }

}  // namespace ptlab
