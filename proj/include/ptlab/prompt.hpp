#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ptlab/rng.hpp"
#include "ptlab/tensor.hpp"

namespace ptlab {

// Where a prompt's values came from. The unit of transfer carries its
// history so warehouse entries and reports stay traceable.
struct Provenance {
  enum class Kind { random, trained, projected, warm_start };
  Kind kind = Kind::random;
  std::string task;    // trained: source task
  std::string model;   // trained: digest of the backbone it was tuned on
  std::string source;  // projected/warm_start: description of the origin prompt
  std::uint64_t seed = 0;

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::random: return "random";
      case Kind::trained: return "trained";
      case Kind::projected: return "projected";
      default: return "warm_start";
    }
  }

  static Kind kind_from_name(const std::string& s) {
    if (s == "random") return Kind::random;
    if (s == "trained") return Kind::trained;
    if (s == "projected") return Kind::projected;
    if (s == "warm_start") return Kind::warm_start;
    throw ConfigError("provenance: unknown kind '" + s + "'");
  }

  nlohmann::json to_json() const {
    return {{"kind", kind_name(kind)}, {"task", task}, {"model", model},
            {"source", source},        {"seed", seed}};
  }

  static Provenance from_json(const nlohmann::json& j) {
    return {kind_from_name(j.at("kind").get<std::string>()), j.at("task").get<std::string>(),
            j.at("model").get<std::string>(), j.at("source").get<std::string>(),
            j.at("seed").get<std::uint64_t>()};
  }
};

// P = {p_1 .. p_l}, row-major l x d.
struct SoftPrompt {
  int l = 0;
  int d = 0;
  std::vector<double> values;  // l * d
  Provenance provenance;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * d + j]; }

  void validate() const {
    if (l < 1 || d < 1) throw ShapeError("prompt: l and d must be >= 1");
    if (values.size() != static_cast<std::size_t>(l) * d)
      throw ShapeError("prompt: value count does not match l*d");
    for (double v : values)
      if (!std::isfinite(v)) throw NonFiniteError("prompt: non-finite value");
  }

  Tensor tensor(bool requires_grad = false) const {
    return Tensor::from_data({l, d}, values, requires_grad);
  }

  static SoftPrompt from_tensor(const Tensor& t, Provenance prov) {
    SoftPrompt p;
    p.l = t.rows();
    p.d = t.cols();
    p.values.assign(t.data().begin(), t.data().end());
    p.provenance = std::move(prov);
    p.validate();
    return p;
  }
};

enum class PromptInit { random, from_source };

// Random mode draws i.i.d. N(0, 0.02^2); from-mode copies the source and
// records warm-start provenance.
inline SoftPrompt init_prompt(int l, int d, std::uint64_t seed) {
  if (l < 1 || d < 1) throw ShapeError("init_prompt: l and d must be >= 1");
  SoftPrompt p;
  p.l = l;
  p.d = d;
  p.values.resize(static_cast<std::size_t>(l) * d);
  Rng rng = Rng(seed).fork("prompt_init");
  for (auto& v : p.values) v = rng.normal(0.0, 0.02);
  p.provenance.kind = Provenance::Kind::random;
  p.provenance.seed = seed;
  return p;
}

inline SoftPrompt init_prompt_from(const SoftPrompt& source, int l, int d) {
  if (source.l != l || source.d != d)
    throw ShapeError("init_prompt: source is " + std::to_string(source.l) + "x" +
                     std::to_string(source.d) + ", requested " + std::to_string(l) + "x" +
                     std::to_string(d));
  SoftPrompt p = source;
  p.provenance.kind = Provenance::Kind::warm_start;
  p.provenance.source = std::string(Provenance::kind_name(source.provenance.kind)) +
                        (source.provenance.task.empty() ? "" : ":" + source.provenance.task);
  return p;
}

}  // namespace ptlab
