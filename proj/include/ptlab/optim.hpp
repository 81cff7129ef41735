#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ptlab/tensor.hpp"

namespace ptlab {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("adamw: learning_rate must be positive");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw ConfigError("adamw: betas must lie in (0, 1)");
    if (epsilon <= 0) throw ConfigError("adamw: epsilon must be positive");
    if (weight_decay < 0) throw ConfigError("adamw: weight_decay must be nonnegative");
  }
};

// Decoupled weight decay Adam. Parameters must carry requires_grad; frozen
// tensors are rejected at registration so a frozen backbone can never be
// updated by accident.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  void add_param(std::string name, Tensor t) {
    if (!t.requires_grad())
      throw StateError("adamw: parameter '" + name + "' does not require grad (frozen?)");
    Slot s;
    s.name = std::move(name);
    s.param = std::move(t);
    s.m.assign(s.param.size(), 0.0);
    s.v.assign(s.param.size(), 0.0);
    slots_.push_back(std::move(s));
  }

  std::size_t param_count() const { return slots_.size(); }
  long step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) {
    if (lr <= 0) throw ConfigError("adamw: learning_rate must be positive");
    cfg_.learning_rate = lr;
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  // One AdamW update over every registered parameter. Every parameter must
  // have a gradient buffer (zero gradients are fine); a missing buffer is a
  // usage bug and is rejected by name.
  void step() {
    for (auto& s : slots_)
      if (!s.param.has_grad())
        throw StateError("adamw: missing gradient for parameter '" + s.name + "'");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& s : slots_) {
      auto p = s.param.mutable_data();
      auto g = s.param.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = s.m[i] / bc1;
        const double v_hat = s.v[i] / bc2;
        p[i] -= cfg_.learning_rate *
                (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) + cfg_.weight_decay * p[i]);
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };

  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace ptlab
