#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ptlab/common.hpp"

namespace ptlab {

inline std::string shape_str(std::span<const int> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class Tape;

// Dense row-major f64 tensor, rank 1 or 2. Value-semantic handle over a
// shared buffer; the grad buffer lives alongside the data and is filled
// by Tape::backward for requires_grad leaves.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data.assign(count(impl->shape), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (count(shape) != data.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    for (double v : data)
      if (!std::isfinite(v)) throw NonFiniteError("tensor: non-finite value in input data");
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  bool is_scalar() const { return impl_->data.size() == 1; }
  bool is_matrix() const { return impl_->shape.size() == 2; }

  int rows() const {
    return impl_->shape.size() == 2 ? impl_->shape[0] : 1;
  }
  int cols() const {
    return impl_->shape.size() == 2 ? impl_->shape[1] : impl_->shape[0];
  }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double value() const {
    if (!is_scalar()) throw ShapeError("tensor: value() on non-scalar " + shape_str(shape()));
    return impl_->data[0];
  }
  double at(int r, int c) const { return impl_->data[static_cast<std::size_t>(r) * cols() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<double> grad() {
    ensure_grad();
    return impl_->grad;
  }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  }
  void drop_grad() { impl_->grad.clear(); }

  // identity, not value equality
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  // stable identity key, used to look up collected gradients (GradMap)
  const void* key() const { return impl_.get(); }

 private:
  friend class Tape;

  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    const Tape* creator = nullptr;  // tape that produced this as an op output
  };

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static std::size_t count(std::span<const int> shape) {
    if (shape.empty() || shape.size() > 2)
      throw ShapeError("tensor: rank must be 1 or 2, got " + shape_str(shape));
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  void ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  Impl* impl() const { return impl_.get(); }

  std::shared_ptr<Impl> impl_;
};

}  // namespace ptlab
