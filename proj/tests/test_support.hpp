#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ptlab/autograd.hpp"
#include "ptlab/rng.hpp"
#include "ptlab/tensor.hpp"

namespace ptest {

inline ptlab::Tensor random_tensor(ptlab::Rng& rng, std::vector<int> shape, double stddev = 1.0,
                                   bool requires_grad = true) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> data(n);
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return ptlab::Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Central finite differences of a scalar-valued functional with respect to
// one input tensor. Step 1e-5; the functional must not mutate its inputs.
inline std::vector<double> central_diff(
    ptlab::Tensor& input, const std::function<double()>& eval, double h = 1e-5) {
  auto data = input.mutable_data();
  std::vector<double> grad(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    const double fp = eval();
    data[i] = saved - h;
    const double fm = eval();
    data[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace ptest
