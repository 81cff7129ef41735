#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptlab/tensor.hpp"

namespace ptlab {

// ---------------------------------------------------------------------------
// Raw f64 kernels. All accumulate into C.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a_row = A + static_cast<std::size_t>(i) * k;
    double* c_row = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double a = a_row[p];
      if (a == 0.0) continue;
      const double* b_row = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a_row = A + static_cast<std::size_t>(i) * k;
    double* c_row = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b_row = B + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      c_row[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * D[m,n]
inline void gemm_tn(const double* A, const double* D, double* C, int m, int k, int n) {
  for (int p = 0; p < m; ++p) {
    const double* a_row = A + static_cast<std::size_t>(p) * k;
    const double* d_row = D + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      const double a = a_row[i];
      if (a == 0.0) continue;
      double* c_row = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c_row[j] += a * d_row[j];
    }
  }
}

// Per-leaf gradient buffers for thread-isolated backward passes; keyed by
// Tensor identity (see Tape::backward_collect).
using GradMap = std::unordered_map<const void*, std::vector<double>>;

// Fold collected per-example gradients into param.grad, always in sink
// order, so results do not depend on how examples were spread over threads.
inline void accumulate_sinks(Tensor& param, std::span<GradMap> sinks) {
  auto g = param.grad();
  for (const auto& sink : sinks) {
    auto it = sink.find(param.key());
    if (it == sink.end()) continue;
    const auto& src = it->second;
    for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// Reverse-mode tape. Records an op node whenever any input requires grad;
// backward() walks the nodes once in reverse and clears the tape. One tape
// is single-threaded; independent tapes may run concurrently as long as the
// tensors they share are read-only.
// ---------------------------------------------------------------------------
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  // --- binary elementwise -------------------------------------------------

  Tensor add(const Tensor& a, const Tensor& b) { return eltwise(a, b, "add"); }
  Tensor sub(const Tensor& a, const Tensor& b) { return eltwise(a, b, "sub"); }
  Tensor mul(const Tensor& a, const Tensor& b) { return eltwise(a, b, "mul"); }

  Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * c;
    finish(out, "scale", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, c]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      });
    return out;
  }

  // out[i,j] = m[i,j] + v[j]
  Tensor add_rowwise(const Tensor& m, const Tensor& v) { return rowwise(m, v, false); }
  // out[i,j] = m[i,j] * v[j]
  Tensor mul_rowwise(const Tensor& m, const Tensor& v) { return rowwise(m, v, true); }

  // --- matrix products ----------------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows())
      throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " " +
                       shape_str(b.shape()));
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), a.rows(), a.cols(),
            b.cols());
    finish(out, "matmul", a.requires_grad() || b.requires_grad());
    if (out.requires_grad())
      record([this, a, b, out]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a))
          gemm_nt(g.data(), b.data().data(), ga, a.rows(), b.cols(), a.cols());
        if (double* gb = grad_buf(b))
          gemm_tn(a.data().data(), g.data(), gb, a.rows(), a.cols(), b.cols());
      });
    return out;
  }

  // a * b^T with b given row-major [n,k]
  Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.cols())
      throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " " +
                       shape_str(b.shape()));
    Tensor out = Tensor::zeros({a.rows(), b.rows()});
    gemm_nt(a.data().data(), b.data().data(), out.mutable_data().data(), a.rows(), a.cols(),
            b.rows());
    finish(out, "matmul_nt", a.requires_grad() || b.requires_grad());
    if (out.requires_grad())
      record([this, a, b, out]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a))
          gemm_nn(g.data(), b.data().data(), ga, a.rows(), b.rows(), a.cols());
        if (double* gb = grad_buf(b))
          gemm_tn(g.data(), a.data().data(), gb, a.rows(), b.rows(), a.cols());
      });
    return out;
  }

  // --- activations ----------------------------------------------------------

  Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
    finish(out, "relu", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        auto src = a.data();
        if (double* ga = grad_buf(a))
          // derivative at exactly 0 is 0, matching the >0 binarization
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += src[i] > 0.0 ? g[i] : 0.0;
      });
    return out;
  }

  Tensor leaky_relu(const Tensor& a, double slope) {
    Tensor out = Tensor::zeros(a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = src[i] > 0.0 ? src[i] : slope * src[i];
    finish(out, "leaky_relu", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, slope]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        auto src = a.data();
        if (double* ga = grad_buf(a))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (src[i] > 0.0 ? 1.0 : slope) * g[i];
      });
    return out;
  }

  Tensor tanh(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::tanh(src[i]);
    finish(out, "tanh", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        auto y = out.data();
        if (double* ga = grad_buf(a))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - y[i] * y[i]) * g[i];
      });
    return out;
  }

  // --- normalizations -------------------------------------------------------

  Tensor softmax_rows(const Tensor& a) { return softmax_impl(a, false); }

  // Row i is a distribution over columns 0..i; later columns are exactly 0.
  Tensor causal_softmax_rows(const Tensor& a) {
    if (!a.is_matrix() || a.rows() != a.cols())
      throw ShapeError("causal_softmax_rows: square matrix required, got " +
                       shape_str(a.shape()));
    return softmax_impl(a, true);
  }

  // (x - mean) / sqrt(var + eps) per row, population variance, no affine
  // parameters. A zero-variance row maps to zeros.
  Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5) {
    const int r = a.rows(), c = a.cols();
    Tensor out = Tensor::zeros(a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (int i = 0; i < r; ++i) {
      const double* x = src.data() + static_cast<std::size_t>(i) * c;
      double* y = dst.data() + static_cast<std::size_t>(i) * c;
      double mean = 0.0;
      for (int j = 0; j < c; ++j) mean += x[j];
      mean /= c;
      double var = 0.0;
      for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
      var /= c;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv;
    }
    finish(out, "layer_norm", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, eps]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        double* ga = grad_buf(a);
        if (!ga) return;
        const int r = a.rows(), c = a.cols();
        auto src = a.data();
        for (int i = 0; i < r; ++i) {
          const double* x = src.data() + static_cast<std::size_t>(i) * c;
          const double* gy = g.data() + static_cast<std::size_t>(i) * c;
          double* gx = ga + static_cast<std::size_t>(i) * c;
          double mean = 0.0;
          for (int j = 0; j < c; ++j) mean += x[j];
          mean /= c;
          double var = 0.0;
          for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
          var /= c;
          const double inv = 1.0 / std::sqrt(var + eps);
          double g_mean = 0.0, gx_dot = 0.0;
          for (int j = 0; j < c; ++j) {
            g_mean += gy[j];
            gx_dot += gy[j] * (x[j] - mean) * inv;
          }
          g_mean /= c;
          gx_dot /= c;
          for (int j = 0; j < c; ++j)
            gx[j] += inv * (gy[j] - g_mean - (x[j] - mean) * inv * gx_dot);
        }
      });
    return out;
  }

  // --- gather / layout -------------------------------------------------------

  Tensor embedding(const Tensor& table, std::span<const int> ids) {
    if (!table.is_matrix())
      throw ShapeError("embedding: table must be a matrix, got " + shape_str(table.shape()));
    const int v = table.rows(), d = table.cols();
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw ShapeError("embedding: empty id list");
    for (int i = 0; i < n; ++i)
      if (ids[i] < 0 || ids[i] >= v)
        throw ShapeError("embedding: id " + std::to_string(ids[i]) + " at position " +
                         std::to_string(i) + " outside table " + shape_str(table.shape()));
    Tensor out = Tensor::zeros({n, d});
    auto src = table.data();
    auto dst = out.mutable_data();
    for (int i = 0; i < n; ++i)
      std::memcpy(dst.data() + static_cast<std::size_t>(i) * d,
                  src.data() + static_cast<std::size_t>(ids[i]) * d, sizeof(double) * d);
    finish(out, "embedding", table.requires_grad());
    if (out.requires_grad()) {
      std::vector<int> ids_copy(ids.begin(), ids.end());
      record([this, table, out, ids_copy = std::move(ids_copy), d]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        double* gt = grad_buf(table);
        if (!gt) return;
        for (std::size_t i = 0; i < ids_copy.size(); ++i) {
          const double* row = g.data() + i * d;
          double* dst = gt + static_cast<std::size_t>(ids_copy[i]) * d;
          for (int j = 0; j < d; ++j) dst[j] += row[j];
        }
      });
    }
    return out;
  }

  Tensor concat_rows(std::span<const Tensor> parts) { return concat(parts, /*rows=*/true); }
  Tensor concat_rows(std::initializer_list<Tensor> parts) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), true);
  }
  Tensor concat_cols(std::span<const Tensor> parts) { return concat(parts, /*rows=*/false); }
  Tensor concat_cols(std::initializer_list<Tensor> parts) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), false);
  }

  Tensor slice_cols(const Tensor& a, int c0, int w) {
    if (!a.is_matrix() || c0 < 0 || w <= 0 || c0 + w > a.cols())
      throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + w) +
                       ") out of " + shape_str(a.shape()));
    const int r = a.rows(), c = a.cols();
    Tensor out = Tensor::zeros({r, w});
    auto src = a.data();
    auto dst = out.mutable_data();
    for (int i = 0; i < r; ++i)
      std::memcpy(dst.data() + static_cast<std::size_t>(i) * w,
                  src.data() + static_cast<std::size_t>(i) * c + c0, sizeof(double) * w);
    finish(out, "slice_cols", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, c0, w]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        double* ga = grad_buf(a);
        if (!ga) return;
        const int r = a.rows(), c = a.cols();
        for (int i = 0; i < r; ++i) {
          const double* row = g.data() + static_cast<std::size_t>(i) * w;
          double* dst = ga + static_cast<std::size_t>(i) * c + c0;
          for (int j = 0; j < w; ++j) dst[j] += row[j];
        }
      });
    return out;
  }

  // row r as a rank-1 tensor
  Tensor take_row(const Tensor& a, int r) {
    if (!a.is_matrix() || r < 0 || r >= a.rows())
      throw ShapeError("take_row: row " + std::to_string(r) + " out of " + shape_str(a.shape()));
    const int c = a.cols();
    Tensor out = Tensor::zeros({c});
    std::memcpy(out.mutable_data().data(), a.data().data() + static_cast<std::size_t>(r) * c,
                sizeof(double) * c);
    finish(out, "take_row", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, r]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a)) {
          const int c = a.cols();
          double* dst = ga + static_cast<std::size_t>(r) * c;
          for (int j = 0; j < c; ++j) dst[j] += g[j];
        }
      });
    return out;
  }

  Tensor reshape(const Tensor& a, std::vector<int> shape) {
    Tensor out = Tensor::zeros(shape);
    if (out.size() != a.size())
      throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                       " changes element count");
    std::memcpy(out.mutable_data().data(), a.data().data(), sizeof(double) * a.size());
    finish(out, "reshape", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    return out;
  }

  // --- reductions / losses ----------------------------------------------------

  Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    Tensor out = Tensor::zeros({1});
    out.mutable_data()[0] = acc;
    finish(out, "sum", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a))
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0];
      });
    return out;
  }

  Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

  // sqrt(x + eps) on a scalar; the eps guards the derivative at zero.
  Tensor sqrt_eps(const Tensor& a, double eps = 1e-12) {
    if (!a.is_scalar()) throw ShapeError("sqrt_eps: scalar required, got " + shape_str(a.shape()));
    const double y = std::sqrt(a.data()[0] + eps);
    Tensor out = Tensor::zeros({1});
    out.mutable_data()[0] = y;
    finish(out, "sqrt_eps", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, y]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (double* ga = grad_buf(a)) ga[0] += g[0] * 0.5 / y;
      });
    return out;
  }

  // Mean negative log-likelihood of targets under row-wise log-softmax.
  Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (!logits.is_matrix())
      throw ShapeError("cross_entropy: logits must be a matrix, got " +
                       shape_str(logits.shape()));
    const int m = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != m)
      throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                       shape_str(logits.shape()) + " logits");
    for (int i = 0; i < m; ++i)
      if (targets[i] < 0 || targets[i] >= v)
        throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                         std::to_string(i) + " outside vocab " + std::to_string(v));
    auto src = logits.data();
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
      const double* row = src.data() + static_cast<std::size_t>(i) * v;
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double lse = 0.0;
      for (int j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
      lse = mx + std::log(lse);
      loss += lse - row[targets[i]];
    }
    loss /= m;
    Tensor out = Tensor::zeros({1});
    out.mutable_data()[0] = loss;
    finish(out, "cross_entropy", logits.requires_grad());
    if (out.requires_grad()) {
      std::vector<int> tgt(targets.begin(), targets.end());
      record([this, logits, out, tgt = std::move(tgt)]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        double* gl = grad_buf(logits);
        if (!gl) return;
        const int m = logits.rows(), v = logits.cols();
        auto src = logits.data();
        const double scale = g[0] / m;
        for (int i = 0; i < m; ++i) {
          const double* row = src.data() + static_cast<std::size_t>(i) * v;
          double* grow = gl + static_cast<std::size_t>(i) * v;
          double mx = row[0];
          for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
          double z = 0.0;
          for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
          for (int j = 0; j < v; ++j) grow[j] += scale * std::exp(row[j] - mx) / z;
          grow[tgt[i]] -= scale;
        }
      });
    }
    return out;
  }

  // --- backward ---------------------------------------------------------------

  // Populates .grad on every requires_grad leaf reachable from loss, then
  // clears the tape.
  void backward(const Tensor& loss) { run_backward(loss, nullptr); }

  // Same walk, but gradients of leaves this tape did not create are
  // collected into `sink` instead of the shared tensors. This is what makes
  // concurrent per-example backward passes over shared parameters safe.
  void backward_collect(const Tensor& loss, GradMap& sink) { run_backward(loss, &sink); }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  GradMap* sink_ = nullptr;

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  // Marks an op result: finite check, grad flag, creator stamp.
  void finish(Tensor& out, const char* op, bool requires_grad) {
    for (double v : out.data())
      if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite result");
    if (requires_grad) {
      out.set_requires_grad(true);
      out.impl()->creator = this;
    }
  }

  // Where gradient contributions for t should go; nullptr means t does not
  // participate (requires_grad == false).
  double* grad_buf(const Tensor& t) {
    Tensor::Impl* ip = t.impl();
    if (!ip->requires_grad) return nullptr;
    if (sink_ == nullptr || ip->creator == this) {
      if (ip->grad.empty()) ip->grad.assign(ip->data.size(), 0.0);
      return ip->grad.data();
    }
    auto& buf = (*sink_)[ip];
    if (buf.empty()) buf.assign(ip->data.size(), 0.0);
    return buf.data();
  }

  void run_backward(const Tensor& loss, GradMap* sink) {
    if (!loss.is_scalar())
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (nodes_.empty()) throw StateError("backward: tape is empty");
    sink_ = sink;
    if (double* gl = grad_buf(loss)) gl[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    sink_ = nullptr;
    nodes_.clear();
  }

  Tensor eltwise(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    auto pa = a.data();
    auto pb = b.data();
    auto dst = out.mutable_data();
    const bool is_add = std::strcmp(op, "add") == 0;
    const bool is_sub = std::strcmp(op, "sub") == 0;
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = is_add ? pa[i] + pb[i] : is_sub ? pa[i] - pb[i] : pa[i] * pb[i];
    finish(out, op, a.requires_grad() || b.requires_grad());
    if (out.requires_grad()) {
      if (is_add || is_sub) {
        const double sign = is_sub ? -1.0 : 1.0;
        record([this, a, b, out, sign]() mutable {
          auto g = out.grad();
          if (g.empty()) return;
          if (double* ga = grad_buf(a))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
          if (double* gb = grad_buf(b))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        });
      } else {
        record([this, a, b, out]() mutable {
          auto g = out.grad();
          if (g.empty()) return;
          auto pa = a.data();
          auto pb = b.data();
          if (double* ga = grad_buf(a))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += pb[i] * g[i];
          if (double* gb = grad_buf(b))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += pa[i] * g[i];
        });
      }
    }
    return out;
  }

  Tensor rowwise(const Tensor& m, const Tensor& v, bool multiply) {
    if (!m.is_matrix() || v.shape().size() != 1 || v.cols() != m.cols())
      throw ShapeError(std::string(multiply ? "mul_rowwise" : "add_rowwise") +
                       ": incompatible shapes " + shape_str(m.shape()) + " " +
                       shape_str(v.shape()));
    const int r = m.rows(), c = m.cols();
    Tensor out = Tensor::zeros(m.shape());
    auto pm = m.data();
    auto pv = v.data();
    auto dst = out.mutable_data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * c + j;
        dst[k] = multiply ? pm[k] * pv[j] : pm[k] + pv[j];
      }
    finish(out, multiply ? "mul_rowwise" : "add_rowwise", m.requires_grad() || v.requires_grad());
    if (out.requires_grad())
      record([this, m, v, out, multiply]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        const int r = m.rows(), c = m.cols();
        auto pm = m.data();
        auto pv = v.data();
        if (double* gm = grad_buf(m))
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
              const std::size_t k = static_cast<std::size_t>(i) * c + j;
              gm[k] += multiply ? g[k] * pv[j] : g[k];
            }
        if (double* gv = grad_buf(v))
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
              const std::size_t k = static_cast<std::size_t>(i) * c + j;
              gv[j] += multiply ? g[k] * pm[k] : g[k];
            }
      });
    return out;
  }

  Tensor softmax_impl(const Tensor& a, bool causal) {
    if (!a.is_matrix() && !causal) {
      // rank-1 softmax: treat as a single row
      Tensor row = reshape(a, {1, a.cols()});
      Tensor sm = softmax_impl(row, false);
      return reshape(sm, {a.cols()});
    }
    const int r = a.rows(), c = a.cols();
    Tensor out = Tensor::zeros(a.shape());
    auto src = a.data();
    auto dst = out.mutable_data();
    for (int i = 0; i < r; ++i) {
      const int lim = causal ? i + 1 : c;
      const double* x = src.data() + static_cast<std::size_t>(i) * c;
      double* y = dst.data() + static_cast<std::size_t>(i) * c;
      double mx = x[0];
      for (int j = 1; j < lim; ++j) mx = std::max(mx, x[j]);
      double z = 0.0;
      for (int j = 0; j < lim; ++j) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      }
      for (int j = 0; j < lim; ++j) y[j] /= z;
    }
    finish(out, causal ? "causal_softmax" : "softmax", a.requires_grad());
    if (out.requires_grad())
      record([this, a, out, causal]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        double* ga = grad_buf(a);
        if (!ga) return;
        const int r = a.rows(), c = a.cols();
        auto y = out.data();
        for (int i = 0; i < r; ++i) {
          const int lim = causal ? i + 1 : c;
          const double* yrow = y.data() + static_cast<std::size_t>(i) * c;
          const double* grow = g.data() + static_cast<std::size_t>(i) * c;
          double* garow = ga + static_cast<std::size_t>(i) * c;
          double dot = 0.0;
          for (int j = 0; j < lim; ++j) dot += grow[j] * yrow[j];
          for (int j = 0; j < lim; ++j) garow[j] += yrow[j] * (grow[j] - dot);
        }
      });
    return out;
  }

  Tensor concat(std::span<const Tensor> parts, bool rows) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    bool any_grad = false;
    int total = 0;
    const Tensor& first = parts[0];
    for (const Tensor& p : parts) {
      if (!p.is_matrix())
        throw ShapeError("concat: matrix inputs required, got " + shape_str(p.shape()));
      if (rows ? p.cols() != first.cols() : p.rows() != first.rows())
        throw ShapeError("concat: mismatched shapes " + shape_str(first.shape()) + " vs " +
                         shape_str(p.shape()));
      total += rows ? p.rows() : p.cols();
      any_grad = any_grad || p.requires_grad();
    }
    Tensor out = rows ? Tensor::zeros({total, first.cols()})
                      : Tensor::zeros({first.rows(), total});
    auto dst = out.mutable_data();
    if (rows) {
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        std::memcpy(dst.data() + off, p.data().data(), sizeof(double) * p.size());
        off += p.size();
      }
    } else {
      const int r = first.rows(), oc = total;
      int c0 = 0;
      for (const Tensor& p : parts) {
        const int pc = p.cols();
        auto src = p.data();
        for (int i = 0; i < r; ++i)
          std::memcpy(dst.data() + static_cast<std::size_t>(i) * oc + c0,
                      src.data() + static_cast<std::size_t>(i) * pc, sizeof(double) * pc);
        c0 += pc;
      }
    }
    finish(out, rows ? "concat_rows" : "concat_cols", any_grad);
    if (out.requires_grad()) {
      std::vector<Tensor> held(parts.begin(), parts.end());
      record([this, held = std::move(held), out, rows]() mutable {
        auto g = out.grad();
        if (g.empty()) return;
        if (rows) {
          std::size_t off = 0;
          for (Tensor& p : held) {
            if (double* gp = grad_buf(p))
              for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
            off += p.size();
          }
        } else {
          const int r = held[0].rows(), oc = out.cols();
          int c0 = 0;
          for (Tensor& p : held) {
            const int pc = p.cols();
            if (double* gp = grad_buf(p))
              for (int i = 0; i < r; ++i)
                for (int j = 0; j < pc; ++j)
                  gp[static_cast<std::size_t>(i) * pc + j] +=
                      g[static_cast<std::size_t>(i) * oc + c0 + j];
            c0 += pc;
          }
        }
      });
    }
    return out;
  }
};

}  // namespace ptlab
