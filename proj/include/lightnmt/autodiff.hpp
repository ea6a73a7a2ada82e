#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lightnmt/tensor.hpp"

namespace lightnmt {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

// Handle to a node of the computation graph. Parameters are leaf nodes with
// requires_grad set; every op result records its parents only when grad mode
// is on and at least one input requires a gradient.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad = Tensor<T>(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  friend bool operator==(const Var& a, const Var& b) { return a.node_ == b.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& in : inputs) n->parents.push_back(in.shared());
      n->backward_fn = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

template <class T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& in : inputs) n->parents.push_back(in.shared());
      n->backward_fn = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

template <class T>
inline bool wants(const std::shared_ptr<Node<T>>& p) {
  return p->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

// a[m x k] * b[k x n], or a * b^T when transpose_b is set.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
  Tensor<T> out = kernels::matmul(a.value(), b.value(), transpose_b);
  const std::size_t m = a.rows(), k = a.cols(), n = out.cols();
  return detail::make_result<T>(std::move(out), {a, b}, [m, k, n, transpose_b](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T* g = self.grad.data();
    if (detail::wants(pa)) {
      // dA = G * B^T  (or G * B when b was transposed)
      if (transpose_b)
        kernels::gemm_nn(g, pb->value.data(), pa->grad_buffer().data(), m, n, k, true);
      else
        kernels::gemm_nt(g, pb->value.data(), pa->grad_buffer().data(), m, n, k, true);
    }
    if (detail::wants(pb)) {
      if (transpose_b)  // dB[n x k] = G^T * A
        kernels::gemm_tn(g, pa->value.data(), pb->grad_buffer().data(), n, m, k, true);
      else  // dB[k x n] = A^T * G
        kernels::gemm_tn(pa->value.data(), g, pb->grad_buffer().data(), k, m, n, true);
    }
  });
}

// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const bool broadcast = a.size() != b.size();
  if (broadcast && (b.size() != a.cols() || b.rows() != 1))
    throw DimensionError("add: cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  Tensor<T> out = a.value();
  if (broadcast)
    kernels::add_row_inplace(out, b.value());
  else
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [broadcast](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& g = self.grad;
    if (detail::wants(pa)) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (detail::wants(pb)) {
      auto& gb = pb->grad_buffer();
      if (broadcast) {
        const std::size_t n = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    }
  });
}

template <class T>
Var<T> multiply(const Var<T>& a, const Var<T>& b) {
  if (a.size() != b.size())
    throw DimensionError("multiply: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& g = self.grad;
    if (detail::wants(pa)) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
    }
    if (detail::wants(pb)) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
    }
  });
}

// Multiplication by a constant scalar.
template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return detail::make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

namespace detail {
template <class T, class F, class DF>
Var<T> unary(const Var<T>& a, F f, DF df_from_output) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = f(v);
  return make_result<T>(std::move(out), {a}, [df_from_output](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += self.grad[i] * df_from_output(self.value[i], self.parents[0]->value[i]);
  });
}
}  // namespace detail

template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T, T x) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return T{1} / (T{1} + std::exp(-x)); },
      [](T y, T) { return y * (T{1} - y); });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T y, T) { return T{1} - y * y; });
}

// Softmax over the last axis of each row.
template <class T>
Var<T> softmax(const Var<T>& a) {
  Tensor<T> out = kernels::softmax_rows(a.value());
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    const std::size_t n = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const T* y = self.value.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T inner = 0;
      for (std::size_t j = 0; j < n; ++j) inner += g[j] * y[j];
      T* d = ga.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) d[j] += y[j] * (g[j] - inner);
    }
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5)) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (n < 2) throw DimensionError("layer_norm: normalized dimension must be >= 2");
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias size must equal " + std::to_string(n));
  Tensor<T> out(x.shape());
  auto stats = std::make_shared<std::vector<std::pair<T, T>>>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    (*stats)[r] = kernels::layer_norm_row<T>(x.value().row_span(r), gain.value().values(),
                                             bias.value().values(), out.row_span(r), eps);
  return detail::make_result<T>(std::move(out), {x, gain, bias}, [stats, rows, n](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const T* gamma = pg->value.data();
    std::vector<T> xhat(n), dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto [mean, rstd] = (*stats)[r];
      const T* xr = px->value.data() + r * n;
      const T* gr = self.grad.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) {
        xhat[j] = (xr[j] - mean) * rstd;
        dxhat[j] = gr[j] * gamma[j];
      }
      if (detail::wants(pg)) {
        auto& gg = pg->grad_buffer();
        for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xhat[j];
      }
      if (detail::wants(pb)) {
        auto& gb = pb->grad_buffer();
        for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
      }
      if (detail::wants(px)) {
        T sum_d = 0, sum_dx = 0;
        for (std::size_t j = 0; j < n; ++j) {
          sum_d += dxhat[j];
          sum_dx += dxhat[j] * xhat[j];
        }
        T* dx = px->grad_buffer().data() + r * n;
        const T inv_n = T{1} / static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j)
          dx[j] += rstd * (dxhat[j] - inv_n * sum_d - xhat[j] * inv_n * sum_dx);
      }
    }
  });
}

// Rows of `table` selected by `ids`.
template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  Tensor<T> out = kernels::gather_rows(table.value(), ids);
  std::vector<int> idx(ids.begin(), ids.end());
  return detail::make_result<T>(std::move(out), {table}, [idx = std::move(idx)](Node<T>& self) {
    auto& gt = self.parents[0]->grad_buffer();
    const std::size_t d = self.value.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = gt.data() + static_cast<std::size_t>(idx[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor<T> out({rows, total});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(parts[i].value().data() + r * widths[i], widths[i],
                  out.data() + r * total + off);
      off += widths[i];
    }
  }
  return detail::make_result<T>(std::move(out), parts, [widths, rows, total](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto& p = self.parents[i];
      if (detail::wants(p)) {
        auto& gp = p->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[i]; ++j)
            gp[r * widths[i] + j] += self.grad[r * total + off + j];
      }
      off += widths[i];
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    heights.push_back(p.rows());
    total += p.rows();
  }
  Tensor<T> out({total, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(),
              out.data() + off * cols);
    off += p.rows();
  }
  return detail::make_result<T>(std::move(out), parts, [heights, cols](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      auto& p = self.parents[i];
      if (detail::wants(p)) {
        auto& gp = p->grad_buffer();
        for (std::size_t k = 0; k < heights[i] * cols; ++k)
          gp[k] += self.grad[off * cols + k];
      }
      off += heights[i];
    }
  });
}

// Columns [begin, end).
template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (begin > end || end > cols) throw DimensionError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor<T> out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.value().data() + r * cols + begin, w, out.data() + r * w);
  return detail::make_result<T>(std::move(out), {a}, [rows, cols, begin, w](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) ga[r * cols + begin + j] += self.grad[r * w + j];
  });
}

// Rows [begin, end).
template <class T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t cols = a.cols();
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t h = end - begin;
  Tensor<T> out({h, cols});
  std::copy_n(a.value().data() + begin * cols, h * cols, out.data());
  return detail::make_result<T>(std::move(out), {a}, [cols, begin, h](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < h * cols; ++k) ga[begin * cols + k] += self.grad[k];
  });
}

// Inverted dropout: zeroes with probability p and rescales survivors by
// 1/(1-p). Identity when not training or p == 0.
template <class T, class Rng>
Var<T> dropout(const Var<T>& a, T p, bool training, Rng& rng) {
  if (!training || p <= T{0}) return a;
  if (p >= T{1}) throw ConfigError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T s = T{1} / (T{1} - p);
  auto mask = std::make_shared<std::vector<T>>(a.size());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? s : T{0};
    out[i] *= (*mask)[i];
  }
  return detail::make_result<T>(std::move(out), {a}, [mask](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * (*mask)[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return detail::make_result<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    const T g = self.grad[0];
    for (auto& v : ga.values()) v += g;
  });
}

// Sum over non-pad positions of (1-eps)*NLL(target) + eps*CE(uniform).
// logits: [T x V]; targets: T ids (pad_id positions are skipped).
template <class T>
Var<T> label_smoothed_nll_sum(const Var<T>& logits, std::span<const int> targets,
                              T eps, int pad_id = -1) {
  const std::size_t rows = logits.rows(), v = logits.cols();
  if (targets.size() != rows)
    throw DimensionError("cross-entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  auto logp = std::make_shared<Tensor<T>>(kernels::log_softmax_rows(logits.value()));
  T total = 0;
  const T inv_v = T{1} / static_cast<T>(v);
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = targets[r];
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= v)
      throw DataError("target id " + std::to_string(y) + " outside vocabulary");
    const T* lp = logp->data() + r * v;
    T uniform = 0;
    for (std::size_t j = 0; j < v; ++j) uniform -= lp[j];
    total += (T{1} - eps) * (-lp[y]) + eps * uniform * inv_v;
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_result<T>(
      Tensor<T>::scalar(total), {logits},
      [logp, tgt = std::move(tgt), eps, pad_id, rows, v, inv_v](Node<T>& self) {
        auto& gl = self.parents[0]->grad_buffer();
        const T g = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const int y = tgt[r];
          if (y == pad_id) continue;
          const T* lp = logp->data() + r * v;
          T* d = gl.data() + r * v;
          for (std::size_t j = 0; j < v; ++j) d[j] += g * (std::exp(lp[j]) - eps * inv_v);
          d[y] -= g * (T{1} - eps);
        }
      });
}

// ---------------------------------------------------------------------------
// Reverse pass

// Accumulates d(loss)/d(node) into every node reachable from `loss` that
// requires a gradient. Each node is visited exactly once, in reverse
// topological order.
template <class T>
void backward(const Var<T>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

}  // namespace lightnmt
