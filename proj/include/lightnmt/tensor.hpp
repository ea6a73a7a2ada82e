#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lightnmt/error.hpp"

namespace lightnmt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major tensor. Most of the library works with rank-2 tensors
// (rows x cols); rank-1 tensors are treated as a single row.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T{1};
    return t;
  }
  static Tensor row(std::vector<T> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept {
    return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1);
  }
  std::size_t cols() const noexcept {
    return shape_.empty() ? 0 : shape_.back();
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<T> row_span(std::size_t r) {
    return {data_.data() + r * cols(), cols()};
  }
  std::span<const T> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                           shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

namespace kernels {

// Dot product with a fixed 8-lane accumulation order, so the result for a
// pair of vectors does not depend on where they sit inside a larger matrix.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[k + l] * b[k + l];
  for (std::size_t l = 0; k < n; ++k, ++l) acc[l] += a[k] * b[k];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// C[m x n] (+)= A[m x k] * B[k x n]. Each output element accumulates over k
// in ascending order regardless of m and n.
template <class T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  constexpr std::size_t kColBlock = 512;
  constexpr std::size_t kRowBlock = 4;
  if (!accumulate) std::fill(C, C + m * n, T{0});
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t jn = std::min(kColBlock, n - j0);
    std::size_t i = 0;
    for (; i + kRowBlock <= m; i += kRowBlock) {
      T* c0 = C + (i + 0) * n + j0;
      T* c1 = C + (i + 1) * n + j0;
      T* c2 = C + (i + 2) * n + j0;
      T* c3 = C + (i + 3) * n + j0;
      const T* a0 = A + (i + 0) * k;
      const T* a1 = A + (i + 1) * k;
      const T* a2 = A + (i + 2) * k;
      const T* a3 = A + (i + 3) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* b = B + p * n + j0;
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        for (std::size_t j = 0; j < jn; ++j) {
          const T bj = b[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    }
    for (; i < m; ++i) {
      T* c0 = C + i * n + j0;
      const T* a0 = A + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* b = B + p * n + j0;
        const T x0 = a0[p];
        for (std::size_t j = 0; j < jn; ++j) c0[j] += x0 * b[j];
      }
    }
  }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T, via a transposed copy of B so that
// each element follows gemm_nn's accumulation order.
template <class T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  std::vector<T> bt(k * n);
  constexpr std::size_t kTile = 32;
  for (std::size_t j0 = 0; j0 < n; j0 += kTile)
    for (std::size_t p0 = 0; p0 < k; p0 += kTile)
      for (std::size_t j = j0; j < std::min(n, j0 + kTile); ++j)
        for (std::size_t p = p0; p < std::min(k, p0 + kTile); ++p)
          bt[p * n + j] = B[j * k + p];
  gemm_nn(A, bt.data(), C, m, k, n, accumulate);
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false) {
  if (!accumulate) std::fill(C, C + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* a = A + p * m;
    const T* b = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T x = a[i];
      if (x == T{0}) continue;
      T* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += x * b[j];
    }
  }
}

inline void require_rank2(const Shape& s, const char* what) {
  if (s.size() != 2 && s.size() != 1)
    throw DimensionError(std::string(what) + ": expected a matrix, got " +
                         shape_str(s));
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  const std::size_t m = a.rows(), k = a.cols();
  const std::size_t bk = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (k != bk)
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                         (transpose_b ? " x T" : " x ") + shape_str(b.shape()));
  Tensor<T> c({m, n});
  if (transpose_b)
    gemm_nt(a.data(), b.data(), c.data(), m, k, n);
  else
    gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  return c;
}

template <class T>
void softmax_row(std::span<const T> in, std::span<T> out) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : in) mx = std::max(mx, v);
  T sum = 0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const T inv = T{1} / sum;
  for (auto& v : out) v *= inv;
}

template <class T>
void log_softmax_row(std::span<const T> in, std::span<T> out) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : in) mx = std::max(mx, v);
  T sum = 0;
  for (T v : in) sum += std::exp(v - mx);
  const T lse = mx + std::log(sum);
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] - lse;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) softmax_row(x.row_span(r), y.row_span(r));
  return y;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    log_softmax_row(x.row_span(r), y.row_span(r));
  return y;
}

// Normalizes one row in place-free fashion; returns (mean, 1/std).
template <class T>
std::pair<T, T> layer_norm_row(std::span<const T> x, std::span<const T> gain,
                               std::span<const T> bias, std::span<T> out, T eps) {
  const std::size_t n = x.size();
  T mean = 0;
  for (T v : x) mean += v;
  mean /= static_cast<T>(n);
  T var = 0;
  for (T v : x) var += (v - mean) * (v - mean);
  var /= static_cast<T>(n);
  const T rstd = T{1} / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j)
    out[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  return {mean, rstd};
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw DimensionError("layer_norm: gain/bias size must equal " +
                         std::to_string(x.cols()));
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    layer_norm_row<T>(x.row_span(r), gain.values(), bias.values(), y.row_span(r), eps);
  return y;
}

// out[j] += bias[j] for each row
template <class T>
void add_row_inplace(Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = x.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
  const std::size_t d = table.cols();
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
      throw DataError("token id " + std::to_string(ids[i]) +
                      " out of range for table of " + std::to_string(table.rows()) +
                      " rows");
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  return out;
}

}  // namespace kernels
}  // namespace lightnmt
