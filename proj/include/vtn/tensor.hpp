#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "vtn/error.hpp"

namespace vtn {

/// Dense row-major matrix. A default-constructed matrix is empty (0x0) and
/// only serves as a placeholder; every explicitly shaped matrix has
/// rows >= 1 and cols >= 1.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    check_dims(rows, cols);
    data_.assign(rows * cols, T{0});
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_dims(rows, cols);
    if (data_.size() != rows * cols) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows, cols));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    if (rows.size() == 0) throw ShapeError("from_rows: no rows");
    const std::size_t cols = rows.begin()->size();
    std::vector<T> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
  }

  static Matrix row_vector(std::span<const T> values) {
    return Matrix(1, values.size(), std::vector<T>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::string shape() const { return shape_string(rows_, cols_); }

  template <typename U>
  Matrix<U> cast() const {
    if (empty()) return {};
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  bool operator==(const Matrix& other) const = default;

 private:
  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }
  static void check_dims(std::size_t r, std::size_t c) {
    if (r == 0 || c == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_string(r, c));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Tensor2D = Matrix<double>;
using Tensor2DF = Matrix<float>;

/// Intra-op thread count used by matmul (>= 1).
void set_num_threads(unsigned threads);
unsigned num_threads();

/// Counts multiply-accumulates performed by matmul on the current thread
/// while an instance is alive. Instances nest; the innermost one counts.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }

 private:
  friend void record_macs(std::uint64_t);
  std::uint64_t count_ = 0;
  MacCounter* previous_ = nullptr;
};

void record_macs(std::uint64_t macs);

namespace detail {

inline void require_same_shape(const char* op, std::size_t ar, std::size_t ac, std::size_t br,
                               std::size_t bc) {
  if (ar != br || ac != bc) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(ar) + "x" +
                     std::to_string(ac) + ") vs (" + std::to_string(br) + "x" + std::to_string(bc) +
                     ")");
  }
}

template <typename T>
void matmul_columns(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, std::size_t col_begin,
                    std::size_t col_end) {
  const std::size_t inner = a.cols();
  const std::size_t width = col_end - col_begin;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* out_row = out.row(i).data() + col_begin;
    const T* a_row = a.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const T aik = a_row[k];
      const T* b_row = b.row(k).data() + col_begin;
      for (std::size_t j = 0; j < width; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

}  // namespace detail

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: lhs " + a.shape() + " incompatible with rhs " + b.shape());
  }
  Matrix<T> out(a.rows(), b.cols());
  const std::uint64_t macs = static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
  record_macs(macs);

  const unsigned threads = std::min<std::size_t>(num_threads(), b.cols());
  constexpr std::uint64_t kParallelThreshold = 1u << 16;
  if (threads <= 1 || macs < kParallelThreshold) {
    detail::matmul_columns(a, b, out, 0, b.cols());
    return out;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads - 1);
  const std::size_t chunk = (b.cols() + threads - 1) / threads;
  for (unsigned w = 1; w < threads; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(b.cols(), begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&, begin, end] { detail::matmul_columns(a, b, out, begin, end); });
  }
  detail::matmul_columns(a, b, out, 0, std::min(chunk, b.cols()));
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape("add", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

template <typename T>
Matrix<T> subtract(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape("subtract", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

/// In-place a += b.
template <typename T>
void accumulate(Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape("accumulate", a.rows(), a.cols(), b.rows(), b.cols());
  auto o = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T s) {
  Matrix<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  detail::require_same_shape("hadamard", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

template <typename T>
Matrix<T> relu(const Matrix<T>& a) {
  Matrix<T> out = a;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

/// Adds a 1 x cols bias row to every row of `a`.
template <typename T>
Matrix<T> add_row_bias(const Matrix<T>& a, const Matrix<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row_bias: bias " + bias.shape() + " incompatible with " + a.shape());
  }
  Matrix<T> out = a;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias(0, j);
  }
  return out;
}

/// x * w + b, with b a 1 x w.cols() row.
template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  return add_row_bias(matmul(x, w), b);
}

/// Column sums as a 1 x cols row.
template <typename T>
Matrix<T> column_sums(const Matrix<T>& a) {
  Matrix<T> out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out(0, j) += r[j];
  }
  return out;
}

template <typename T>
Matrix<T> concat_cols(std::span<const Matrix<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row count mismatch " + parts.front().shape() + " vs " +
                       p.shape());
    }
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      auto src = p.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + offset);
      offset += p.cols();
    }
  }
  return out;
}

template <typename T>
Matrix<T> concat_cols(std::initializer_list<Matrix<T>> parts) {
  return concat_cols(std::span<const Matrix<T>>(parts.begin(), parts.size()));
}

/// Columns [begin, begin + count).
template <typename T>
Matrix<T> slice_cols(const Matrix<T>& a, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + a.shape());
  }
  Matrix<T> out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto src = a.row(i).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// Rows selected by index, in the given order.
template <typename T>
Matrix<T> gather_rows(const Matrix<T>& a, std::span<const std::size_t> indices) {
  Matrix<T> out(indices.size(), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.rows()) {
      throw BoundsError("gather_rows: row " + std::to_string(indices[i]) + " outside " + a.shape());
    }
    auto src = a.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// Numerically stable softmax over a single vector.
template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  for (T v : x) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const T peak = *std::max_element(x.begin(), x.end());
  std::vector<T> out(x.size());
  T total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto p = softmax<T>(x.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace vtn
