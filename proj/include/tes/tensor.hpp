#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tes {

/// Raised when tensor shapes do not line up.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when inputs violate a documented precondition (range, finiteness, missing entries).
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

inline void require_dims(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Almost everything in this library is a 2-D batch (rows = samples), so the
/// helpers below are written for that case; higher ranks are only stored and
/// serialized.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require_dims(count(shape_) == data_.size(), "tensor data length does not match shape " + shape_string());
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  /// Builds an N x d matrix from nested rows; all rows must share a width.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Tensor t = matrix(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require_dims(rows[r].size() == cols, "ragged rows in Tensor::from_rows");
      std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_dims(rank() == 2, "expected a 2-D tensor, got " + shape_string());
    return shape_[0];
  }
  std::size_t cols() const {
    require_dims(rank() == 2, "expected a 2-D tensor, got " + shape_string());
    return shape_[1];
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::vector<double>& grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    return *grad_;
  }
  const std::optional<std::vector<double>>& grad_buffer() const noexcept { return grad_; }
  void clear_grad() noexcept { grad_.reset(); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  /// Rows [begin, end) as a new matrix.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    require_dims(begin <= end && end <= rows(), "row slice out of range");
    Tensor out = matrix(end - begin, cols());
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols()),
              data_.begin() + static_cast<std::ptrdiff_t>(end * cols()), out.data_.begin());
    return out;
  }

  /// Rows selected by index, in the given order.
  Tensor gather_rows(std::span<const std::size_t> idx) const {
    Tensor out = matrix(idx.size(), cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      require_dims(idx[i] < rows(), "row index out of range");
      auto src = row(idx[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  /// Column c as an N x 1 matrix.
  Tensor column(std::size_t c) const {
    Tensor out = matrix(rows(), 1);
    for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, c);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

/// Stacks two matrices with equal widths vertically.
inline Tensor vstack(const Tensor& top, const Tensor& bottom) {
  require_dims(top.cols() == bottom.cols(), "vstack width mismatch");
  Tensor out = Tensor::matrix(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

}  // namespace tes
