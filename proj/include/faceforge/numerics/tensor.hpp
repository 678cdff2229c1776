#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "faceforge/numerics/errors.hpp"

namespace faceforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. A gradient buffer of the same shape is
// carried only when requires_grad() is set. Rank 0 ({}) is a scalar.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_size(shape_)) {
      throw UsageError("tensor: " + std::to_string(values_.size()) + " values do not fill shape " +
                       shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw UsageError("tensor: from_rows needs at least one row");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw UsageError("tensor: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(flat));
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : throw UsageError("rows(): tensor is not a matrix"); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : throw UsageError("cols(): tensor is not a matrix"); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const double>(values_).subspan(r * c, c);
  }
  std::span<double> row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<double>(values_).subspan(r * c, c);
  }

  bool requires_grad() const { return grad_.has_value(); }

  void set_requires_grad(bool on) {
    if (on && !grad_) grad_.emplace(values_.size(), 0.0);
    if (!on) grad_.reset();
  }

  std::span<double> grad() {
    if (!grad_) throw UsageError("grad(): tensor does not require grad");
    return *grad_;
  }
  std::span<const double> grad() const {
    if (!grad_) throw UsageError("grad(): tensor does not require grad");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }

  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), values_);
    return out;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw UsageError("tensor: zero-length dimension in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

// Splits a shape around `axis` into (outer, axis length, inner) strides for
// reductions along one axis of a row-major buffer.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw UsageError("axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace faceforge
