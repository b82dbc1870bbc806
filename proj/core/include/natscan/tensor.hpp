#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "natscan/error.hpp"

namespace natscan {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Product of the extents. Throws ShapeError for an empty shape or a zero
/// extent; every tensor has at least one element.
std::size_t checked_size(const Shape& shape);

/// Dense row-major tensor. A default-constructed tensor is "empty" (no shape,
/// no data) and is rejected by every arithmetic op.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }
  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
    return t;
  }

  bool empty() const noexcept { return shape_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  const T& operator()(std::size_t i, std::size_t j) const {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k,
                      std::size_t l) const {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && {
    return Tensor(std::move(shape), std::move(data_));
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Throws ShapeError unless `a` and `b` have identical shapes.
void require_same_shape(const Shape& a, const Shape& b, const char* op);

// Pure tensor arithmetic. Mixed shapes are an error; the only broadcast is
// scalar-with-tensor via scale() and add_scalar().

template <std::floating_point T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> scale(const Tensor<T>& a, T s);
template <std::floating_point T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <std::floating_point T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> transpose(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> tanh(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> sigmoid(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> relu(const Tensor<T>& a);
template <std::floating_point T> Tensor<T> sqrt(const Tensor<T>& a);
template <std::floating_point T> T sum(const Tensor<T>& a);
template <std::floating_point T> T dot(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> T squared_norm(const Tensor<T>& a);
template <std::floating_point T> T max_abs(const Tensor<T>& a);
template <std::floating_point T> bool all_finite(const Tensor<T>& a);

/// In-place a += s * b (same shape). Used by accumulators and optimizers.
template <std::floating_point T> void axpy(T s, const Tensor<T>& b, Tensor<T>& a);

/// Scalar sigmoid shared by the tensor op and the LSTM cell.
template <std::floating_point T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace natscan
