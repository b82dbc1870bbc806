#include "natscan/tensor.hpp"

#include <cmath>
#include <sstream>

namespace natscan {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t checked_size(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b || a.empty()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) +
                     " vs " + shape_string(b));
  }
}

namespace {

template <std::floating_point T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
  if (a.empty()) throw ShapeError("operation on empty tensor");
  Tensor<T> out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <std::floating_point T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "mul", [](T x, T y) { return x * y; });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map(a, [s](T x) { return s * x; });
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return map(a, [s](T x) { return x + s; });
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor<T> out(Shape{n, m});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = out.data().data();
  // i-k-j order; each output still accumulates over k in ascending order,
  // so results match the textbook triple loop bit for bit.
  for (std::size_t i = 0; i < n; ++i) {
    T* row = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += aip * brow[j];
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t n = a.dim(0), m = a.dim(1);
  Tensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = a(i, j);
  return out;
}

template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& a) {
  return map(a, [](T x) { return std::tanh(x); });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return map(a, [](T x) { return sigmoid(x); });
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  return map(a, [](T x) { return x > T(0) ? x : T(0); });
}

template <std::floating_point T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return map(a, [](T x) { return std::sqrt(x); });
}

template <std::floating_point T>
T sum(const Tensor<T>& a) {
  if (a.empty()) throw ShapeError("sum: empty tensor");
  T s = 0;
  for (T v : a.data()) s += v;
  return s;
}

template <std::floating_point T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  T s = 0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

template <std::floating_point T>
T squared_norm(const Tensor<T>& a) {
  return dot(a, a);
}

template <std::floating_point T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (T v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <std::floating_point T>
bool all_finite(const Tensor<T>& a) {
  for (T v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <std::floating_point T>
void axpy(T s, const Tensor<T>& b, Tensor<T>& a) {
  require_same_shape(a.shape(), b.shape(), "axpy");
  auto x = b.data();
  auto y = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

#define NATSCAN_INSTANTIATE(T)                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> scale(const Tensor<T>&, T);                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> transpose(const Tensor<T>&);                           \
  template Tensor<T> tanh(const Tensor<T>&);                                \
  template Tensor<T> sigmoid(const Tensor<T>&);                             \
  template Tensor<T> relu(const Tensor<T>&);                                \
  template Tensor<T> sqrt(const Tensor<T>&);                                \
  template T sum(const Tensor<T>&);                                         \
  template T dot(const Tensor<T>&, const Tensor<T>&);                       \
  template T squared_norm(const Tensor<T>&);                                \
  template T max_abs(const Tensor<T>&);                                     \
  template bool all_finite(const Tensor<T>&);                               \
  template void axpy(T, const Tensor<T>&, Tensor<T>&);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan
