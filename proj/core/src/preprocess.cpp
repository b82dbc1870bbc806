#include "natscan/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "natscan/log.hpp"

namespace natscan::prep {

template <std::floating_point T>
void validate(const PreprocessParams<T>& p) {
  const std::size_t d = p.mean.size();
  if (p.mean.rank() != 1 || p.stddev.shape() != Shape{d}) {
    throw ShapeError("preprocess mean/std must both be [D]");
  }
  if (p.projection.rank() != 2 || p.projection.dim(0) != d || p.projection.dim(1) != d / 2) {
    throw ShapeError("preprocess projection must be [D, floor(D/2)], got " +
                     shape_string(p.projection.shape()));
  }
  if (p.eigenvalues.shape() != Shape{d / 2}) throw ShapeError("preprocess eigenvalues must be [K]");
  for (T s : p.stddev.data())
    if (!(s > T(0))) throw NumericError("preprocess std must be strictly positive");
  if (!all_finite(p.mean) || !all_finite(p.projection) || !all_finite(p.stddev)) {
    throw NumericError("preprocess parameters contain non-finite values");
  }
}

Eigen jacobi_eigen(std::span<const double> matrix, std::size_t n) {
  if (matrix.size() != n * n) throw ShapeError("jacobi_eigen: matrix is not n x n");
  std::vector<double> a(matrix.begin(), matrix.end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [n](std::vector<double>& m, std::size_t i, std::size_t j) -> double& {
    return m[i * n + j];
  };

  double total = 0;
  for (double x : a) total += x * x;
  const double tol = 1e-30 * std::max(total, 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += at(a, i, j) * at(a, i, j);
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (apq == 0.0) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = at(v, k, p), vkq = at(v, k, q);
          at(v, k, p) = c * vkp - s * vkq;
          at(v, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return at(a, l, l) > at(a, r, r); });
  Eigen out;
  out.values.resize(n);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.values[j] = at(a, src, src);
    std::size_t big = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(at(v, k, src)) > std::abs(at(v, big, src))) big = k;
    const double sign = at(v, big, src) < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors[k * n + j] = sign * at(v, k, src);
  }
  return out;
}

template <std::floating_point T>
void PreprocessFitter::add(const Tensor<T>& grid) {
  if (grid.rank() != 3) throw ShapeError("preprocess fit expects H x W x D grids");
  const std::size_t d = grid.dim(2);
  if (dim_ == 0) {
    if (d < 2) throw DataError("preprocess needs at least two feature dimensions");
    dim_ = d;
    mean_.assign(d, 0.0);
    comoment_.assign(d * d, 0.0);
    delta_.assign(d, 0.0);
  } else if (d != dim_) {
    throw ShapeError("corpus grids disagree on depth: " + std::to_string(d) + " vs " +
                     std::to_string(dim_));
  }
  const std::size_t cells = grid.dim(0) * grid.dim(1);
  const T* src = grid.data().data();
  for (std::size_t c = 0; c < cells; ++c) {
    const T* v = src + c * d;
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t i = 0; i < d; ++i) {
      delta_[i] = static_cast<double>(v[i]) - mean_[i];
      mean_[i] += delta_[i] * inv;
    }
    // C += (x - mean_old)(x - mean_new)^T
    for (std::size_t i = 0; i < d; ++i) {
      const double di = delta_[i];
      double* row = comoment_.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += di * (static_cast<double>(v[j]) - mean_[j]);
    }
  }
}

template <std::floating_point T>
PreprocessParams<T> PreprocessFitter::finish(bool whiten) const {
  if (count_ == 0) throw DataError("preprocess fit: empty corpus");
  const std::size_t d = dim_, k = d / 2;
  if (count_ < k + 1) {
    throw DataError("preprocess fit: need at least " + std::to_string(k + 1) + " cells, got " +
                    std::to_string(count_));
  }
  const double n = static_cast<double>(count_);
  std::vector<double> sd(d);
  PreprocessParams<T> p;
  for (std::size_t i = 0; i < d; ++i) {
    const double var = comoment_[i * d + i] / n;
    if (var < kVarianceFloor) {
      sd[i] = 1.0;
      p.floored_dims.push_back(i);
      log::warn("preprocess: dimension " + std::to_string(i) + " has variance " +
                std::to_string(var) + " below floor; using std = 1");
    } else {
      sd[i] = std::sqrt(var);
    }
  }
  // The co-moment update is symmetric only up to rounding; average the halves.
  std::vector<double> cov(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double cij = 0.5 * (comoment_[i * d + j] + comoment_[j * d + i]) / n;
      cov[i * d + j] = cij / (sd[i] * sd[j]);
    }
  const Eigen eig = jacobi_eigen(cov, d);

  p.mean = Tensor<T>(Shape{d});
  p.stddev = Tensor<T>(Shape{d});
  p.projection = Tensor<T>(Shape{d, k});
  p.eigenvalues = Tensor<T>(Shape{k});
  p.whiten = whiten;
  for (std::size_t i = 0; i < d; ++i) {
    p.mean[i] = static_cast<T>(mean_[i]);
    p.stddev[i] = static_cast<T>(sd[i]);
    for (std::size_t j = 0; j < k; ++j) p.projection(i, j) = static_cast<T>(eig.vectors[i * d + j]);
  }
  for (std::size_t j = 0; j < k; ++j) {
    p.eigenvalues[j] = static_cast<T>(std::max(eig.values[j], 0.0));
  }
  return p;
}

template <std::floating_point T>
PreprocessParams<T> fit(std::span<const Tensor<T>> corpus, bool whiten) {
  PreprocessFitter f;
  for (const Tensor<T>& g : corpus) f.add(g);
  return f.finish<T>(whiten);
}

namespace {

template <std::floating_point T>
std::vector<T> whiten_scale(const PreprocessParams<T>& p) {
  std::vector<T> s(p.output_dim(), T(1));
  if (p.whiten) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      const T ev = p.eigenvalues[j];
      s[j] = ev > T(kVarianceFloor) ? T(1) / std::sqrt(ev) : T(1);
    }
  }
  return s;
}

template <std::floating_point T>
void require_depth(const PreprocessParams<T>& p, const Tensor<T>& grid) {
  if (grid.rank() != 3 || grid.dim(2) != p.input_dim()) {
    throw ShapeError("preprocess expects depth " + std::to_string(p.input_dim()) + ", got grid " +
                     shape_string(grid.shape()));
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> apply(const PreprocessParams<T>& p, const Tensor<T>& grid) {
  require_depth(p, grid);
  const std::size_t d = p.input_dim(), k = p.output_dim();
  const std::size_t cells = grid.dim(0) * grid.dim(1);
  const std::vector<T> ws = whiten_scale(p);
  Tensor<T> out(Shape{grid.dim(0), grid.dim(1), k});
  std::vector<T> z(d);
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t i = 0; i < d; ++i) z[i] = (grid[c * d + i] - p.mean[i]) / p.stddev[i];
    for (std::size_t j = 0; j < k; ++j) {
      T acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += z[i] * p.projection(i, j);
      out[c * k + j] = acc * ws[j];
    }
  }
  return out;
}

template <std::floating_point T>
ad::OpPtr<T> apply_op(const PreprocessParams<T>& p) {
  auto op = std::make_shared<ad::DifferentiableOp<T>>();
  op->name = "preprocess";
  op->arity = 1;
  op->forward = [p](ad::TensorRefs<T> in) { return apply(p, in[0].get()); };
  op->vjp = [p](ad::TensorRefs<T> in, const Tensor<T>&, const Tensor<T>& g,
                std::span<const bool>) {
    const Tensor<T>& grid = in[0].get();
    const std::size_t d = p.input_dim(), k = p.output_dim();
    const std::size_t cells = grid.dim(0) * grid.dim(1);
    const std::vector<T> ws = whiten_scale(p);
    Tensor<T> gx(grid.shape());
    for (std::size_t c = 0; c < cells; ++c)
      for (std::size_t i = 0; i < d; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < k; ++j) acc += g[c * k + j] * ws[j] * p.projection(i, j);
        gx[c * d + i] = acc / p.stddev[i];
      }
    return std::vector<Tensor<T>>{std::move(gx)};
  };
  return op;
}

template <std::floating_point T>
ad::Var<T> apply(const PreprocessParams<T>& p, ad::Var<T> grid) {
  return grid.tape()->apply(apply_op(p), {grid});
}

#define NATSCAN_INSTANTIATE(T)                                                        \
  template void validate(const PreprocessParams<T>&);                                 \
  template void PreprocessFitter::add(const Tensor<T>&);                              \
  template PreprocessParams<T> PreprocessFitter::finish<T>(bool) const;               \
  template PreprocessParams<T> fit(std::span<const Tensor<T>>, bool);                 \
  template Tensor<T> apply(const PreprocessParams<T>&, const Tensor<T>&);             \
  template ad::OpPtr<T> apply_op(const PreprocessParams<T>&);                         \
  template ad::Var<T> apply(const PreprocessParams<T>&, ad::Var<T>);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::prep
