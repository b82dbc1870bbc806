#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "natscan/autodiff.hpp"
#include "natscan/tensor.hpp"

// Per-dimension standardization followed by PCA onto floor(D/2) components,
// applied independently to every cell of a feature grid.

namespace natscan::prep {

/// Dimensions with variance below this get std = 1 and a warning.
inline constexpr double kVarianceFloor = 1e-12;

template <std::floating_point T>
struct PreprocessParams {
  Tensor<T> mean;        // [D]
  Tensor<T> stddev;      // [D], strictly positive
  Tensor<T> projection;  // [D, K], orthonormal columns, K = floor(D/2)
  Tensor<T> eigenvalues; // [K], descending
  /// Divide each projected coordinate by sqrt(eigenvalue). Off by default.
  bool whiten = false;
  /// Dimensions whose std was floored during fitting.
  std::vector<std::size_t> floored_dims;

  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return projection.dim(1); }
};

template <std::floating_point T>
void validate(const PreprocessParams<T>& p);

struct Eigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // n x n row-major, column j pairs with values[j]
};

/// Cyclic Jacobi eigen-decomposition of a symmetric n x n row-major matrix.
/// Eigenvectors are sign-normalized so their largest-magnitude component is
/// positive.
Eigen jacobi_eigen(std::span<const double> matrix, std::size_t n);

/// Streaming fitter: feed grids with add(), then finish(). Moments are
/// accumulated in double precision with a Welford-style co-moment update,
/// so the corpus never has to be held in memory.
class PreprocessFitter {
 public:
  template <std::floating_point T>
  void add(const Tensor<T>& grid);

  std::size_t cells() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }

  template <std::floating_point T>
  PreprocessParams<T> finish(bool whiten = false) const;

 private:
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> comoment_;  // D x D
  std::vector<double> delta_;
};

/// Convenience wrapper over PreprocessFitter.
template <std::floating_point T>
PreprocessParams<T> fit(std::span<const Tensor<T>> corpus, bool whiten = false);

/// grid[H, W, D] -> [H, W, K], cell-wise projection^T ((v - mean) / std).
template <std::floating_point T>
Tensor<T> apply(const PreprocessParams<T>& p, const Tensor<T>& grid);

/// The same affine map as a DifferentiableOp (vjp is the transposed map).
template <std::floating_point T>
ad::OpPtr<T> apply_op(const PreprocessParams<T>& p);

template <std::floating_point T>
ad::Var<T> apply(const PreprocessParams<T>& p, ad::Var<T> grid);

}  // namespace natscan::prep
