#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "natscan/tensor.hpp"

// Reverse-mode differentiation. A Tape records applications of
// DifferentiableOps; backward() walks the record in reverse and pulls
// cotangents back to every node that requires a gradient.

namespace natscan::ad {

template <std::floating_point T>
using TensorRefs = std::span<const std::reference_wrapper<const Tensor<T>>>;

/// One differentiable primitive: a forward map and its vector-Jacobian
/// product. `vjp` returns one cotangent per input, shaped like that input.
/// When `needed[i]` is false the op may leave entry i empty.
template <std::floating_point T>
struct DifferentiableOp {
  std::string name;
  std::size_t arity = 0;
  std::function<Tensor<T>(TensorRefs<T> inputs)> forward;
  std::function<std::vector<Tensor<T>>(TensorRefs<T> inputs, const Tensor<T>& output,
                                       const Tensor<T>& cotangent,
                                       std::span<const bool> needed)>
      vjp;
};

template <std::floating_point T>
using OpPtr = std::shared_ptr<const DifferentiableOp<T>>;

/// Evaluates `op` on plain tensors, checking arity.
template <std::floating_point T>
Tensor<T> evaluate(const DifferentiableOp<T>& op, const std::vector<Tensor<T>>& inputs);

/// Pulls `cotangent` back through `op` for all inputs.
template <std::floating_point T>
std::vector<Tensor<T>> pullback(const DifferentiableOp<T>& op,
                                const std::vector<Tensor<T>>& inputs,
                                const Tensor<T>& cotangent);

template <std::floating_point T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(*this); }
  Shape shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <std::floating_point T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is accumulated by backward().
  Var<T> variable(Tensor<T> value);

  Var<T> apply(const OpPtr<T>& op, std::span<const Var<T>> inputs);
  Var<T> apply(const OpPtr<T>& op, std::initializer_list<Var<T>> inputs) {
    return apply(op, std::span<const Var<T>>(inputs.begin(), inputs.size()));
  }

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const;

  /// Adds `cotangent` to the pending gradient of `v`.
  void seed(Var<T> v, const Tensor<T>& cotangent);
  /// Propagates all seeded cotangents back to the leaves. Call once per
  /// tape; a second call would pull the same cotangents back again.
  void backward();
  /// Seeds a scalar output with 1 and propagates.
  void backward(Var<T> scalar_output);

  /// Accumulated gradient; zeros if nothing flowed into `v`.
  Tensor<T> grad(Var<T> v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    OpPtr<T> op;
    std::vector<std::uint32_t> parents;
    bool requires_grad = false;
  };

  const Node& node(Var<T> v) const;
  Var<T> push(Node node);

  std::vector<Node> nodes_;
};

// Graph-building functions. Each wraps the correspondingly named primitive
// from the ops:: namespace below.

template <std::floating_point T> Var<T> add(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> sub(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> mul(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> scale(Var<T> a, T s);
template <std::floating_point T> Var<T> add_scalar(Var<T> a, T s);
template <std::floating_point T> Var<T> matmul(Var<T> a, Var<T> b);
/// m[n, k] + b[k] added to every row.
template <std::floating_point T> Var<T> add_rows(Var<T> m, Var<T> b);
template <std::floating_point T> Var<T> tanh(Var<T> a);
template <std::floating_point T> Var<T> sigmoid(Var<T> a);
template <std::floating_point T> Var<T> relu(Var<T> a);
template <std::floating_point T> Var<T> sum(Var<T> a);
template <std::floating_point T> Var<T> squared_norm(Var<T> a);
/// m[n, k] -> [n] of per-row squared Euclidean norms.
template <std::floating_point T> Var<T> row_squared_norms(Var<T> m);
template <std::floating_point T> Var<T> reshape(Var<T> a, Shape shape);
/// Stacks same-shaped tensors along a new leading axis.
template <std::floating_point T> Var<T> stack(std::span<const Var<T>> parts);

enum class ScanAxis { kHorizontal, kVertical };

/// Takes one scan step from a batch of grids g[N, H, W, K]. Horizontal scans
/// return column `index` of every row as [N*H, K]; vertical scans return row
/// `index` of every column as [N*W, K].
template <std::floating_point T>
Var<T> scan_slice(Var<T> grids, ScanAxis axis, std::size_t index);

/// Convolution on HWC layout: x[H, W, C], w[O, C, kh, kw], b[O] ->
/// [(H + 2p - kh)/s + 1, (W + 2p - kw)/s + 1, O], zero padding.
template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad);
/// Max pooling on HWC layout without padding.
template <std::floating_point T>
Var<T> maxpool(Var<T> x, std::size_t kernel, std::size_t stride);

namespace ops {

template <std::floating_point T> const OpPtr<T>& add();
template <std::floating_point T> const OpPtr<T>& sub();
template <std::floating_point T> const OpPtr<T>& mul();
template <std::floating_point T> OpPtr<T> scale(T s);
template <std::floating_point T> OpPtr<T> add_scalar(T s);
template <std::floating_point T> const OpPtr<T>& matmul();
template <std::floating_point T> const OpPtr<T>& add_rows();
template <std::floating_point T> const OpPtr<T>& tanh();
template <std::floating_point T> const OpPtr<T>& sigmoid();
template <std::floating_point T> const OpPtr<T>& relu();
template <std::floating_point T> const OpPtr<T>& sum();
template <std::floating_point T> const OpPtr<T>& squared_norm();
template <std::floating_point T> const OpPtr<T>& row_squared_norms();
template <std::floating_point T> OpPtr<T> reshape(Shape shape);
template <std::floating_point T> OpPtr<T> stack(std::size_t count);
template <std::floating_point T> OpPtr<T> scan_slice(ScanAxis axis, std::size_t index);
template <std::floating_point T> OpPtr<T> conv2d(std::size_t stride, std::size_t pad);
template <std::floating_point T> OpPtr<T> maxpool(std::size_t kernel, std::size_t stride);

}  // namespace ops

/// Names of every primitive in ops::. Property tests iterate this list so a
/// new primitive cannot slip in without a gradient check.
std::span<const std::string_view> registered_op_names();

}  // namespace natscan::ad
