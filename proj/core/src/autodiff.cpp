#include "natscan/autodiff.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace natscan::ad {

// ---------------------------------------------------------------------------
// Evaluation helpers and tape

template <std::floating_point T>
static std::vector<std::reference_wrapper<const Tensor<T>>> refs_of(
    const std::vector<Tensor<T>>& inputs) {
  return {inputs.begin(), inputs.end()};
}

template <std::floating_point T>
Tensor<T> evaluate(const DifferentiableOp<T>& op, const std::vector<Tensor<T>>& inputs) {
  if (op.arity != 0 && inputs.size() != op.arity) {
    throw ShapeError(op.name + ": expected " + std::to_string(op.arity) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  auto refs = refs_of(inputs);
  return op.forward(refs);
}

template <std::floating_point T>
std::vector<Tensor<T>> pullback(const DifferentiableOp<T>& op,
                                const std::vector<Tensor<T>>& inputs,
                                const Tensor<T>& cotangent) {
  auto refs = refs_of(inputs);
  Tensor<T> out = op.forward(refs);
  require_same_shape(out.shape(), cotangent.shape(), op.name.c_str());
  std::unique_ptr<bool[]> needed(new bool[inputs.size()]);
  for (std::size_t i = 0; i < inputs.size(); ++i) needed[i] = true;
  return op.vjp(refs, out, cotangent, std::span<const bool>(needed.get(), inputs.size()));
}

template <std::floating_point T>
const typename Tape<T>::Node& Tape<T>::node(Var<T> v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw Error("variable does not belong to this tape");
  }
  return nodes_[v.id()];
}

template <std::floating_point T>
Var<T> Tape<T>::push(Node n) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw Error("tape is full");
  }
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <std::floating_point T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  if (value.empty()) throw ShapeError("tape leaf must not be empty");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <std::floating_point T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  if (value.empty()) throw ShapeError("tape leaf must not be empty");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <std::floating_point T>
Var<T> Tape<T>::apply(const OpPtr<T>& op, std::span<const Var<T>> inputs) {
  if (op->arity != 0 && inputs.size() != op->arity) {
    throw ShapeError(op->name + ": expected " + std::to_string(op->arity) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  std::vector<std::reference_wrapper<const Tensor<T>>> refs;
  refs.reserve(inputs.size());
  Node n;
  n.parents.reserve(inputs.size());
  for (const Var<T>& v : inputs) {
    const Node& p = node(v);
    refs.emplace_back(p.value);
    n.parents.push_back(v.id());
    n.requires_grad = n.requires_grad || p.requires_grad;
  }
  n.value = op->forward(refs);
  if (n.requires_grad) n.op = op;
  return push(std::move(n));
}

template <std::floating_point T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  return node(v).value;
}

template <std::floating_point T>
bool Tape<T>::requires_grad(Var<T> v) const {
  return node(v).requires_grad;
}

template <std::floating_point T>
void Tape<T>::seed(Var<T> v, const Tensor<T>& cotangent) {
  const Node& cn = node(v);
  require_same_shape(cn.value.shape(), cotangent.shape(), "seed");
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = cotangent;
  } else {
    axpy(T(1), cotangent, n.grad);
  }
}

template <std::floating_point T>
void Tape<T>::backward() {
  std::vector<std::reference_wrapper<const Tensor<T>>> refs;
  std::unique_ptr<bool[]> needed;
  std::size_t needed_cap = 0;
  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    Node& n = nodes_[idx];
    if (!n.op || n.grad.empty()) continue;
    refs.clear();
    if (n.parents.size() > needed_cap) {
      needed_cap = n.parents.size();
      needed.reset(new bool[needed_cap]);
    }
    bool any = false;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const Node& p = nodes_[n.parents[i]];
      refs.emplace_back(p.value);
      needed[i] = p.requires_grad;
      any = any || needed[i];
    }
    if (!any) continue;
    std::vector<Tensor<T>> cots =
        n.op->vjp(refs, n.value, n.grad, std::span<const bool>(needed.get(), n.parents.size()));
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      if (!needed[i]) continue;
      Node& p = nodes_[n.parents[i]];
      if (p.grad.empty()) {
        p.grad = std::move(cots[i]);
      } else {
        axpy(T(1), cots[i], p.grad);
      }
    }
  }
}

template <std::floating_point T>
void Tape<T>::backward(Var<T> scalar_output) {
  const Node& n = node(scalar_output);
  if (n.value.size() != 1) {
    throw ShapeError("backward: output is not a scalar, shape " + shape_string(n.value.shape()));
  }
  seed(scalar_output, Tensor<T>(n.value.shape(), T(1)));
  backward();
}

template <std::floating_point T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Primitives

namespace ops {
namespace {

template <std::floating_point T>
using Refs = TensorRefs<T>;
template <std::floating_point T>
using Cots = std::vector<Tensor<T>>;

template <std::floating_point T>
OpPtr<T> make(std::string name, std::size_t arity,
              std::function<Tensor<T>(Refs<T>)> forward,
              std::function<Cots<T>(Refs<T>, const Tensor<T>&, const Tensor<T>&,
                                    std::span<const bool>)>
                  vjp) {
  auto op = std::make_shared<DifferentiableOp<T>>();
  op->name = std::move(name);
  op->arity = arity;
  op->forward = std::move(forward);
  op->vjp = std::move(vjp);
  return op;
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(s));
  }
}

}  // namespace

template <std::floating_point T>
const OpPtr<T>& add() {
  static const OpPtr<T> op = make<T>(
      "add", 2, [](Refs<T> in) { return natscan::add(in[0].get(), in[1].get()); },
      [](Refs<T>, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        return Cots<T>{g, g};
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& sub() {
  static const OpPtr<T> op = make<T>(
      "sub", 2, [](Refs<T> in) { return natscan::sub(in[0].get(), in[1].get()); },
      [](Refs<T>, const Tensor<T>&, const Tensor<T>& g, std::span<const bool> need) {
        Cots<T> out(2);
        if (need[0]) out[0] = g;
        if (need[1]) out[1] = natscan::scale(g, T(-1));
        return out;
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& mul() {
  static const OpPtr<T> op = make<T>(
      "mul", 2, [](Refs<T> in) { return natscan::mul(in[0].get(), in[1].get()); },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool> need) {
        Cots<T> out(2);
        if (need[0]) out[0] = natscan::mul(g, in[1].get());
        if (need[1]) out[1] = natscan::mul(g, in[0].get());
        return out;
      });
  return op;
}

template <std::floating_point T>
OpPtr<T> scale(T s) {
  return make<T>(
      "scale", 1, [s](Refs<T> in) { return natscan::scale(in[0].get(), s); },
      [s](Refs<T>, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        return Cots<T>{natscan::scale(g, s)};
      });
}

template <std::floating_point T>
OpPtr<T> add_scalar(T s) {
  return make<T>(
      "add_scalar", 1, [s](Refs<T> in) { return natscan::add_scalar(in[0].get(), s); },
      [](Refs<T>, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        return Cots<T>{g};
      });
}

template <std::floating_point T>
const OpPtr<T>& matmul() {
  static const OpPtr<T> op = make<T>(
      "matmul", 2, [](Refs<T> in) { return natscan::matmul(in[0].get(), in[1].get()); },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool> need) {
        const Tensor<T>& a = in[0].get();
        const Tensor<T>& b = in[1].get();
        const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
        Cots<T> out(2);
        if (need[0]) {
          // g[n,m] * b^T[m,k]
          Tensor<T> ga(a.shape());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T acc = 0;
              for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * b(p, j);
              ga(i, p) = acc;
            }
          out[0] = std::move(ga);
        }
        if (need[1]) {
          // a^T[k,n] * g[n,m]
          Tensor<T> gb(b.shape());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T aip = a(i, p);
              for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * g(i, j);
            }
          out[1] = std::move(gb);
        }
        return out;
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& add_rows() {
  static const OpPtr<T> op = make<T>(
      "add_rows", 2,
      [](Refs<T> in) {
        const Tensor<T>& m = in[0].get();
        const Tensor<T>& b = in[1].get();
        require_rank(m.shape(), 2, "add_rows");
        if (b.rank() != 1 || b.dim(0) != m.dim(1)) {
          throw ShapeError("add_rows: bias " + shape_string(b.shape()) + " vs matrix " +
                           shape_string(m.shape()));
        }
        Tensor<T> out = m;
        for (std::size_t i = 0; i < m.dim(0); ++i)
          for (std::size_t j = 0; j < m.dim(1); ++j) out(i, j) += b[j];
        return out;
      },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool> need) {
        Cots<T> out(2);
        if (need[0]) out[0] = g;
        if (need[1]) {
          Tensor<T> gb(in[1].get().shape());
          for (std::size_t i = 0; i < g.dim(0); ++i)
            for (std::size_t j = 0; j < g.dim(1); ++j) gb[j] += g(i, j);
          out[1] = std::move(gb);
        }
        return out;
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& tanh() {
  static const OpPtr<T> op = make<T>(
      "tanh", 1, [](Refs<T> in) { return natscan::tanh(in[0].get()); },
      [](Refs<T>, const Tensor<T>& y, const Tensor<T>& g, std::span<const bool>) {
        Tensor<T> gx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * (T(1) - y[i] * y[i]);
        return Cots<T>{std::move(gx)};
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& sigmoid() {
  static const OpPtr<T> op = make<T>(
      "sigmoid", 1, [](Refs<T> in) { return natscan::sigmoid(in[0].get()); },
      [](Refs<T>, const Tensor<T>& y, const Tensor<T>& g, std::span<const bool>) {
        Tensor<T> gx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * y[i] * (T(1) - y[i]);
        return Cots<T>{std::move(gx)};
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& relu() {
  static const OpPtr<T> op = make<T>(
      "relu", 1, [](Refs<T> in) { return natscan::relu(in[0].get()); },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        const Tensor<T>& x = in[0].get();
        Tensor<T> gx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? g[i] : T(0);
        return Cots<T>{std::move(gx)};
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& sum() {
  static const OpPtr<T> op = make<T>(
      "sum", 1, [](Refs<T> in) { return Tensor<T>::scalar(natscan::sum(in[0].get())); },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        return Cots<T>{Tensor<T>(in[0].get().shape(), g[0])};
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& squared_norm() {
  static const OpPtr<T> op = make<T>(
      "squared_norm", 1,
      [](Refs<T> in) { return Tensor<T>::scalar(natscan::squared_norm(in[0].get())); },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        return Cots<T>{natscan::scale(in[0].get(), T(2) * g[0])};
      });
  return op;
}

template <std::floating_point T>
const OpPtr<T>& row_squared_norms() {
  static const OpPtr<T> op = make<T>(
      "row_squared_norms", 1,
      [](Refs<T> in) {
        const Tensor<T>& m = in[0].get();
        require_rank(m.shape(), 2, "row_squared_norms");
        Tensor<T> out(Shape{m.dim(0)});
        for (std::size_t i = 0; i < m.dim(0); ++i) {
          T acc = 0;
          for (std::size_t j = 0; j < m.dim(1); ++j) acc += m(i, j) * m(i, j);
          out[i] = acc;
        }
        return out;
      },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        const Tensor<T>& m = in[0].get();
        Tensor<T> gm(m.shape());
        for (std::size_t i = 0; i < m.dim(0); ++i)
          for (std::size_t j = 0; j < m.dim(1); ++j) gm(i, j) = T(2) * g[i] * m(i, j);
        return Cots<T>{std::move(gm)};
      });
  return op;
}

template <std::floating_point T>
OpPtr<T> reshape(Shape shape) {
  return make<T>(
      "reshape", 1, [shape](Refs<T> in) { return in[0].get().reshaped(shape); },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
        return Cots<T>{g.reshaped(in[0].get().shape())};
      });
}

template <std::floating_point T>
OpPtr<T> stack(std::size_t count) {
  if (count == 0) throw ShapeError("stack: nothing to stack");
  return make<T>(
      "stack", count,
      [](Refs<T> in) {
        const Shape& part = in[0].get().shape();
        Shape shape{in.size()};
        shape.insert(shape.end(), part.begin(), part.end());
        Tensor<T> out(shape);
        const std::size_t n = in[0].get().size();
        for (std::size_t i = 0; i < in.size(); ++i) {
          require_same_shape(part, in[i].get().shape(), "stack");
          std::copy(in[i].get().data().begin(), in[i].get().data().end(),
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
        }
        return out;
      },
      [](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool> need) {
        Cots<T> out(in.size());
        const std::size_t n = in[0].get().size();
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (!need[i]) continue;
          auto first = g.data().begin() + static_cast<std::ptrdiff_t>(i * n);
          out[i] = Tensor<T>(in[i].get().shape(), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n)));
        }
        return out;
      });
}

template <std::floating_point T>
OpPtr<T> scan_slice(ScanAxis axis, std::size_t index) {
  // Maps (batch row, k) of the output to the flat input offset.
  auto forward = [axis, index](Refs<T> in) {
    const Tensor<T>& g = in[0].get();
    require_rank(g.shape(), 4, "scan_slice");
    const std::size_t n = g.dim(0), h = g.dim(1), w = g.dim(2), k = g.dim(3);
    if (axis == ScanAxis::kHorizontal) {
      if (index >= w) throw ShapeError("scan_slice: column index out of range");
      Tensor<T> out(Shape{n * h, k});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t c = 0; c < k; ++c) out(b * h + y, c) = g(b, y, index, c);
      return out;
    }
    if (index >= h) throw ShapeError("scan_slice: row index out of range");
    Tensor<T> out(Shape{n * w, k});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < k; ++c) out(b * w + x, c) = g(b, index, x, c);
    return out;
  };
  auto vjp = [axis, index](Refs<T> in, const Tensor<T>&, const Tensor<T>& gout,
                           std::span<const bool>) {
    const Tensor<T>& g = in[0].get();
    const std::size_t n = g.dim(0), h = g.dim(1), w = g.dim(2), k = g.dim(3);
    Tensor<T> gx(g.shape());
    if (axis == ScanAxis::kHorizontal) {
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t c = 0; c < k; ++c) gx(b, y, index, c) = gout(b * h + y, c);
    } else {
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < k; ++c) gx(b, index, x, c) = gout(b * w + x, c);
    }
    return Cots<T>{std::move(gx)};
  };
  return make<T>("scan_slice", 1, forward, vjp);
}

namespace {

struct ConvGeometry {
  std::size_t h, w, c, o, kh, kw, oh, ow;
};

template <std::floating_point T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& wt, const Tensor<T>& b,
                           std::size_t stride, std::size_t pad) {
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(wt.shape(), 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), wt.dim(0), wt.dim(2), wt.dim(3), 0, 0};
  if (wt.dim(1) != g.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(wt.dim(1)) +
                     " input channels, image has " + std::to_string(g.c));
  }
  if (b.rank() != 1 || b.dim(0) != g.o) {
    throw ShapeError("conv2d: bias shape " + shape_string(b.shape()) + " for " +
                     std::to_string(g.o) + " output channels");
  }
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// cols[p, q] with p = output pixel (row-major), q = (c, dy, dx) matching the
// kernel layout; out-of-bounds taps read zero.
template <std::floating_point T>
std::vector<T> im2col(const Tensor<T>& x, const ConvGeometry& g, std::size_t stride,
                      std::size_t pad) {
  const std::size_t q = g.c * g.kh * g.kw;
  std::vector<T> cols(g.oh * g.ow * q, T(0));
  for (std::size_t oy = 0; oy < g.oh; ++oy)
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      T* row = cols.data() + (oy * g.ow + ox) * q;
      for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t dy = 0; dy < g.kh; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + dy) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t dx = 0; dx < g.kw; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + dx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            row[(c * g.kh + dy) * g.kw + dx] =
                x(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c);
          }
        }
    }
  return cols;
}

}  // namespace

template <std::floating_point T>
OpPtr<T> conv2d(std::size_t stride, std::size_t pad) {
  auto forward = [stride, pad](Refs<T> in) {
    const Tensor<T>& x = in[0].get();
    const Tensor<T>& wt = in[1].get();
    const Tensor<T>& b = in[2].get();
    const ConvGeometry g = conv_geometry(x, wt, b, stride, pad);
    const std::size_t q = g.c * g.kh * g.kw;
    const std::vector<T> cols = im2col(x, g, stride, pad);
    Tensor<T> out(Shape{g.oh, g.ow, g.o});
    const T* pw = wt.data().data();
    T* po = out.data().data();
    for (std::size_t p = 0; p < g.oh * g.ow; ++p) {
      const T* row = cols.data() + p * q;
      for (std::size_t o = 0; o < g.o; ++o) {
        const T* krow = pw + o * q;
        T acc = 0;
        for (std::size_t j = 0; j < q; ++j) acc += row[j] * krow[j];
        po[p * g.o + o] = acc + b[o];
      }
    }
    return out;
  };
  auto vjp = [stride, pad](Refs<T> in, const Tensor<T>&, const Tensor<T>& gout,
                           std::span<const bool> need) {
    const Tensor<T>& x = in[0].get();
    const Tensor<T>& wt = in[1].get();
    const Tensor<T>& b = in[2].get();
    const ConvGeometry g = conv_geometry(x, wt, b, stride, pad);
    const std::size_t q = g.c * g.kh * g.kw;
    const std::size_t npix = g.oh * g.ow;
    const T* pg = gout.data().data();
    Cots<T> out(3);
    if (need[0]) {
      // gcols = gout[npix, o] * w[o, q], then scatter back (col2im).
      Tensor<T> gx(x.shape());
      std::vector<T> gcol(q);
      const T* pw = wt.data().data();
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const std::size_t p = oy * g.ow + ox;
          std::fill(gcol.begin(), gcol.end(), T(0));
          for (std::size_t o = 0; o < g.o; ++o) {
            const T go = pg[p * g.o + o];
            if (go == T(0)) continue;
            const T* krow = pw + o * q;
            for (std::size_t j = 0; j < q; ++j) gcol[j] += go * krow[j];
          }
          for (std::size_t c = 0; c < g.c; ++c)
            for (std::size_t dy = 0; dy < g.kh; ++dy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + dy) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t dx = 0; dx < g.kw; ++dx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + dx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                gx(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c) +=
                    gcol[(c * g.kh + dy) * g.kw + dx];
              }
            }
        }
      out[0] = std::move(gx);
    }
    if (need[1]) {
      const std::vector<T> cols = im2col(x, g, stride, pad);
      Tensor<T> gw(wt.shape());
      T* pgw = gw.data().data();
      for (std::size_t p = 0; p < npix; ++p) {
        const T* row = cols.data() + p * q;
        for (std::size_t o = 0; o < g.o; ++o) {
          const T go = pg[p * g.o + o];
          T* grow = pgw + o * q;
          for (std::size_t j = 0; j < q; ++j) grow[j] += go * row[j];
        }
      }
      out[1] = std::move(gw);
    }
    if (need[2]) {
      Tensor<T> gb(b.shape());
      for (std::size_t p = 0; p < npix; ++p)
        for (std::size_t o = 0; o < g.o; ++o) gb[o] += pg[p * g.o + o];
      out[2] = std::move(gb);
    }
    return out;
  };
  return make<T>("conv2d", 3, forward, vjp);
}

template <std::floating_point T>
OpPtr<T> maxpool(std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ShapeError("maxpool: kernel and stride must be positive");
  // Index of the winning input element for each output element; first
  // maximum wins on ties.
  auto argmax = [kernel, stride](const Tensor<T>& x) {
    require_rank(x.shape(), 3, "maxpool");
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (h < kernel || w < kernel) throw ShapeError("maxpool: window larger than input");
    const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
    std::vector<std::size_t> idx(oh * ow * c);
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((oy * stride) * w + ox * stride) * c + ch;
          for (std::size_t dy = 0; dy < kernel; ++dy)
            for (std::size_t dx = 0; dx < kernel; ++dx) {
              const std::size_t at = ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
              if (x[at] > x[best]) best = at;
            }
          idx[(oy * ow + ox) * c + ch] = best;
        }
    return std::make_pair(Shape{oh, ow, c}, std::move(idx));
  };
  auto forward = [argmax](Refs<T> in) {
    const Tensor<T>& x = in[0].get();
    auto [shape, idx] = argmax(x);
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
    return out;
  };
  auto vjp = [argmax](Refs<T> in, const Tensor<T>&, const Tensor<T>& g, std::span<const bool>) {
    const Tensor<T>& x = in[0].get();
    auto [shape, idx] = argmax(x);
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
    return Cots<T>{std::move(gx)};
  };
  return make<T>("maxpool", 1, forward, vjp);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Graph-building wrappers

template <std::floating_point T>
static Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw Error("operation on an unbound variable");
  return *a.tape();
}

template <std::floating_point T>
static void same_tape(Var<T> a, Var<T> b) {
  if (a.tape() != b.tape()) throw Error("variables live on different tapes");
}

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  return tape_of(a).apply(ops::add<T>(), {a, b});
}
template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b);
  return tape_of(a).apply(ops::sub<T>(), {a, b});
}
template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  return tape_of(a).apply(ops::mul<T>(), {a, b});
}
template <std::floating_point T>
Var<T> scale(Var<T> a, T s) {
  return tape_of(a).apply(ops::scale<T>(s), {a});
}
template <std::floating_point T>
Var<T> add_scalar(Var<T> a, T s) {
  return tape_of(a).apply(ops::add_scalar<T>(s), {a});
}
template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  return tape_of(a).apply(ops::matmul<T>(), {a, b});
}
template <std::floating_point T>
Var<T> add_rows(Var<T> m, Var<T> b) {
  same_tape(m, b);
  return tape_of(m).apply(ops::add_rows<T>(), {m, b});
}
template <std::floating_point T>
Var<T> tanh(Var<T> a) {
  return tape_of(a).apply(ops::tanh<T>(), {a});
}
template <std::floating_point T>
Var<T> sigmoid(Var<T> a) {
  return tape_of(a).apply(ops::sigmoid<T>(), {a});
}
template <std::floating_point T>
Var<T> relu(Var<T> a) {
  return tape_of(a).apply(ops::relu<T>(), {a});
}
template <std::floating_point T>
Var<T> sum(Var<T> a) {
  return tape_of(a).apply(ops::sum<T>(), {a});
}
template <std::floating_point T>
Var<T> squared_norm(Var<T> a) {
  return tape_of(a).apply(ops::squared_norm<T>(), {a});
}
template <std::floating_point T>
Var<T> row_squared_norms(Var<T> m) {
  return tape_of(m).apply(ops::row_squared_norms<T>(), {m});
}
template <std::floating_point T>
Var<T> reshape(Var<T> a, Shape shape) {
  return tape_of(a).apply(ops::reshape<T>(std::move(shape)), {a});
}
template <std::floating_point T>
Var<T> stack(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("stack: nothing to stack");
  for (const Var<T>& p : parts) same_tape(parts[0], p);
  return tape_of(parts[0]).apply(ops::stack<T>(parts.size()), parts);
}
template <std::floating_point T>
Var<T> scan_slice(Var<T> grids, ScanAxis axis, std::size_t index) {
  return tape_of(grids).apply(ops::scan_slice<T>(axis, index), {grids});
}
template <std::floating_point T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  same_tape(x, w);
  same_tape(x, b);
  return tape_of(x).apply(ops::conv2d<T>(stride, pad), {x, w, b});
}
template <std::floating_point T>
Var<T> maxpool(Var<T> x, std::size_t kernel, std::size_t stride) {
  return tape_of(x).apply(ops::maxpool<T>(kernel, stride), {x});
}

std::span<const std::string_view> registered_op_names() {
  static constexpr std::array<std::string_view, 18> names = {
      "add",    "sub",          "mul",          "scale",   "add_scalar",
      "matmul", "add_rows",     "tanh",         "sigmoid", "relu",
      "sum",    "squared_norm", "row_squared_norms", "reshape", "stack",
      "scan_slice", "conv2d",   "maxpool"};
  return names;
}

#define NATSCAN_INSTANTIATE(T)                                                        \
  template class Tape<T>;                                                             \
  template Tensor<T> evaluate(const DifferentiableOp<T>&, const std::vector<Tensor<T>>&); \
  template std::vector<Tensor<T>> pullback(const DifferentiableOp<T>&,                \
                                           const std::vector<Tensor<T>>&, const Tensor<T>&); \
  template Var<T> add(Var<T>, Var<T>);                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                \
  template Var<T> scale(Var<T>, T);                                                   \
  template Var<T> add_scalar(Var<T>, T);                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                             \
  template Var<T> add_rows(Var<T>, Var<T>);                                           \
  template Var<T> tanh(Var<T>);                                                       \
  template Var<T> sigmoid(Var<T>);                                                    \
  template Var<T> relu(Var<T>);                                                       \
  template Var<T> sum(Var<T>);                                                        \
  template Var<T> squared_norm(Var<T>);                                               \
  template Var<T> row_squared_norms(Var<T>);                                          \
  template Var<T> reshape(Var<T>, Shape);                                             \
  template Var<T> stack(std::span<const Var<T>>);                                     \
  template Var<T> scan_slice(Var<T>, ScanAxis, std::size_t);                          \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);           \
  template Var<T> maxpool(Var<T>, std::size_t, std::size_t);                          \
  template const OpPtr<T>& ops::add<T>();                                             \
  template const OpPtr<T>& ops::sub<T>();                                             \
  template const OpPtr<T>& ops::mul<T>();                                             \
  template OpPtr<T> ops::scale<T>(T);                                                 \
  template OpPtr<T> ops::add_scalar<T>(T);                                            \
  template const OpPtr<T>& ops::matmul<T>();                                          \
  template const OpPtr<T>& ops::add_rows<T>();                                        \
  template const OpPtr<T>& ops::tanh<T>();                                            \
  template const OpPtr<T>& ops::sigmoid<T>();                                         \
  template const OpPtr<T>& ops::relu<T>();                                            \
  template const OpPtr<T>& ops::sum<T>();                                             \
  template const OpPtr<T>& ops::squared_norm<T>();                                    \
  template const OpPtr<T>& ops::row_squared_norms<T>();                               \
  template OpPtr<T> ops::reshape<T>(Shape);                                           \
  template OpPtr<T> ops::stack<T>(std::size_t);                                       \
  template OpPtr<T> ops::scan_slice<T>(ScanAxis, std::size_t);                        \
  template OpPtr<T> ops::conv2d<T>(std::size_t, std::size_t);                         \
  template OpPtr<T> ops::maxpool<T>(std::size_t, std::size_t);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::ad
