#include "natscan/lstm.hpp"

#include <cmath>

namespace natscan::vlm {

template <std::floating_point T>
LstmParams<T> zero_lstm(std::size_t input_dim, std::size_t hidden_dim) {
  LstmParams<T> p;
  for (std::size_t g = 0; g < 4; ++g) {
    p.w_x[g] = Tensor<T>::zeros({input_dim, hidden_dim});
    p.w_h[g] = Tensor<T>::zeros({hidden_dim, hidden_dim});
    p.b[g] = Tensor<T>::zeros({hidden_dim});
  }
  return p;
}

template <std::floating_point T>
PredictorStack<T> zero_stack(std::size_t input_dim) {
  if (input_dim == 0) throw UsageError("predictor input dimension must be positive");
  const std::size_t h = hidden_size(input_dim);
  PredictorStack<T> s;
  s.lstm1 = zero_lstm<T>(input_dim, h);
  s.lstm2 = zero_lstm<T>(h, h);
  s.out_w = Tensor<T>::zeros({h, input_dim});
  s.out_b = Tensor<T>::zeros({input_dim});
  return s;
}

template <std::floating_point T>
PredictorStack<T> random_stack(std::size_t input_dim, Rng& rng) {
  PredictorStack<T> s = zero_stack<T>(input_dim);
  const std::size_t h = hidden_size(input_dim);
  auto init_lstm = [&](LstmParams<T>& p, std::size_t in) {
    const T r = T(1) / std::sqrt(static_cast<T>(in + h));
    for (std::size_t g = 0; g < 4; ++g) {
      p.w_x[g] = uniform_tensor<T>({in, h}, -r, r, rng);
      p.w_h[g] = uniform_tensor<T>({h, h}, -r, r, rng);
      p.b[g] = uniform_tensor<T>({h}, -r, r, rng);
    }
    p.b[kForgetGate] = Tensor<T>::ones({h});
  };
  init_lstm(s.lstm1, input_dim);
  init_lstm(s.lstm2, h);
  const T r = T(1) / std::sqrt(static_cast<T>(h));
  s.out_w = uniform_tensor<T>({h, input_dim}, -r, r, rng);
  s.out_b = uniform_tensor<T>({input_dim}, -r, r, rng);
  return s;
}

template <std::floating_point T>
void validate(const PredictorStack<T>& s) {
  const std::size_t d = s.out_b.size();
  const std::size_t h = hidden_size(d);
  auto check = [](const LstmParams<T>& p, std::size_t in, std::size_t hid, const char* name) {
    for (std::size_t g = 0; g < 4; ++g) {
      if (p.w_x[g].shape() != Shape{in, hid} || p.w_h[g].shape() != Shape{hid, hid} ||
          p.b[g].shape() != Shape{hid}) {
        throw ShapeError(std::string(name) + " gate " + kGateNames[g] + " has inconsistent shapes");
      }
    }
  };
  if (s.out_b.rank() != 1) throw ShapeError("predictor output bias must be a vector");
  check(s.lstm1, d, h, "lstm1");
  check(s.lstm2, h, h, "lstm2");
  if (s.out_w.shape() != Shape{h, d}) throw ShapeError("predictor read-out has wrong shape");
  for_each_tensor(s, [](const std::string& name, const Tensor<T>& t) {
    if (!all_finite(t)) throw NumericError("predictor tensor " + name + " is not finite");
  });
}

// ---------------------------------------------------------------------------
// Tape versions

template <std::floating_point T>
StackVars<T> bind(ad::Tape<T>& tape, const PredictorStack<T>& s, bool trainable) {
  auto put = [&](const Tensor<T>& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  auto put_lstm = [&](const LstmParams<T>& p) {
    LstmVars<T> v;
    for (std::size_t g = 0; g < 4; ++g) {
      v.w_x[g] = put(p.w_x[g]);
      v.w_h[g] = put(p.w_h[g]);
      v.b[g] = put(p.b[g]);
    }
    return v;
  };
  StackVars<T> v;
  v.lstm1 = put_lstm(s.lstm1);
  v.lstm2 = put_lstm(s.lstm2);
  v.out_w = put(s.out_w);
  v.out_b = put(s.out_b);
  return v;
}

template <std::floating_point T>
PredictorStack<T> gradients(const ad::Tape<T>& tape, const StackVars<T>& v) {
  auto grab = [&](const LstmVars<T>& lv) {
    LstmParams<T> p;
    for (std::size_t g = 0; g < 4; ++g) {
      p.w_x[g] = tape.grad(lv.w_x[g]);
      p.w_h[g] = tape.grad(lv.w_h[g]);
      p.b[g] = tape.grad(lv.b[g]);
    }
    return p;
  };
  PredictorStack<T> s;
  s.lstm1 = grab(v.lstm1);
  s.lstm2 = grab(v.lstm2);
  s.out_w = tape.grad(v.out_w);
  s.out_b = tape.grad(v.out_b);
  return s;
}

template <std::floating_point T>
ad::Var<T> rnn_step(ad::Var<T> w_x, ad::Var<T> w_h, ad::Var<T> b, ad::Var<T> x, ad::Var<T> h_prev) {
  return ad::tanh(ad::add_rows(ad::add(ad::matmul(x, w_x), ad::matmul(h_prev, w_h)), b));
}

template <std::floating_point T>
std::pair<ad::Var<T>, ad::Var<T>> lstm_step(const LstmVars<T>& p, ad::Var<T> x, ad::Var<T> h_prev,
                                            ad::Var<T> c_prev) {
  auto pre = [&](std::size_t g) {
    return ad::add_rows(ad::add(ad::matmul(x, p.w_x[g]), ad::matmul(h_prev, p.w_h[g])), p.b[g]);
  };
  ad::Var<T> i = ad::sigmoid(pre(kInputGate));
  ad::Var<T> f = ad::sigmoid(pre(kForgetGate));
  ad::Var<T> o = ad::sigmoid(pre(kOutputGate));
  ad::Var<T> cand = ad::tanh(pre(kCellGate));
  ad::Var<T> c = ad::add(ad::mul(i, cand), ad::mul(f, c_prev));
  ad::Var<T> h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

template <std::floating_point T>
std::vector<ad::Var<T>> predict_batch(ad::Tape<T>& tape, const StackVars<T>& stack,
                                      std::span<const ad::Var<T>> inputs) {
  if (inputs.empty()) throw ShapeError("predict_batch: need at least one input step");
  const std::size_t batch = inputs[0].shape().at(0);
  const std::size_t hid = stack.out_w.shape().at(0);
  const ad::Var<T> zero = tape.constant(Tensor<T>::zeros({batch, hid}));
  ad::Var<T> h1 = zero, c1 = zero, h2 = zero, c2 = zero;
  std::vector<ad::Var<T>> out;
  out.reserve(inputs.size());
  for (const ad::Var<T>& x : inputs) {
    std::tie(h1, c1) = lstm_step(stack.lstm1, x, h1, c1);
    std::tie(h2, c2) = lstm_step(stack.lstm2, h1, h2, c2);
    out.push_back(ad::add_rows(ad::matmul(h2, stack.out_w), stack.out_b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plain-tensor versions run the same graph on a throwaway tape.

namespace {

template <std::floating_point T>
Tensor<T> as_batch(const Tensor<T>& t, std::size_t width, const char* what) {
  if (t.rank() == 1 && t.dim(0) == width) return t.reshaped({1, width});
  if (t.rank() == 2 && t.dim(1) == width) return t;
  throw ShapeError(std::string(what) + ": expected [" + std::to_string(width) + "] or [B, " +
                   std::to_string(width) + "], got " + shape_string(t.shape()));
}

template <std::floating_point T>
Tensor<T> like(const Tensor<T>& out, const Tensor<T>& reference) {
  return reference.rank() == 1 ? out.reshaped({out.dim(1)}) : out;
}

}  // namespace

template <std::floating_point T>
Tensor<T> rnn_step(const Tensor<T>& w_x, const Tensor<T>& w_h, const Tensor<T>& b,
                   const Tensor<T>& x, const Tensor<T>& h_prev) {
  if (w_x.rank() != 2 || w_h.rank() != 2) throw ShapeError("rnn_step: weights must be matrices");
  ad::Tape<T> tape;
  const Tensor<T> xb = as_batch(x, w_x.dim(0), "rnn_step input");
  const Tensor<T> hb = as_batch(h_prev, w_h.dim(0), "rnn_step state");
  if (xb.dim(0) != hb.dim(0)) throw ShapeError("rnn_step: batch sizes differ");
  ad::Var<T> h = rnn_step(tape.constant(w_x), tape.constant(w_h), tape.constant(b),
                          tape.constant(xb), tape.constant(hb));
  return like(h.value(), x);
}

template <std::floating_point T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const LstmParams<T>& p, const Tensor<T>& x,
                                          const Tensor<T>& h_prev, const Tensor<T>& c_prev) {
  ad::Tape<T> tape;
  LstmVars<T> v;
  for (std::size_t g = 0; g < 4; ++g) {
    v.w_x[g] = tape.constant(p.w_x[g]);
    v.w_h[g] = tape.constant(p.w_h[g]);
    v.b[g] = tape.constant(p.b[g]);
  }
  const Tensor<T> xb = as_batch(x, p.input_dim(), "lstm_step input");
  const Tensor<T> hb = as_batch(h_prev, p.hidden_dim(), "lstm_step hidden state");
  const Tensor<T> cb = as_batch(c_prev, p.hidden_dim(), "lstm_step cell state");
  if (xb.dim(0) != hb.dim(0) || xb.dim(0) != cb.dim(0)) {
    throw ShapeError("lstm_step: batch sizes differ");
  }
  auto [h, c] = lstm_step(v, tape.constant(xb), tape.constant(hb), tape.constant(cb));
  return {like(h.value(), x), like(c.value(), x)};
}

template <std::floating_point T>
Tensor<T> predict_sequence(const PredictorStack<T>& stack, const Tensor<T>& s) {
  if (s.rank() != 2 || s.dim(1) != stack.input_dim()) {
    throw ShapeError("predict_sequence: expected [T, " + std::to_string(stack.input_dim()) +
                     "], got " + shape_string(s.shape()));
  }
  const std::size_t len = s.dim(0), d = s.dim(1);
  if (len < 2) throw ShapeError("predict_sequence: sequence length must be at least 2");
  ad::Tape<T> tape;
  const StackVars<T> vars = bind(tape, stack, false);
  std::vector<ad::Var<T>> inputs;
  for (std::size_t t = 0; t + 1 < len; ++t) {
    std::vector<T> row(s.data().begin() + static_cast<std::ptrdiff_t>(t * d),
                       s.data().begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
    inputs.push_back(tape.constant(Tensor<T>({1, d}, std::move(row))));
  }
  const auto preds = predict_batch(tape, vars, std::span<const ad::Var<T>>(inputs));
  Tensor<T> out(Shape{len - 1, d});
  for (std::size_t t = 0; t < preds.size(); ++t)
    for (std::size_t k = 0; k < d; ++k) out(t, k) = preds[t].value()(0, k);
  return out;
}

#define NATSCAN_INSTANTIATE(T)                                                                 \
  template LstmParams<T> zero_lstm<T>(std::size_t, std::size_t);                               \
  template PredictorStack<T> zero_stack<T>(std::size_t);                                       \
  template PredictorStack<T> random_stack<T>(std::size_t, Rng&);                               \
  template void validate(const PredictorStack<T>&);                                            \
  template StackVars<T> bind(ad::Tape<T>&, const PredictorStack<T>&, bool);                    \
  template PredictorStack<T> gradients(const ad::Tape<T>&, const StackVars<T>&);               \
  template ad::Var<T> rnn_step(ad::Var<T>, ad::Var<T>, ad::Var<T>, ad::Var<T>, ad::Var<T>);    \
  template std::pair<ad::Var<T>, ad::Var<T>> lstm_step(const LstmVars<T>&, ad::Var<T>,         \
                                                       ad::Var<T>, ad::Var<T>);                \
  template std::vector<ad::Var<T>> predict_batch(ad::Tape<T>&, const StackVars<T>&,            \
                                                 std::span<const ad::Var<T>>);                 \
  template Tensor<T> rnn_step(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                              const Tensor<T>&, const Tensor<T>&);                             \
  template std::pair<Tensor<T>, Tensor<T>> lstm_step(const LstmParams<T>&, const Tensor<T>&,   \
                                                     const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> predict_sequence(const PredictorStack<T>&, const Tensor<T>&);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::vlm
