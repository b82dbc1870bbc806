#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "natscan/autodiff.hpp"
#include "natscan/rng.hpp"
#include "natscan/tensor.hpp"

// Sequence predictor: two stacked LSTM layers followed by a linear read-out,
// fed one feature vector per step and predicting the next one.
//
// Vectors are rows: a batch of B inputs is a [B, D] matrix and a layer
// computes x W + h U + b with W: [D_in, D_h], U: [D_h, D_h], b: [D_h].

namespace natscan::vlm {

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCellGate = 3 };
inline constexpr std::array<const char*, 4> kGateNames = {"i", "f", "o", "c"};

template <std::floating_point T>
struct LstmParams {
  std::array<Tensor<T>, 4> w_x;  // [D_in, D_h] per gate
  std::array<Tensor<T>, 4> w_h;  // [D_h, D_h] per gate
  std::array<Tensor<T>, 4> b;    // [D_h] per gate

  std::size_t input_dim() const { return w_x[0].dim(0); }
  std::size_t hidden_dim() const { return w_x[0].dim(1); }
};

template <std::floating_point T>
struct PredictorStack {
  LstmParams<T> lstm1;  // D_in -> D_h
  LstmParams<T> lstm2;  // D_h -> D_h
  Tensor<T> out_w;      // [D_h, D_in]
  Tensor<T> out_b;      // [D_in]

  std::size_t input_dim() const { return out_b.size(); }
  std::size_t hidden_dim() const { return out_w.dim(0); }
};

/// Both LSTM layers are half the input width, never less than one unit.
constexpr std::size_t hidden_size(std::size_t input_dim) {
  return input_dim / 2 > 0 ? input_dim / 2 : 1;
}

template <std::floating_point T>
LstmParams<T> zero_lstm(std::size_t input_dim, std::size_t hidden_dim);

/// All weights and biases zero: the stack always predicts out_b = 0.
template <std::floating_point T>
PredictorStack<T> zero_stack(std::size_t input_dim);

/// uniform(-r, r) with r = 1/sqrt(fan_in) (fan_in = D_in + D_h for gates,
/// D_h for the read-out), forget-gate bias 1.
template <std::floating_point T>
PredictorStack<T> random_stack(std::size_t input_dim, Rng& rng);

/// Visits every parameter tensor with a stable dotted name such as
/// "lstm1.w_x.i" or "out.b".
template <std::floating_point T, typename F>
void for_each_tensor(PredictorStack<T>& s, F&& f) {
  auto visit_lstm = [&](const std::string& prefix, LstmParams<T>& p) {
    for (std::size_t g = 0; g < 4; ++g) f(prefix + ".w_x." + kGateNames[g], p.w_x[g]);
    for (std::size_t g = 0; g < 4; ++g) f(prefix + ".w_h." + kGateNames[g], p.w_h[g]);
    for (std::size_t g = 0; g < 4; ++g) f(prefix + ".b." + kGateNames[g], p.b[g]);
  };
  visit_lstm("lstm1", s.lstm1);
  visit_lstm("lstm2", s.lstm2);
  f(std::string("out.w"), s.out_w);
  f(std::string("out.b"), s.out_b);
}

template <std::floating_point T, typename F>
void for_each_tensor(const PredictorStack<T>& s, F&& f) {
  for_each_tensor(const_cast<PredictorStack<T>&>(s),
                  [&](const std::string& name, Tensor<T>& t) { f(name, std::as_const(t)); });
}

/// Throws ShapeError/NumericError if shapes disagree or values are not finite.
template <std::floating_point T>
void validate(const PredictorStack<T>& s);

// Plain-tensor evaluation. x, h, c may be vectors [D] or batches [B, D].

/// h_t = tanh(x W_x + h_{t-1} W_h + b).
template <std::floating_point T>
Tensor<T> rnn_step(const Tensor<T>& w_x, const Tensor<T>& w_h, const Tensor<T>& b,
                   const Tensor<T>& x, const Tensor<T>& h_prev);

/// One LSTM step; returns (h_t, c_t).
template <std::floating_point T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const LstmParams<T>& p, const Tensor<T>& x,
                                          const Tensor<T>& h_prev, const Tensor<T>& c_prev);

/// s: [T, D_in] with T >= 2. Returns [T-1, D_in]; row t-2 holds the
/// prediction of s_t made from s_1 .. s_{t-1}. Initial states are zero.
template <std::floating_point T>
Tensor<T> predict_sequence(const PredictorStack<T>& stack, const Tensor<T>& s);

// Tape versions.

template <std::floating_point T>
struct LstmVars {
  std::array<ad::Var<T>, 4> w_x, w_h, b;
};

template <std::floating_point T>
struct StackVars {
  LstmVars<T> lstm1, lstm2;
  ad::Var<T> out_w, out_b;
};

/// Puts the stack's tensors on the tape, as variables when `trainable`.
template <std::floating_point T>
StackVars<T> bind(ad::Tape<T>& tape, const PredictorStack<T>& s, bool trainable);

/// Gradients of every tensor bound by bind(), in PredictorStack form.
template <std::floating_point T>
PredictorStack<T> gradients(const ad::Tape<T>& tape, const StackVars<T>& v);

template <std::floating_point T>
ad::Var<T> rnn_step(ad::Var<T> w_x, ad::Var<T> w_h, ad::Var<T> b, ad::Var<T> x, ad::Var<T> h_prev);

template <std::floating_point T>
std::pair<ad::Var<T>, ad::Var<T>> lstm_step(const LstmVars<T>& p, ad::Var<T> x, ad::Var<T> h_prev,
                                            ad::Var<T> c_prev);

/// Runs the stack over a batch of sequences given step by step:
/// inputs[t] is [B, D_in] for t = 0 .. T-2 (the last element is never fed).
/// Returns T-1 predictions, predictions[t] estimating element t+1.
template <std::floating_point T>
std::vector<ad::Var<T>> predict_batch(ad::Tape<T>& tape, const StackVars<T>& stack,
                                      std::span<const ad::Var<T>> inputs);

}  // namespace natscan::vlm
