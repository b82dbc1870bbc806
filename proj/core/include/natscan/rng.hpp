#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "natscan/tensor.hpp"

namespace natscan {

/// Derives an independent seed for one consumer of randomness from the
/// global seed. Streams are keyed by name, so adding a consumer never shifts
/// the numbers another consumer sees.
std::uint64_t stream_seed(std::uint64_t global_seed, std::string_view purpose);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t global_seed, std::string_view purpose) {
  return Rng(stream_seed(global_seed, purpose));
}

template <std::floating_point T>
Tensor<T> uniform_tensor(Shape shape, T lo, T hi, Rng& rng) {
  std::uniform_real_distribution<T> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = dist(rng);
  return t;
}

template <std::floating_point T>
Tensor<T> normal_tensor(Shape shape, T mean, T stddev, Rng& rng) {
  std::normal_distribution<T> dist(mean, stddev);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = dist(rng);
  return t;
}

/// 64-bit FNV-1a over raw bytes, used for names and content fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace natscan
