#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

#include "natscan/rng.hpp"
#include "natscan/tensor.hpp"

namespace testing {

using natscan::Shape;
using natscan::Tensor;

inline std::filesystem::path data_dir() { return NATSCAN_TEST_DATA_DIR; }

/// Fresh scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::path(NATSCAN_TEST_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Tensor<double> random(Shape shape, natscan::Rng& rng, double lo = -1.0, double hi = 1.0) {
  return natscan::uniform_tensor<double>(std::move(shape), lo, hi, rng);
}

inline std::size_t pick(natscan::Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Distance in units in the last place between two finite doubles.
inline std::uint64_t ulp_distance(double a, double b) {
  if (a == b) return 0;
  auto key = [](double v) {
    const auto bits = std::bit_cast<std::int64_t>(v);
    return bits < 0 ? std::numeric_limits<std::int64_t>::min() - bits : bits;
  };
  const std::int64_t ka = key(a), kb = key(b);
  return ka > kb ? std::uint64_t(ka) - std::uint64_t(kb) : std::uint64_t(kb) - std::uint64_t(ka);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testing
