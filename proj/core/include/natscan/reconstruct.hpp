#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "natscan/cnn.hpp"
#include "natscan/tensor.hpp"
#include "natscan/vlm.hpp"

// Image reconstruction from CNN features by momentum gradient descent on the
// pixels, minimizing ||phi(i) - phi(x)||^2 + lambda_r * u(x) where u is the
// weighted VLM unnaturalness of x.

namespace natscan::recon {

struct RgbStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Channels with a smaller population std are floored to this (with a warning).
inline constexpr double kRgbStdFloor = 1e-6;

/// Per-channel population moments over every pixel of every H x W x 3 image.
RgbStats fit_rgb_stats(std::span<const Tensor<double>> images);

enum class InitKind { kGaussian, kFromImage };

struct ReconstructionConfig {
  double lambda_r = 10.0;
  /// Per-layer VLM weights; layers without an entry use the defaults for
  /// their position in the model list (10^-(n-1)).
  std::map<std::string, double> lambdas;
  double lr = 1.0;
  double momentum = 0.9;
  std::size_t iters = 500;
  InitKind init = InitKind::kGaussian;
  RgbStats rgb;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their value; unknown keys throw UsageError.
  void merge_json(const nlohmann::json& j);
};

template <std::floating_point T>
struct ObjectiveValue {
  T value = 0;
  T feature_term = 0;
  /// lambda_r times the weighted unnaturalness.
  T regularizer_term = 0;
  Tensor<T> gradient;
};

/// Everything the objective needs besides the image.
template <std::floating_point T>
struct Problem {
  const cnn::CnnModel<T>* cnn = nullptr;
  /// Target features per tap; usually a single entry.
  std::map<std::string, Tensor<T>> target;
  std::vector<const vlm::VlmLayerModel<T>*> models;
  /// Effective weight per model layer.
  std::map<std::string, T> lambdas;
  T lambda_r = 0;
  vlm::MapVariant variant = vlm::MapVariant::kPrinted;
};

/// Builds a Problem, resolving per-layer weights from the config and checking
/// that every target and model layer is a tap of the CNN.
template <std::floating_point T>
Problem<T> make_problem(const cnn::CnnModel<T>& cnn, std::map<std::string, Tensor<T>> target,
                        std::span<const vlm::VlmLayerModel<T>> models,
                        const ReconstructionConfig& cfg);

/// Value and pixel gradient. With want_gradient false the gradient is left empty.
/// A Problem with no target (built by hand) evaluates the prior alone.
template <std::floating_point T>
ObjectiveValue<T> objective(const Problem<T>& p, const Tensor<T>& image,
                            bool want_gradient = true);

struct HistoryEntry {
  std::size_t iter = 0;
  double objective = 0;
  double feature_term = 0;
  double regularizer_term = 0;
};

template <std::floating_point T>
struct ReconstructionResult {
  Tensor<T> image;  // best iterate
  std::size_t best_iter = 0;
  double best_objective = 0;
  /// iters + 1 entries: the objective at x_0 .. x_iters.
  std::vector<HistoryEntry> history;
};

using ReconProgress = std::function<void(const HistoryEntry&)>;

/// Initial image per cfg.init; `init_image` is required for kFromImage.
template <std::floating_point T>
Tensor<T> initial_image(const Problem<T>& p, const ReconstructionConfig& cfg,
                        const std::optional<Tensor<T>>& init_image);

/// Momentum gradient descent (v = m v - lr g; x = x + v). Throws
/// DivergenceError if the objective exceeds 1e12 or is non-finite.
template <std::floating_point T>
ReconstructionResult<T> reconstruct(const Problem<T>& p, const ReconstructionConfig& cfg,
                                    const Tensor<T>& init, const ReconProgress& progress = {});

inline constexpr double kDivergenceLimit = 1e12;

/// "iter,objective,feature_term,regularizer_term" CSV.
void write_history_csv(const std::filesystem::path& path, std::span<const HistoryEntry> history);

}  // namespace natscan::recon
