#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "natscan/lstm.hpp"
#include "natscan/tensor.hpp"
#include "natscan/vlm.hpp"

// Momentum SGD with back-propagation through time for the four directional
// predictors of a VlmLayerModel.

namespace natscan::vlm {

enum class ClipScope {
  /// One global norm over all four stacks (joint training).
  kJoint,
  /// Each stack clipped by its own norm, as if trained separately.
  kPerDirection,
};

struct TrainConfig {
  double lr = 10.0;
  double momentum = 0.9;
  std::size_t batch = 16;
  double lr_decay_factor = 0.1;
  /// Multiply lr by lr_decay_factor every this many iterations; 0 disables.
  std::size_t lr_decay_every = 5000;
  std::size_t max_iters = 20000;
  std::uint64_t seed = 0;
  /// Global-norm gradient clipping threshold; 0 disables.
  double clip_norm = 5.0;
  ClipScope clip_scope = ClipScope::kJoint;
  MapVariant variant = MapVariant::kPrinted;

  /// Throws UsageError on out-of-range values.
  void validate() const;
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their current value; unknown keys throw UsageError.
  void merge_json(const nlohmann::json& j);
};

template <std::floating_point T>
struct BatchGradients {
  T loss = 0;
  std::array<PredictorStack<T>, 4> grads;  // indexed by Direction
};

/// Loss and exact parameter gradients for a minibatch of preprocessed grids
/// (each [H, W, K]). The loss is the mean over grids of layer_unnaturalness.
template <std::floating_point T>
BatchGradients<T> bptt_gradients(const VlmLayerModel<T>& model,
                                 std::span<const Tensor<T>* const> batch,
                                 MapVariant variant = MapVariant::kPrinted);

/// Minibatch loss alone, without building gradients.
template <std::floating_point T>
T batch_loss(const VlmLayerModel<T>& model, std::span<const Tensor<T>* const> batch,
             MapVariant variant = MapVariant::kPrinted);

template <std::floating_point T>
struct TrainResult {
  VlmLayerModel<T> model;
  /// Minibatch loss at every iteration, measured before that iteration's update.
  std::vector<T> loss_history;
};

using TrainProgress = std::function<void(std::size_t iteration, double loss, double lr)>;

/// Trains on preprocessed grids. Minibatches walk a fresh seeded permutation
/// of the corpus each epoch. Throws DataError on an empty corpus and
/// DivergenceError when the loss becomes non-finite.
template <std::floating_point T>
TrainResult<T> train(VlmLayerModel<T> model, std::span<const Tensor<T>> corpus,
                     const TrainConfig& cfg, const TrainProgress& progress = {});

/// Mean of the first `window` entries versus the last `window` entries.
std::pair<double, double> smoothed_endpoints(std::span<const double> history, std::size_t window);

}  // namespace natscan::vlm
