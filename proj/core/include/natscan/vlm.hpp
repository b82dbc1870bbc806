#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "natscan/autodiff.hpp"
#include "natscan/container.hpp"
#include "natscan/lstm.hpp"
#include "natscan/preprocess.hpp"
#include "natscan/tensor.hpp"

// Directional sequence models over feature grids and the unnaturalness
// scores built from their prediction errors.
//
// For a grid f of size H x W x K (1-based y, x), four predictor stacks scan
// every row left-to-right ("right") and right-to-left ("left") and every
// column top-to-bottom ("down") and bottom-to-top ("up"). With
// R_dir(y, x) = ||f(y, x) - mu_dir(y, x)||^2, the map over
// 1 <= y <= H-1, 1 <= x <= W-1 is
//
//   u(y, x) = (x+1)/W   R_right(y, x+1) + (W-x+1)/W R_left(y, x)
//           + (y+1)/H   R_down(y+1, x)  + (H-y+1)/H R_up(y, x)
//
// Each weight equals t/T for the scan position t of the cell it reads.

namespace natscan::vlm {

enum class Direction : std::size_t { kRight = 0, kLeft = 1, kDown = 2, kUp = 3 };
inline constexpr std::array<const char*, 4> kDirectionNames = {"right", "left", "down", "up"};

enum class MapVariant {
  /// The weighting written above.
  kPrinted,
  /// Left/up weights (W-x)/W and (H-y)/H instead; for sensitivity studies.
  kSymmetric,
};

template <std::floating_point T>
struct VlmLayerModel {
  std::string layer_name;
  prep::PreprocessParams<T> preprocess;
  std::array<PredictorStack<T>, 4> predictors;  // indexed by Direction
  /// Free-form provenance: corpus id, seed, hyperparameters, iterations.
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t feature_dim() const { return preprocess.input_dim(); }
  std::size_t input_dim() const { return preprocess.output_dim(); }
  PredictorStack<T>& predictor(Direction d) { return predictors[static_cast<std::size_t>(d)]; }
  const PredictorStack<T>& predictor(Direction d) const {
    return predictors[static_cast<std::size_t>(d)];
  }
};

/// Fresh model around fitted preprocessing, predictors seeded from `seed`.
template <std::floating_point T>
VlmLayerModel<T> make_model(std::string layer_name, prep::PreprocessParams<T> preprocess,
                            std::uint64_t seed);

template <std::floating_point T>
void validate(const VlmLayerModel<T>& m);

template <std::floating_point T>
io::Container to_container(const VlmLayerModel<T>& m);
template <std::floating_point T>
VlmLayerModel<T> from_container(const io::Container& c);
template <std::floating_point T>
void save_model(const std::filesystem::path& path, const VlmLayerModel<T>& m);
template <std::floating_point T>
VlmLayerModel<T> load_model(const std::filesystem::path& path);

/// (1/T) sum_{t=2..T} (t/T) ||s_t - mu_t||^2 with s: [T, D] and mu: [T-1, D]
/// (row t-2 of mu predicts s_t).
template <std::floating_point T>
T sequence_nll(const Tensor<T>& s, const Tensor<T>& mu);

/// Map of size (H-1) x (W-1) for one grid. If `already_preprocessed` the
/// grid must have depth K, otherwise depth D and it is preprocessed first.
template <std::floating_point T>
Tensor<T> unnaturalness_map(const VlmLayerModel<T>& model, const Tensor<T>& grid,
                            bool already_preprocessed, MapVariant variant = MapVariant::kPrinted);

/// Mean of the map entries.
template <std::floating_point T>
T layer_unnaturalness(const Tensor<T>& map);

/// sum_l lambda_l u_l. Every layer in `per_layer` needs a weight.
template <std::floating_point T>
T image_unnaturalness(const std::map<std::string, T>& per_layer,
                      const std::map<std::string, T>& lambdas);

/// lambda_{conv n} = 10^-(n-1) for the given layer names in order.
std::map<std::string, double> default_layer_weights(std::span<const std::string> layers);

// Tape versions.

/// Per-step squared prediction errors for one direction over a batch of
/// preprocessed grids g[N, H, W, K]: row t-2 of the [T-1, B] result holds
/// R at scan position t (t = 2 .. T) for every scanned line b.
template <std::floating_point T>
ad::Var<T> directional_residuals(ad::Tape<T>& tape, const StackVars<T>& stack, ad::Var<T> grids,
                                 Direction dir);

/// Combines four residual tables into maps [N, H-1, W-1].
template <std::floating_point T>
ad::OpPtr<T> combine_op(std::size_t n, std::size_t h, std::size_t w, MapVariant variant);

/// Maps [N, H-1, W-1] for preprocessed grids g[N, H, W, K].
template <std::floating_point T>
ad::Var<T> unnaturalness_maps(ad::Tape<T>& tape, const std::array<StackVars<T>, 4>& stacks,
                              ad::Var<T> grids, MapVariant variant = MapVariant::kPrinted);

}  // namespace natscan::vlm
