#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "natscan/autodiff.hpp"
#include "natscan/container.hpp"
#include "natscan/tensor.hpp"

// Feed-forward CNN used as the feature extractor. Images and feature maps use
// HWC layout; a feature grid tapped after a convolution is H x W x D.

namespace natscan::cnn {

enum class LayerKind { kConv, kRelu, kMaxPool, kLinear };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::string name;
  std::size_t out_channels = 0;  // conv and linear
  std::size_t kernel_h = 0;      // conv; maxpool uses kernel_h for its window
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static LayerSpec conv(std::string name, std::size_t out, std::size_t kh, std::size_t kw,
                        std::size_t stride = 1, std::size_t pad = 0);
  static LayerSpec relu(std::string name = {});
  static LayerSpec maxpool(std::string name, std::size_t kernel, std::size_t stride);
  static LayerSpec linear(std::string name, std::size_t out);
};

struct CnnSpec {
  std::size_t input_h = 0;
  std::size_t input_w = 0;
  std::size_t input_channels = 3;
  std::vector<LayerSpec> layers;
  /// Names of conv (or linear) layers whose outputs are exported.
  std::vector<std::string> taps;
  /// Export the activation after the ReLU that follows a tapped layer
  /// instead of the raw convolution output.
  bool post_relu_taps = false;
};

/// Throws UsageError on duplicate names, unknown or non-conv taps, or layers
/// whose output would be empty for the declared input size.
void validate(const CnnSpec& spec);

/// Output shape of every layer, in order, for the declared input size.
std::vector<Shape> layer_output_shapes(const CnnSpec& spec);
/// Shape of each tap output.
std::map<std::string, Shape> tap_shapes(const CnnSpec& spec);

nlohmann::json spec_to_json(const CnnSpec& spec);
CnnSpec spec_from_json(const nlohmann::json& j);

/// Kernels are [out, in, kh, kw] for conv layers and [in_features, out] for
/// linear layers; biases are [out].
template <std::floating_point T>
struct CnnModel {
  CnnSpec spec;
  std::map<std::string, Tensor<T>> weights;
  std::map<std::string, Tensor<T>> biases;
};

/// Seeded random model, uniform(-r, r) with r = sqrt(6 / fan_in), zero bias.
template <std::floating_point T>
CnnModel<T> make_random_model(const CnnSpec& spec, std::uint64_t seed);

/// Checks weight shapes against model.spec (ShapeError) and finiteness
/// (NumericError).
template <std::floating_point T>
void validate(const CnnModel<T>& model);

template <std::floating_point T>
io::Container to_container(const CnnModel<T>& model);
template <std::floating_point T>
CnnModel<T> from_container(const io::Container& c);

template <std::floating_point T>
void save_model(const std::filesystem::path& path, const CnnModel<T>& model);
template <std::floating_point T>
CnnModel<T> load_model(const std::filesystem::path& path);

template <std::floating_point T>
using TapOutputs = std::map<std::string, Tensor<T>>;

/// Records the network on `tape`; weights enter as constants.
template <std::floating_point T>
std::map<std::string, ad::Var<T>> forward(ad::Tape<T>& tape, const CnnModel<T>& model,
                                          ad::Var<T> image);

/// Feature grids at every tap. `image` must be input_h x input_w x channels.
template <std::floating_point T>
TapOutputs<T> forward(const CnnModel<T>& model, const Tensor<T>& image);

/// Sum over taps of the pullback of each cotangent to image space.
template <std::floating_point T>
Tensor<T> input_gradient(const CnnModel<T>& model, const Tensor<T>& image,
                         const TapOutputs<T>& tap_cotangents);

}  // namespace natscan::cnn
