#include "natscan/cnn.hpp"

#include <cmath>
#include <set>

#include "natscan/rng.hpp"

namespace natscan::cnn {

LayerSpec LayerSpec::conv(std::string name, std::size_t out, std::size_t kh, std::size_t kw,
                          std::size_t stride, std::size_t pad) {
  return LayerSpec{LayerKind::kConv, std::move(name), out, kh, kw, stride, pad};
}

LayerSpec LayerSpec::relu(std::string name) {
  return LayerSpec{LayerKind::kRelu, std::move(name), 0, 0, 0, 1, 0};
}

LayerSpec LayerSpec::maxpool(std::string name, std::size_t kernel, std::size_t stride) {
  return LayerSpec{LayerKind::kMaxPool, std::move(name), 0, kernel, kernel, stride, 0};
}

LayerSpec LayerSpec::linear(std::string name, std::size_t out) {
  return LayerSpec{LayerKind::kLinear, std::move(name), out, 0, 0, 1, 0};
}

namespace {

bool has_weights(LayerKind k) { return k == LayerKind::kConv || k == LayerKind::kLinear; }

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kLinear: return "linear";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  if (s == "conv") return LayerKind::kConv;
  if (s == "relu") return LayerKind::kRelu;
  if (s == "maxpool") return LayerKind::kMaxPool;
  if (s == "linear") return LayerKind::kLinear;
  throw FormatError("unknown layer type '" + s + "'");
}

Shape weight_shape(const LayerSpec& l, const Shape& in) {
  if (l.kind == LayerKind::kConv) return {l.out_channels, in[2], l.kernel_h, l.kernel_w};
  return {in[0] * in[1] * in[2], l.out_channels};
}

// Index of the layer whose output is exported for a tap.
std::size_t tap_source(const CnnSpec& spec, std::size_t layer) {
  if (spec.post_relu_taps && layer + 1 < spec.layers.size() &&
      spec.layers[layer + 1].kind == LayerKind::kRelu) {
    return layer + 1;
  }
  return layer;
}

std::size_t find_layer(const CnnSpec& spec, const std::string& name) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].name == name) return i;
  throw UsageError("no layer named '" + name + "'");
}

}  // namespace

std::vector<Shape> layer_output_shapes(const CnnSpec& spec) {
  if (spec.input_h == 0 || spec.input_w == 0 || spec.input_channels == 0) {
    throw UsageError("CNN input size must be positive");
  }
  std::vector<Shape> out;
  Shape cur{spec.input_h, spec.input_w, spec.input_channels};
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::kConv: {
        if (l.out_channels == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0) {
          throw UsageError("conv layer '" + l.name + "' has a zero parameter");
        }
        if (cur[0] + 2 * l.pad < l.kernel_h || cur[1] + 2 * l.pad < l.kernel_w) {
          throw UsageError("conv layer '" + l.name + "': kernel exceeds padded input " +
                           shape_string(cur));
        }
        cur = {(cur[0] + 2 * l.pad - l.kernel_h) / l.stride + 1,
               (cur[1] + 2 * l.pad - l.kernel_w) / l.stride + 1, l.out_channels};
        break;
      }
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool: {
        if (l.kernel_h == 0 || l.stride == 0) {
          throw UsageError("maxpool layer '" + l.name + "' has a zero parameter");
        }
        if (cur[0] < l.kernel_h || cur[1] < l.kernel_h) {
          throw UsageError("maxpool layer '" + l.name + "': window exceeds input " +
                           shape_string(cur));
        }
        cur = {(cur[0] - l.kernel_h) / l.stride + 1, (cur[1] - l.kernel_h) / l.stride + 1,
               cur[2]};
        break;
      }
      case LayerKind::kLinear:
        if (l.out_channels == 0) throw UsageError("linear layer '" + l.name + "' has no outputs");
        cur = {1, 1, l.out_channels};
        break;
    }
    out.push_back(cur);
  }
  return out;
}

void validate(const CnnSpec& spec) {
  std::set<std::string> names;
  for (const LayerSpec& l : spec.layers) {
    if (l.name.empty()) {
      if (has_weights(l.kind)) throw UsageError(std::string(kind_name(l.kind)) + " layer needs a name");
      continue;
    }
    if (!names.insert(l.name).second) throw UsageError("duplicate layer name '" + l.name + "'");
  }
  layer_output_shapes(spec);
  std::set<std::string> seen;
  for (const std::string& tap : spec.taps) {
    const std::size_t i = find_layer(spec, tap);
    if (!has_weights(spec.layers[i].kind)) {
      throw UsageError("tap '" + tap + "' does not name a conv or linear layer");
    }
    if (!seen.insert(tap).second) throw UsageError("tap '" + tap + "' listed twice");
  }
}

std::map<std::string, Shape> tap_shapes(const CnnSpec& spec) {
  validate(spec);
  const auto shapes = layer_output_shapes(spec);
  std::map<std::string, Shape> out;
  for (const std::string& tap : spec.taps) {
    out[tap] = shapes[tap_source(spec, find_layer(spec, tap))];
  }
  return out;
}

nlohmann::json spec_to_json(const CnnSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : spec.layers) {
    nlohmann::json j{{"type", kind_name(l.kind)}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::kConv:
        j["out"] = l.out_channels;
        j["kernel"] = {l.kernel_h, l.kernel_w};
        j["stride"] = l.stride;
        j["pad"] = l.pad;
        break;
      case LayerKind::kMaxPool:
        j["kernel"] = l.kernel_h;
        j["stride"] = l.stride;
        break;
      case LayerKind::kLinear:
        j["out"] = l.out_channels;
        break;
      case LayerKind::kRelu:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"input", {spec.input_h, spec.input_w, spec.input_channels}},
          {"layers", std::move(layers)},
          {"taps", spec.taps},
          {"post_relu_taps", spec.post_relu_taps}};
}

CnnSpec spec_from_json(const nlohmann::json& j) {
  try {
    CnnSpec spec;
    const auto input = j.at("input").get<std::vector<std::size_t>>();
    if (input.size() != 3) throw FormatError("CNN input must be [h, w, channels]");
    spec.input_h = input[0];
    spec.input_w = input[1];
    spec.input_channels = input[2];
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_kind(lj.at("type").get<std::string>());
      l.name = lj.value("name", std::string());
      switch (l.kind) {
        case LayerKind::kConv: {
          l.out_channels = lj.at("out").get<std::size_t>();
          const auto k = lj.at("kernel").get<std::vector<std::size_t>>();
          if (k.size() != 2) throw FormatError("conv kernel must be [kh, kw]");
          l.kernel_h = k[0];
          l.kernel_w = k[1];
          l.stride = lj.value("stride", std::size_t{1});
          l.pad = lj.value("pad", std::size_t{0});
          break;
        }
        case LayerKind::kMaxPool:
          l.kernel_h = l.kernel_w = lj.at("kernel").get<std::size_t>();
          l.stride = lj.at("stride").get<std::size_t>();
          break;
        case LayerKind::kLinear:
          l.out_channels = lj.at("out").get<std::size_t>();
          break;
        case LayerKind::kRelu:
          break;
      }
      spec.layers.push_back(std::move(l));
    }
    spec.taps = j.at("taps").get<std::vector<std::string>>();
    spec.post_relu_taps = j.value("post_relu_taps", false);
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed CNN description: ") + e.what());
  }
}

template <std::floating_point T>
CnnModel<T> make_random_model(const CnnSpec& spec, std::uint64_t seed) {
  validate(spec);
  CnnModel<T> m;
  m.spec = spec;
  Rng rng = make_rng(seed, "cnn.init");
  Shape in{spec.input_h, spec.input_w, spec.input_channels};
  const auto shapes = layer_output_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (has_weights(l.kind)) {
      const Shape ws = weight_shape(l, in);
      const std::size_t fan_in = l.kind == LayerKind::kConv ? ws[1] * ws[2] * ws[3] : ws[0];
      const T r = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
      m.weights[l.name] = uniform_tensor<T>(ws, -r, r, rng);
      m.biases[l.name] = Tensor<T>::zeros({l.out_channels});
    }
    in = shapes[i];
  }
  return m;
}

template <std::floating_point T>
void validate(const CnnModel<T>& model) {
  validate(model.spec);
  Shape in{model.spec.input_h, model.spec.input_w, model.spec.input_channels};
  const auto shapes = layer_output_shapes(model.spec);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& l = model.spec.layers[i];
    if (has_weights(l.kind)) {
      auto w = model.weights.find(l.name);
      auto b = model.biases.find(l.name);
      if (w == model.weights.end() || b == model.biases.end()) {
        throw DataError("missing weights for layer '" + l.name + "'");
      }
      const Shape expected = weight_shape(l, in);
      if (w->second.shape() != expected) {
        throw ShapeError("layer '" + l.name + "' kernel has shape " +
                         shape_string(w->second.shape()) + ", header declares " +
                         shape_string(expected));
      }
      if (b->second.shape() != Shape{l.out_channels}) {
        throw ShapeError("layer '" + l.name + "' bias has shape " +
                         shape_string(b->second.shape()) + ", expected [" +
                         std::to_string(l.out_channels) + "]");
      }
      if (!all_finite(w->second) || !all_finite(b->second)) {
        throw NumericError("layer '" + l.name + "' has non-finite weights");
      }
    }
    in = shapes[i];
  }
}

template <std::floating_point T>
io::Container to_container(const CnnModel<T>& model) {
  validate(model);
  io::Container c{std::string(io::kCnnMagic)};
  c.meta() = spec_to_json(model.spec);
  for (const LayerSpec& l : model.spec.layers) {
    if (!has_weights(l.kind)) continue;
    c.put(l.name + ".weight", model.weights.at(l.name));
    c.put(l.name + ".bias", model.biases.at(l.name));
  }
  return c;
}

template <std::floating_point T>
CnnModel<T> from_container(const io::Container& c) {
  CnnModel<T> m;
  m.spec = spec_from_json(c.meta());
  for (const LayerSpec& l : m.spec.layers) {
    if (!has_weights(l.kind)) continue;
    m.weights[l.name] = c.get<T>(l.name + ".weight");
    m.biases[l.name] = c.get<T>(l.name + ".bias");
  }
  validate(m);
  return m;
}

template <std::floating_point T>
void save_model(const std::filesystem::path& path, const CnnModel<T>& model) {
  io::write_container(path, to_container(model));
}

template <std::floating_point T>
CnnModel<T> load_model(const std::filesystem::path& path) {
  return from_container<T>(io::read_container(path, io::kCnnMagic));
}

template <std::floating_point T>
std::map<std::string, ad::Var<T>> forward(ad::Tape<T>& tape, const CnnModel<T>& model,
                                          ad::Var<T> image) {
  const CnnSpec& spec = model.spec;
  const Shape expected{spec.input_h, spec.input_w, spec.input_channels};
  if (image.shape() != expected) {
    throw ShapeError("CNN input must be " + shape_string(expected) + ", got " +
                     shape_string(image.shape()));
  }
  std::set<std::size_t> tap_layers;
  for (const std::string& tap : spec.taps) tap_layers.insert(tap_source(spec, find_layer(spec, tap)));

  std::map<std::string, ad::Var<T>> taps;
  std::vector<ad::Var<T>> outputs;
  ad::Var<T> x = image;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::kConv: {
        ad::Var<T> w = tape.constant(model.weights.at(l.name));
        ad::Var<T> b = tape.constant(model.biases.at(l.name));
        x = ad::conv2d(x, w, b, l.stride, l.pad);
        break;
      }
      case LayerKind::kRelu:
        x = ad::relu(x);
        break;
      case LayerKind::kMaxPool:
        x = ad::maxpool(x, l.kernel_h, l.stride);
        break;
      case LayerKind::kLinear: {
        ad::Var<T> w = tape.constant(model.weights.at(l.name));
        ad::Var<T> b = tape.constant(model.biases.at(l.name));
        ad::Var<T> flat = ad::reshape(x, Shape{1, x.value().size()});
        x = ad::reshape(ad::add_rows(ad::matmul(flat, w), b), Shape{1, 1, l.out_channels});
        break;
      }
    }
    outputs.push_back(x);
    // Stop early once every tap is produced.
    if (!tap_layers.empty() && i >= *tap_layers.rbegin()) break;
  }
  for (const std::string& tap : spec.taps) {
    taps[tap] = outputs.at(tap_source(spec, find_layer(spec, tap)));
  }
  return taps;
}

template <std::floating_point T>
TapOutputs<T> forward(const CnnModel<T>& model, const Tensor<T>& image) {
  ad::Tape<T> tape;
  auto vars = forward(tape, model, tape.constant(image));
  TapOutputs<T> out;
  for (auto& [name, v] : vars) out[name] = v.value();
  return out;
}

template <std::floating_point T>
Tensor<T> input_gradient(const CnnModel<T>& model, const Tensor<T>& image,
                         const TapOutputs<T>& tap_cotangents) {
  ad::Tape<T> tape;
  ad::Var<T> x = tape.variable(image);
  auto vars = forward(tape, model, x);
  for (const auto& [name, cot] : tap_cotangents) {
    auto it = vars.find(name);
    if (it == vars.end()) throw UsageError("unknown tap '" + name + "'");
    if (cot.shape() != it->second.shape()) {
      throw ShapeError("cotangent for tap '" + name + "' has shape " + shape_string(cot.shape()) +
                       ", tap is " + shape_string(it->second.shape()));
    }
    tape.seed(it->second, cot);
  }
  tape.backward();
  return tape.grad(x);
}

#define NATSCAN_INSTANTIATE(T)                                                           \
  template CnnModel<T> make_random_model<T>(const CnnSpec&, std::uint64_t);              \
  template void validate(const CnnModel<T>&);                                            \
  template io::Container to_container(const CnnModel<T>&);                               \
  template CnnModel<T> from_container<T>(const io::Container&);                          \
  template void save_model(const std::filesystem::path&, const CnnModel<T>&);            \
  template CnnModel<T> load_model<T>(const std::filesystem::path&);                      \
  template std::map<std::string, ad::Var<T>> forward(ad::Tape<T>&, const CnnModel<T>&,   \
                                                     ad::Var<T>);                        \
  template TapOutputs<T> forward(const CnnModel<T>&, const Tensor<T>&);                  \
  template Tensor<T> input_gradient(const CnnModel<T>&, const Tensor<T>&, const TapOutputs<T>&);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::cnn
