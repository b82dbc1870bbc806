#include "natscan/vlm.hpp"

#include <cmath>

namespace natscan::vlm {

template <std::floating_point T>
VlmLayerModel<T> make_model(std::string layer_name, prep::PreprocessParams<T> preprocess,
                            std::uint64_t seed) {
  prep::validate(preprocess);
  VlmLayerModel<T> m;
  m.layer_name = std::move(layer_name);
  m.preprocess = std::move(preprocess);
  const std::size_t k = m.preprocess.output_dim();
  for (std::size_t d = 0; d < 4; ++d) {
    Rng rng = make_rng(seed, std::string("vlm.init.") + kDirectionNames[d]);
    m.predictors[d] = random_stack<T>(k, rng);
  }
  m.metadata["seed"] = seed;
  return m;
}

template <std::floating_point T>
void validate(const VlmLayerModel<T>& m) {
  prep::validate(m.preprocess);
  for (std::size_t d = 0; d < 4; ++d) {
    validate(m.predictors[d]);
    if (m.predictors[d].input_dim() != m.input_dim()) {
      throw ShapeError(std::string("predictor '") + kDirectionNames[d] + "' expects width " +
                       std::to_string(m.predictors[d].input_dim()) + ", preprocessing yields " +
                       std::to_string(m.input_dim()));
    }
  }
}

template <std::floating_point T>
io::Container to_container(const VlmLayerModel<T>& m) {
  validate(m);
  io::Container c{std::string(io::kVlmMagic)};
  c.meta() = m.metadata;
  c.meta()["layer"] = m.layer_name;
  c.meta()["D"] = m.feature_dim();
  c.meta()["K"] = m.input_dim();
  c.meta()["whiten"] = m.preprocess.whiten;
  c.put("pre.mean", m.preprocess.mean);
  c.put("pre.std", m.preprocess.stddev);
  c.put("pre.proj", m.preprocess.projection);
  c.put("pre.eigval", m.preprocess.eigenvalues);
  for (std::size_t d = 0; d < 4; ++d) {
    for_each_tensor(m.predictors[d], [&](const std::string& name, const Tensor<T>& t) {
      c.put(std::string(kDirectionNames[d]) + "." + name, t);
    });
  }
  return c;
}

template <std::floating_point T>
VlmLayerModel<T> from_container(const io::Container& c) {
  VlmLayerModel<T> m;
  try {
    m.metadata = c.meta();
    m.layer_name = c.meta().at("layer").get<std::string>();
    m.preprocess.whiten = c.meta().value("whiten", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("VLM model metadata: ") + e.what());
  }
  m.metadata.erase("layer");
  m.metadata.erase("D");
  m.metadata.erase("K");
  m.metadata.erase("whiten");
  m.preprocess.mean = c.get<T>("pre.mean");
  m.preprocess.stddev = c.get<T>("pre.std");
  m.preprocess.projection = c.get<T>("pre.proj");
  m.preprocess.eigenvalues = c.get<T>("pre.eigval");
  const std::size_t k = m.preprocess.projection.rank() == 2 ? m.preprocess.projection.dim(1) : 0;
  for (std::size_t d = 0; d < 4; ++d) {
    m.predictors[d] = zero_stack<T>(k == 0 ? 1 : k);
    for_each_tensor(m.predictors[d], [&](const std::string& name, Tensor<T>& t) {
      t = c.get<T>(std::string(kDirectionNames[d]) + "." + name);
    });
  }
  validate(m);
  return m;
}

template <std::floating_point T>
void save_model(const std::filesystem::path& path, const VlmLayerModel<T>& m) {
  io::write_container(path, to_container(m));
}

template <std::floating_point T>
VlmLayerModel<T> load_model(const std::filesystem::path& path) {
  return from_container<T>(io::read_container(path, io::kVlmMagic));
}

template <std::floating_point T>
T sequence_nll(const Tensor<T>& s, const Tensor<T>& mu) {
  if (s.rank() != 2 || mu.rank() != 2 || mu.dim(1) != s.dim(1) || mu.dim(0) + 1 != s.dim(0)) {
    throw ShapeError("sequence_nll: need s [T, D] and mu [T-1, D], got " +
                     shape_string(s.shape()) + " and " + shape_string(mu.shape()));
  }
  const std::size_t len = s.dim(0), d = s.dim(1);
  const T inv_len = T(1) / static_cast<T>(len);
  T total = 0;
  for (std::size_t t = 2; t <= len; ++t) {
    T r = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const T e = s(t - 1, k) - mu(t - 2, k);
      r += e * e;
    }
    total += static_cast<T>(t) * inv_len * r;
  }
  return total * inv_len;
}

template <std::floating_point T>
ad::Var<T> directional_residuals(ad::Tape<T>& tape, const StackVars<T>& stack, ad::Var<T> grids,
                                 Direction dir) {
  const Shape& gs = grids.shape();
  if (gs.size() != 4) throw ShapeError("directional_residuals: grids must be [N, H, W, K]");
  const bool horizontal = dir == Direction::kRight || dir == Direction::kLeft;
  const bool reversed = dir == Direction::kLeft || dir == Direction::kUp;
  const std::size_t len = horizontal ? gs[2] : gs[1];
  if (len < 2) throw ShapeError("directional_residuals: scan length must be at least 2");
  const ad::ScanAxis axis = horizontal ? ad::ScanAxis::kHorizontal : ad::ScanAxis::kVertical;

  std::vector<ad::Var<T>> steps;
  steps.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    steps.push_back(ad::scan_slice(grids, axis, reversed ? len - 1 - t : t));
  }
  const auto preds =
      predict_batch(tape, stack, std::span<const ad::Var<T>>(steps.data(), len - 1));
  std::vector<ad::Var<T>> residuals;
  residuals.reserve(len - 1);
  for (std::size_t t = 1; t < len; ++t) {
    residuals.push_back(ad::row_squared_norms(ad::sub(steps[t], preds[t - 1])));
  }
  return ad::stack(std::span<const ad::Var<T>>(residuals));
}

namespace {

// Table row and weight for each term of the map at 0-based cell (y0, x0).
struct Term {
  std::size_t row;
  double weight;
};

struct MapLayout {
  std::size_t n, h, w;
  MapVariant variant;

  Term right(std::size_t x0) const { return {x0, double(x0 + 2) / double(w)}; }
  Term left(std::size_t x0) const {
    const double num = variant == MapVariant::kPrinted ? double(w - x0) : double(w - x0 - 1);
    return {w - 2 - x0, num / double(w)};
  }
  Term down(std::size_t y0) const { return {y0, double(y0 + 2) / double(h)}; }
  Term up(std::size_t y0) const {
    const double num = variant == MapVariant::kPrinted ? double(h - y0) : double(h - y0 - 1);
    return {h - 2 - y0, num / double(h)};
  }
};

}  // namespace

template <std::floating_point T>
ad::OpPtr<T> combine_op(std::size_t n, std::size_t h, std::size_t w, MapVariant variant) {
  if (h < 2 || w < 2) throw ShapeError("unnaturalness map needs H >= 2 and W >= 2");
  const MapLayout lay{n, h, w, variant};
  auto check = [lay](ad::TensorRefs<T> in) {
    const Shape hs{lay.w - 1, lay.n * lay.h};
    const Shape vs{lay.h - 1, lay.n * lay.w};
    require_same_shape(in[0].get().shape(), hs, "combine right");
    require_same_shape(in[1].get().shape(), hs, "combine left");
    require_same_shape(in[2].get().shape(), vs, "combine down");
    require_same_shape(in[3].get().shape(), vs, "combine up");
  };
  auto op = std::make_shared<ad::DifferentiableOp<T>>();
  op->name = "unnaturalness_combine";
  op->arity = 4;
  op->forward = [lay, check](ad::TensorRefs<T> in) {
    check(in);
    const Tensor<T>& rr = in[0].get();
    const Tensor<T>& rl = in[1].get();
    const Tensor<T>& rd = in[2].get();
    const Tensor<T>& ru = in[3].get();
    Tensor<T> out(Shape{lay.n, lay.h - 1, lay.w - 1});
    for (std::size_t b = 0; b < lay.n; ++b)
      for (std::size_t y0 = 0; y0 + 1 < lay.h; ++y0)
        for (std::size_t x0 = 0; x0 + 1 < lay.w; ++x0) {
          const std::size_t row_line = b * lay.h + y0;
          const std::size_t col_line = b * lay.w + x0;
          const Term tr = lay.right(x0), tl = lay.left(x0), td = lay.down(y0), tu = lay.up(y0);
          out(b, y0, x0) = T(tr.weight) * rr(tr.row, row_line) + T(tl.weight) * rl(tl.row, row_line) +
                           T(td.weight) * rd(td.row, col_line) + T(tu.weight) * ru(tu.row, col_line);
        }
    return out;
  };
  op->vjp = [lay](ad::TensorRefs<T> in, const Tensor<T>&, const Tensor<T>& g,
                  std::span<const bool>) {
    std::vector<Tensor<T>> cots;
    for (std::size_t i = 0; i < 4; ++i) cots.emplace_back(in[i].get().shape());
    for (std::size_t b = 0; b < lay.n; ++b)
      for (std::size_t y0 = 0; y0 + 1 < lay.h; ++y0)
        for (std::size_t x0 = 0; x0 + 1 < lay.w; ++x0) {
          const T gv = g(b, y0, x0);
          const std::size_t row_line = b * lay.h + y0;
          const std::size_t col_line = b * lay.w + x0;
          const Term tr = lay.right(x0), tl = lay.left(x0), td = lay.down(y0), tu = lay.up(y0);
          cots[0](tr.row, row_line) += T(tr.weight) * gv;
          cots[1](tl.row, row_line) += T(tl.weight) * gv;
          cots[2](td.row, col_line) += T(td.weight) * gv;
          cots[3](tu.row, col_line) += T(tu.weight) * gv;
        }
    return cots;
  };
  return op;
}

template <std::floating_point T>
ad::Var<T> unnaturalness_maps(ad::Tape<T>& tape, const std::array<StackVars<T>, 4>& stacks,
                              ad::Var<T> grids, MapVariant variant) {
  const Shape& gs = grids.shape();
  if (gs.size() != 4) throw ShapeError("unnaturalness_maps: grids must be [N, H, W, K]");
  if (gs[1] < 2 || gs[2] < 2) {
    throw ShapeError("unnaturalness map needs H >= 2 and W >= 2, grid is " + shape_string(gs));
  }
  std::array<ad::Var<T>, 4> tables;
  for (std::size_t d = 0; d < 4; ++d) {
    tables[d] = directional_residuals(tape, stacks[d], grids, static_cast<Direction>(d));
  }
  return tape.apply(combine_op<T>(gs[0], gs[1], gs[2], variant),
                    {tables[0], tables[1], tables[2], tables[3]});
}

template <std::floating_point T>
Tensor<T> unnaturalness_map(const VlmLayerModel<T>& model, const Tensor<T>& grid,
                            bool already_preprocessed, MapVariant variant) {
  if (grid.rank() != 3) throw ShapeError("unnaturalness_map: grid must be H x W x D");
  if (grid.dim(0) < 2 || grid.dim(1) < 2) {
    throw ShapeError("unnaturalness_map: grid " + shape_string(grid.shape()) +
                     " is too small; need H >= 2 and W >= 2");
  }
  Tensor<T> pre = already_preprocessed ? grid : prep::apply(model.preprocess, grid);
  if (pre.dim(2) != model.input_dim()) {
    throw ShapeError("unnaturalness_map: grid depth " + std::to_string(pre.dim(2)) +
                     " does not match model width " + std::to_string(model.input_dim()));
  }
  const std::size_t h = pre.dim(0), w = pre.dim(1), k = pre.dim(2);
  ad::Tape<T> tape;
  std::array<StackVars<T>, 4> stacks;
  for (std::size_t d = 0; d < 4; ++d) stacks[d] = bind(tape, model.predictors[d], false);
  ad::Var<T> g = tape.constant(std::move(pre).reshaped({1, h, w, k}));
  return unnaturalness_maps(tape, stacks, g, variant).value().reshaped({h - 1, w - 1});
}

template <std::floating_point T>
T layer_unnaturalness(const Tensor<T>& map) {
  if (map.empty()) throw ShapeError("layer_unnaturalness: empty map");
  return sum(map) / static_cast<T>(map.size());
}

template <std::floating_point T>
T image_unnaturalness(const std::map<std::string, T>& per_layer,
                      const std::map<std::string, T>& lambdas) {
  T total = 0;
  for (const auto& [layer, u] : per_layer) {
    auto it = lambdas.find(layer);
    if (it == lambdas.end()) throw UsageError("no weight given for layer '" + layer + "'");
    total += it->second * u;
  }
  return total;
}

std::map<std::string, double> default_layer_weights(std::span<const std::string> layers) {
  std::map<std::string, double> out;
  double decade = 1.0;
  for (const std::string& l : layers) {
    out[l] = 1.0 / decade;
    decade *= 10.0;
  }
  return out;
}

#define NATSCAN_INSTANTIATE(T)                                                                  \
  template VlmLayerModel<T> make_model(std::string, prep::PreprocessParams<T>, std::uint64_t);  \
  template void validate(const VlmLayerModel<T>&);                                              \
  template io::Container to_container(const VlmLayerModel<T>&);                                 \
  template VlmLayerModel<T> from_container<T>(const io::Container&);                            \
  template void save_model(const std::filesystem::path&, const VlmLayerModel<T>&);              \
  template VlmLayerModel<T> load_model<T>(const std::filesystem::path&);                        \
  template T sequence_nll(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> unnaturalness_map(const VlmLayerModel<T>&, const Tensor<T>&, bool,         \
                                       MapVariant);                                             \
  template T layer_unnaturalness(const Tensor<T>&);                                             \
  template T image_unnaturalness(const std::map<std::string, T>&,                               \
                                 const std::map<std::string, T>&);                              \
  template ad::Var<T> directional_residuals(ad::Tape<T>&, const StackVars<T>&, ad::Var<T>,      \
                                            Direction);                                         \
  template ad::OpPtr<T> combine_op<T>(std::size_t, std::size_t, std::size_t, MapVariant);       \
  template ad::Var<T> unnaturalness_maps(ad::Tape<T>&, const std::array<StackVars<T>, 4>&,      \
                                         ad::Var<T>, MapVariant);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::vlm
