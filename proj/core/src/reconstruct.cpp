#include "natscan/reconstruct.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "natscan/error.hpp"
#include "natscan/log.hpp"
#include "natscan/rng.hpp"

namespace natscan::recon {

RgbStats fit_rgb_stats(std::span<const Tensor<double>> images) {
  if (images.empty()) throw DataError("fit_rgb_stats: empty corpus");
  std::array<double, 3> mean{}, m2{};
  double count = 0;
  for (const Tensor<double>& img : images) {
    if (img.rank() != 3 || img.dim(2) != 3) {
      throw ShapeError("fit_rgb_stats: expected H x W x 3, got " + shape_string(img.shape()));
    }
    const auto px = img.data();
    for (std::size_t i = 0; i < px.size(); i += 3) {
      count += 1;
      for (std::size_t c = 0; c < 3; ++c) {
        const double delta = px[i + c] - mean[c];
        mean[c] += delta / count;
        m2[c] += delta * (px[i + c] - mean[c]);
      }
    }
  }
  RgbStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = mean[c];
    const double sd = std::sqrt(m2[c] / count);
    if (sd < kRgbStdFloor) {
      log::warn("RGB channel " + std::to_string(c) + " has (near) zero variance; std floored to 1e-6");
      s.stddev[c] = kRgbStdFloor;
    } else {
      s.stddev[c] = sd;
    }
  }
  return s;
}

void ReconstructionConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("lr must be a finite value > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  if (iters < 1) throw UsageError("iters must be at least 1");
  if (!(lambda_r >= 0.0)) throw UsageError("lambda_r must be >= 0");
  for (double sd : rgb.stddev) {
    if (!(sd > 0.0)) throw UsageError("RGB std must be positive");
  }
}

nlohmann::json ReconstructionConfig::to_json() const {
  return {
      {"lambda_r", lambda_r},
      {"lambdas", lambdas},
      {"lr", lr},
      {"momentum", momentum},
      {"iters", iters},
      {"init", init == InitKind::kGaussian ? "gaussian" : "from_image"},
      {"rgb_mean", rgb.mean},
      {"rgb_std", rgb.stddev},
      {"seed", seed},
  };
}

void ReconstructionConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("reconstruction config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lambda_r") lambda_r = value.get<double>();
      else if (key == "lambdas") lambdas = value.get<std::map<std::string, double>>();
      else if (key == "lr") lr = value.get<double>();
      else if (key == "momentum") momentum = value.get<double>();
      else if (key == "iters") iters = value.get<std::size_t>();
      else if (key == "init") {
        const auto s = value.get<std::string>();
        if (s == "gaussian") init = InitKind::kGaussian;
        else if (s == "from_image") init = InitKind::kFromImage;
        else throw UsageError("init must be \"gaussian\" or \"from_image\"");
      } else if (key == "rgb_mean") rgb.mean = value.get<std::array<double, 3>>();
      else if (key == "rgb_std") rgb.stddev = value.get<std::array<double, 3>>();
      else if (key == "seed") seed = value.get<std::uint64_t>();
      else throw UsageError("unknown reconstruction config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("reconstruction config: ") + e.what());
  }
}

template <std::floating_point T>
Problem<T> make_problem(const cnn::CnnModel<T>& cnn, std::map<std::string, Tensor<T>> target,
                        std::span<const vlm::VlmLayerModel<T>> models,
                        const ReconstructionConfig& cfg) {
  const auto shapes = cnn::tap_shapes(cnn.spec);
  Problem<T> p;
  p.cnn = &cnn;
  if (target.empty()) throw UsageError("reconstruction needs at least one target feature");
  for (const auto& [name, t] : target) {
    auto it = shapes.find(name);
    if (it == shapes.end()) throw UsageError("target layer '" + name + "' is not a CNN tap");
    if (t.shape() != it->second) {
      throw ShapeError("target for '" + name + "' has shape " + shape_string(t.shape()) +
                       ", the CNN produces " + shape_string(it->second));
    }
  }
  p.target = std::move(target);

  std::vector<std::string> names;
  for (const auto& m : models) names.push_back(m.layer_name);
  const auto defaults = vlm::default_layer_weights(names);
  std::set<std::string> seen;
  for (const auto& m : models) {
    auto it = shapes.find(m.layer_name);
    if (it == shapes.end()) {
      throw UsageError("VLM layer '" + m.layer_name + "' is not a CNN tap");
    }
    if (it->second.size() != 3 || it->second[2] != m.feature_dim()) {
      throw ShapeError("VLM model for '" + m.layer_name + "' expects depth " +
                       std::to_string(m.feature_dim()) + ", the tap is " +
                       shape_string(it->second));
    }
    if (!seen.insert(m.layer_name).second) {
      throw UsageError("two VLM models given for layer '" + m.layer_name + "'");
    }
    auto w = cfg.lambdas.find(m.layer_name);
    p.lambdas[m.layer_name] = static_cast<T>(w != cfg.lambdas.end() ? w->second
                                                                   : defaults.at(m.layer_name));
    p.models.push_back(&m);
  }
  p.lambda_r = static_cast<T>(cfg.lambda_r);
  return p;
}

template <std::floating_point T>
ObjectiveValue<T> objective(const Problem<T>& p, const Tensor<T>& image, bool want_gradient) {
  ad::Tape<T> tape;
  ad::Var<T> x = want_gradient ? tape.variable(image) : tape.constant(image);
  auto taps = cnn::forward(tape, *p.cnn, x);

  ad::Var<T> feature = tape.constant(Tensor<T>::scalar(T(0)));
  bool have_feature = false;
  for (const auto& [name, t] : p.target) {
    ad::Var<T> term = ad::squared_norm(ad::sub(taps.at(name), tape.constant(t)));
    feature = have_feature ? ad::add(feature, term) : term;
    have_feature = true;
  }

  ad::Var<T> total = feature;
  ad::Var<T> reg;
  const bool use_reg = p.lambda_r != T(0) && !p.models.empty();
  if (use_reg) {
    bool have_reg = false;
    for (const vlm::VlmLayerModel<T>* m : p.models) {
      ad::Var<T> grid = prep::apply(m->preprocess, taps.at(m->layer_name));
      const Shape& gs = grid.shape();
      ad::Var<T> g4 = ad::reshape(grid, Shape{1, gs[0], gs[1], gs[2]});
      std::array<vlm::StackVars<T>, 4> stacks;
      for (std::size_t d = 0; d < 4; ++d) stacks[d] = vlm::bind(tape, m->predictors[d], false);
      ad::Var<T> maps = vlm::unnaturalness_maps(tape, stacks, g4, p.variant);
      const T w = p.lambdas.at(m->layer_name) / static_cast<T>((gs[0] - 1) * (gs[1] - 1));
      ad::Var<T> term = ad::scale(ad::sum(maps), w);
      reg = have_reg ? ad::add(reg, term) : term;
      have_reg = true;
    }
    reg = ad::scale(reg, p.lambda_r);
    total = ad::add(feature, reg);
  }

  ObjectiveValue<T> out;
  out.value = total.value()[0];
  out.feature_term = feature.value()[0];
  out.regularizer_term = use_reg ? reg.value()[0] : T(0);
  if (want_gradient) {
    tape.backward(total);
    out.gradient = tape.grad(x);
  }
  return out;
}

template <std::floating_point T>
Tensor<T> initial_image(const Problem<T>& p, const ReconstructionConfig& cfg,
                        const std::optional<Tensor<T>>& init_image) {
  const auto& spec = p.cnn->spec;
  const Shape shape{spec.input_h, spec.input_w, spec.input_channels};
  if (cfg.init == InitKind::kFromImage) {
    if (!init_image) throw UsageError("init=from_image needs an initial image");
    if (init_image->shape() != shape) {
      throw ShapeError("initial image is " + shape_string(init_image->shape()) +
                       ", the CNN expects " + shape_string(shape));
    }
    return *init_image;
  }
  if (spec.input_channels != 3) throw UsageError("Gaussian init needs a 3-channel input");
  Rng rng = make_rng(cfg.seed, "reconstruct.init");
  Tensor<T> x(shape);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto px = x.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::size_t c = i % 3;
    px[i] = static_cast<T>(cfg.rgb.mean[c] + cfg.rgb.stddev[c] * unit(rng));
  }
  return x;
}

template <std::floating_point T>
ReconstructionResult<T> reconstruct(const Problem<T>& p, const ReconstructionConfig& cfg,
                                    const Tensor<T>& init, const ReconProgress& progress) {
  cfg.validate();
  Tensor<T> x = init;
  Tensor<T> v(x.shape());
  const T lr = static_cast<T>(cfg.lr);
  const T m = static_cast<T>(cfg.momentum);

  ReconstructionResult<T> r;
  r.history.reserve(cfg.iters + 1);
  for (std::size_t it = 0; it <= cfg.iters; ++it) {
    const bool last = it == cfg.iters;
    ObjectiveValue<T> f = objective(p, x, !last);
    const double value = static_cast<double>(f.value);
    if (!std::isfinite(value) || value > kDivergenceLimit) {
      throw DivergenceError("reconstruction diverged at iteration " + std::to_string(it) +
                                " (objective " + std::to_string(value) + ")",
                            it);
    }
    HistoryEntry e{it, value, static_cast<double>(f.feature_term),
                   static_cast<double>(f.regularizer_term)};
    r.history.push_back(e);
    if (progress) progress(e);
    if (it == 0 || value < r.best_objective) {
      r.best_objective = value;
      r.best_iter = it;
      r.image = x;
    }
    if (last) break;
    auto vd = v.data();
    auto xd = x.data();
    auto gd = f.gradient.data();
    for (std::size_t i = 0; i < vd.size(); ++i) {
      vd[i] = m * vd[i] - lr * gd[i];
      xd[i] += vd[i];
    }
  }
  return r;
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryEntry> history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iter,objective,feature_term,regularizer_term\n";
  char buf[128];
  for (const HistoryEntry& e : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.iter, e.objective, e.feature_term,
                  e.regularizer_term);
    out << buf;
  }
}

#define NATSCAN_INSTANTIATE(T)                                                                   \
  template Problem<T> make_problem(const cnn::CnnModel<T>&, std::map<std::string, Tensor<T>>,    \
                                   std::span<const vlm::VlmLayerModel<T>>,                       \
                                   const ReconstructionConfig&);                                 \
  template ObjectiveValue<T> objective(const Problem<T>&, const Tensor<T>&, bool);               \
  template Tensor<T> initial_image(const Problem<T>&, const ReconstructionConfig&,               \
                                   const std::optional<Tensor<T>>&);                             \
  template ReconstructionResult<T> reconstruct(const Problem<T>&, const ReconstructionConfig&,   \
                                               const Tensor<T>&, const ReconProgress&);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::recon
