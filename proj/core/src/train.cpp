#include "natscan/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "natscan/error.hpp"
#include "natscan/rng.hpp"

namespace natscan::vlm {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("lr must be a finite value >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  if (batch == 0) throw UsageError("batch must be at least 1");
  if (!(lr_decay_factor > 0.0)) throw UsageError("lr_decay_factor must be positive");
  if (max_iters == 0) throw UsageError("max_iters must be at least 1");
  if (!(clip_norm >= 0.0)) throw UsageError("clip_norm must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"lr", lr},
      {"momentum", momentum},
      {"batch", batch},
      {"lr_decay_factor", lr_decay_factor},
      {"lr_decay_every", lr_decay_every},
      {"max_iters", max_iters},
      {"seed", seed},
      {"clip_norm", clip_norm},
      {"clip_scope", clip_scope == ClipScope::kJoint ? "joint" : "per-direction"},
      {"variant", variant == MapVariant::kPrinted ? "printed" : "symmetric"},
  };
}

void TrainConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("training config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") lr = value.get<double>();
      else if (key == "momentum") momentum = value.get<double>();
      else if (key == "batch") batch = value.get<std::size_t>();
      else if (key == "lr_decay_factor") lr_decay_factor = value.get<double>();
      else if (key == "lr_decay_every") lr_decay_every = value.get<std::size_t>();
      else if (key == "max_iters") max_iters = value.get<std::size_t>();
      else if (key == "seed") seed = value.get<std::uint64_t>();
      else if (key == "clip_norm") clip_norm = value.get<double>();
      else if (key == "clip_scope") {
        const auto s = value.get<std::string>();
        if (s == "joint") clip_scope = ClipScope::kJoint;
        else if (s == "per-direction") clip_scope = ClipScope::kPerDirection;
        else throw UsageError("clip_scope must be \"joint\" or \"per-direction\"");
      } else if (key == "variant") {
        const auto s = value.get<std::string>();
        if (s == "printed") variant = MapVariant::kPrinted;
        else if (s == "symmetric") variant = MapVariant::kSymmetric;
        else throw UsageError("variant must be \"printed\" or \"symmetric\"");
      } else {
        throw UsageError("unknown training config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("training config: ") + e.what());
  }
}

namespace {

// Runs the minibatch on `tape` and returns the scalar loss node. Grids of
// equal shape are scanned together; the result is the mean of per-grid
// layer scores regardless of grouping.
template <std::floating_point T>
ad::Var<T> build_loss(ad::Tape<T>& tape, const std::array<StackVars<T>, 4>& stacks,
                      std::size_t k, std::span<const Tensor<T>* const> batch,
                      MapVariant variant) {
  if (batch.empty()) throw DataError("empty minibatch");
  std::map<Shape, std::vector<const Tensor<T>*>> groups;
  std::vector<Shape> order;
  for (const Tensor<T>* g : batch) {
    if (g->rank() != 3 || g->dim(2) != k) {
      throw ShapeError("training grid " + shape_string(g->shape()) + " does not have depth " +
                       std::to_string(k));
    }
    auto [it, inserted] = groups.try_emplace(g->shape());
    if (inserted) order.push_back(g->shape());
    it->second.push_back(g);
  }
  ad::Var<T> total;
  bool have_total = false;
  for (const Shape& s : order) {
    const auto& members = groups[s];
    const std::size_t n = members.size(), h = s[0], w = s[1];
    std::vector<T> data;
    data.reserve(n * h * w * k);
    for (const Tensor<T>* g : members) data.insert(data.end(), g->data().begin(), g->data().end());
    ad::Var<T> grids = tape.constant(Tensor<T>({n, h, w, k}, std::move(data)));
    ad::Var<T> maps = unnaturalness_maps(tape, stacks, grids, variant);
    ad::Var<T> part = ad::scale(ad::sum(maps), T(1) / static_cast<T>((h - 1) * (w - 1)));
    total = have_total ? ad::add(total, part) : part;
    have_total = true;
  }
  return ad::scale(total, T(1) / static_cast<T>(batch.size()));
}

template <std::floating_point T>
double squared_norm_of(const PredictorStack<T>& s) {
  double acc = 0;
  for_each_tensor(s, [&](const std::string&, const Tensor<T>& t) {
    acc += static_cast<double>(squared_norm(t));
  });
  return acc;
}

template <std::floating_point T>
void scale_stack(PredictorStack<T>& s, T factor) {
  for_each_tensor(s, [&](const std::string&, Tensor<T>& t) { t = scale(t, factor); });
}

}  // namespace

template <std::floating_point T>
BatchGradients<T> bptt_gradients(const VlmLayerModel<T>& model,
                                 std::span<const Tensor<T>* const> batch, MapVariant variant) {
  ad::Tape<T> tape;
  std::array<StackVars<T>, 4> stacks;
  for (std::size_t d = 0; d < 4; ++d) stacks[d] = bind(tape, model.predictors[d], true);
  ad::Var<T> loss = build_loss(tape, stacks, model.input_dim(), batch, variant);
  tape.backward(loss);
  BatchGradients<T> out;
  out.loss = loss.value()[0];
  for (std::size_t d = 0; d < 4; ++d) out.grads[d] = gradients(tape, stacks[d]);
  return out;
}

template <std::floating_point T>
T batch_loss(const VlmLayerModel<T>& model, std::span<const Tensor<T>* const> batch,
             MapVariant variant) {
  ad::Tape<T> tape;
  std::array<StackVars<T>, 4> stacks;
  for (std::size_t d = 0; d < 4; ++d) stacks[d] = bind(tape, model.predictors[d], false);
  return build_loss(tape, stacks, model.input_dim(), batch, variant).value()[0];
}

template <std::floating_point T>
TrainResult<T> train(VlmLayerModel<T> model, std::span<const Tensor<T>> corpus,
                     const TrainConfig& cfg, const TrainProgress& progress) {
  cfg.validate();
  if (corpus.empty()) throw DataError("training corpus is empty");
  validate(model);

  std::array<PredictorStack<T>, 4> velocity;
  for (std::size_t d = 0; d < 4; ++d) {
    velocity[d] = model.predictors[d];
    scale_stack(velocity[d], T(0));
  }

  Rng rng = make_rng(cfg.seed, "vlm.train.shuffle");
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = order.size();
  std::vector<const Tensor<T>*> batch(cfg.batch);

  TrainResult<T> result;
  result.loss_history.reserve(cfg.max_iters);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch[b] = &corpus[order[cursor++]];
    }
    // Corpus order makes the batch mean independent of the shuffle.
    std::sort(batch.begin(), batch.end());

    BatchGradients<T> g = bptt_gradients(model, std::span<const Tensor<T>* const>(batch),
                                         cfg.variant);
    if (!std::isfinite(static_cast<double>(g.loss))) {
      throw DivergenceError("training loss became non-finite at iteration " + std::to_string(it),
                            it);
    }
    result.loss_history.push_back(g.loss);

    if (cfg.clip_norm > 0) {
      if (cfg.clip_scope == ClipScope::kJoint) {
        double sq = 0;
        for (const auto& s : g.grads) sq += squared_norm_of(s);
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          for (auto& s : g.grads) scale_stack(s, static_cast<T>(cfg.clip_norm / norm));
        }
      } else {
        for (auto& s : g.grads) {
          const double norm = std::sqrt(squared_norm_of(s));
          if (norm > cfg.clip_norm) scale_stack(s, static_cast<T>(cfg.clip_norm / norm));
        }
      }
    }

    const double lr =
        cfg.lr_decay_every > 0
            ? cfg.lr * std::pow(cfg.lr_decay_factor,
                                static_cast<double>(it / cfg.lr_decay_every))
            : cfg.lr;
    if (progress) progress(it, static_cast<double>(g.loss), lr);

    const T m = static_cast<T>(cfg.momentum);
    const T step = static_cast<T>(lr);
    for (std::size_t d = 0; d < 4; ++d) {
      std::vector<Tensor<T>*> params, vels;
      std::vector<const Tensor<T>*> grads;
      for_each_tensor(model.predictors[d], [&](const std::string&, Tensor<T>& t) { params.push_back(&t); });
      for_each_tensor(velocity[d], [&](const std::string&, Tensor<T>& t) { vels.push_back(&t); });
      for_each_tensor(g.grads[d], [&](const std::string&, const Tensor<T>& t) { grads.push_back(&t); });
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto v = vels[i]->data();
        auto p = params[i]->data();
        auto gr = grads[i]->data();
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] = m * v[j] - step * gr[j];
          p[j] += v[j];
        }
      }
    }
  }

  model.metadata["iterations"] = cfg.max_iters;
  model.metadata["train"] = cfg.to_json();
  result.model = std::move(model);
  return result;
}

std::pair<double, double> smoothed_endpoints(std::span<const double> history, std::size_t window) {
  if (history.empty() || window == 0) throw UsageError("smoothed_endpoints: empty history");
  const std::size_t w = std::min(window, history.size());
  const double head = std::accumulate(history.begin(), history.begin() + w, 0.0) / double(w);
  const double tail = std::accumulate(history.end() - w, history.end(), 0.0) / double(w);
  return {head, tail};
}

#define NATSCAN_INSTANTIATE(T)                                                                 \
  template BatchGradients<T> bptt_gradients(const VlmLayerModel<T>&,                           \
                                            std::span<const Tensor<T>* const>, MapVariant);    \
  template T batch_loss(const VlmLayerModel<T>&, std::span<const Tensor<T>* const>, MapVariant); \
  template TrainResult<T> train(VlmLayerModel<T>, std::span<const Tensor<T>>,                  \
                                const TrainConfig&, const TrainProgress&);

NATSCAN_INSTANTIATE(float)
NATSCAN_INSTANTIATE(double)

#undef NATSCAN_INSTANTIATE

}  // namespace natscan::vlm
