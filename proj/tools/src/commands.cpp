#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "artifacts.hpp"
#include "natscan/cnn.hpp"
#include "natscan/container.hpp"
#include "natscan/error.hpp"
#include "natscan/image_io.hpp"
#include "natscan/log.hpp"
#include "natscan/preprocess.hpp"
#include "natscan/reconstruct.hpp"
#include "natscan/saliency.hpp"
#include "natscan/train.hpp"
#include "natscan/vlm.hpp"

namespace fs = std::filesystem;

namespace natscan::cli {
namespace {

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file: " + path);
}

void require_dir(const std::string& path, const char* flag) {
  if (!fs::is_directory(path)) throw UsageError(std::string(flag) + ": no such directory: " + path);
}

fs::path record_dir_for(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  return record_dir_for(file) / (file.stem().string() + suffix);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Raw 0-255 image, resized to the CNN input if needed, minus the pixel mean.
Tensor<double> cnn_input(const Tensor<double>& raw, const cnn::CnnSpec& spec,
                         const std::array<double, 3>& pixel_mean) {
  if (raw.dim(2) != spec.input_channels) {
    throw DataError("image has " + std::to_string(raw.dim(2)) + " channels, the CNN expects " +
                    std::to_string(spec.input_channels));
  }
  const std::size_t h = spec.input_h, w = spec.input_w, c = spec.input_channels;
  Tensor<double> x(Shape{h, w, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    Tensor<double> plane(Shape{raw.dim(0), raw.dim(1)});
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = raw[i * c + ch];
    if (plane.dim(0) != h || plane.dim(1) != w) plane = sal::resize_bilinear(plane, h, w);
    for (std::size_t i = 0; i < plane.size(); ++i) x[i * c + ch] = plane[i] - pixel_mean[ch % 3];
  }
  return x;
}

template <std::floating_point T>
std::vector<vlm::VlmLayerModel<T>> load_vlms(const std::vector<std::string>& paths,
                                             const cnn::CnnSpec& spec) {
  const auto taps = cnn::tap_shapes(spec);
  std::vector<vlm::VlmLayerModel<T>> models;
  for (const auto& p : paths) {
    auto m = vlm::load_model<T>(p);
    if (!taps.contains(m.layer_name)) {
      throw UsageError("VLM model " + p + " is for layer '" + m.layer_name +
                       "', which the CNN does not tap");
    }
    models.push_back(std::move(m));
  }
  return models;
}

template <std::floating_point T>
void extract_impl(const ExtractArgs& a, const RunConfig& cfg, std::ostream& out) {
  const auto net = cnn::load_model<T>(a.cnn);
  std::vector<std::string> taps = a.taps.empty() ? net.spec.taps : a.taps;
  for (const auto& t : taps) {
    if (std::find(net.spec.taps.begin(), net.spec.taps.end(), t) == net.spec.taps.end()) {
      throw UsageError("--taps: '" + t + "' is not a tap of " + a.cnn);
    }
  }
  const auto files = io::list_images(a.images);
  if (files.empty()) throw DataError("no images in " + a.images);
  std::set<std::string> stems;
  for (const auto& f : files) {
    if (!stems.insert(f.stem().string()).second) {
      throw DataError("two images share the name '" + f.stem().string() + "' in " + a.images);
    }
  }

  OutputRecord rec(a.out, "extract");
  for (const auto& t : taps) fs::create_directories(fs::path(a.out) / t);

  struct Outcome {
    std::string skipped;
    std::map<std::string, Shape> shapes;
  };
  std::vector<Outcome> outcomes(files.size());
  parallel_for(files.size(), cfg.effective_jobs(), [&](std::size_t i) {
    try {
      const auto x = cnn_input(io::read_image(files[i]), net.spec, cfg.pixel_mean).template cast<T>();
      const auto feats = cnn::forward(net, x);
      for (const auto& t : taps) {
        const auto& f = feats.at(t);
        io::write_tensor(fs::path(a.out) / t / (files[i].stem().string() + ".vlmt"), f,
                         {{"tap", t}, {"source", files[i].filename().string()}});
        outcomes[i].shapes[t] = f.shape();
      }
    } catch (const DataError& e) {
      outcomes[i].skipped = e.what();
    }
    progress("extract", std::to_string(i + 1) + "/" + std::to_string(files.size()) + " " +
                            files[i].filename().string());
  });

  rec.input(a.cnn);
  std::size_t written = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!outcomes[i].skipped.empty()) {
      log::warn("skipping " + files[i].string() + ": " + outcomes[i].skipped);
      continue;
    }
    ++written;
    rec.input(files[i]);
    const auto source_hash = file_fingerprint(files[i]);
    for (const auto& [t, shape] : outcomes[i].shapes) {
      rec.artifact(fs::path(a.out) / t / (files[i].stem().string() + ".vlmt"),
                   {{"tap", t},
                    {"shape", shape},
                    {"source", files[i].filename().string()},
                    {"source_fnv1a64", source_hash}});
    }
  }
  if (written == 0) throw DataError("none of the images in " + a.images + " could be decoded");
  rec.finish(cfg.to_json(), "extract");
  out << "extracted " << written << " image(s) x " << taps.size() << " tap(s) into " << a.out
      << '\n';
}

template <std::floating_point T>
void train_impl(const TrainArgs& a, const RunConfig& cfg, std::ostream& out) {
  fs::path dir = a.features;
  if (fs::is_directory(dir / a.layer)) dir /= a.layer;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".vlmt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .vlmt feature files in " + dir.string());

  std::vector<Tensor<T>> corpus;
  for (const auto& f : files) {
    auto c = io::read_container(f, io::kTensorMagic);
    if (c.meta().contains("tap") && c.meta()["tap"] != a.layer) {
      throw UsageError(f.string() + " holds features of '" + c.meta()["tap"].get<std::string>() +
                       "', not '" + a.layer + "'");
    }
    auto t = c.template get<T>("value");
    if (t.rank() != 3) throw DataError(f.string() + " is not an H x W x D feature grid");
    corpus.push_back(std::move(t));
  }
  progress("train-vlm", "fitting preprocessing on " + std::to_string(corpus.size()) + " grids");
  auto pre = prep::fit<T>(corpus);
  std::vector<Tensor<T>> grids;
  grids.reserve(corpus.size());
  for (const auto& g : corpus) grids.push_back(prep::apply(pre, g));

  vlm::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  auto model = vlm::make_model<T>(a.layer, std::move(pre), cfg.seed);
  const std::size_t every = std::max<std::size_t>(1, tc.max_iters / 20);
  auto result = vlm::train(std::move(model), std::span<const Tensor<T>>(grids), tc,
                           [&](std::size_t it, double loss, double lr) {
                             if (it % every == 0 || it + 1 == tc.max_iters) {
                               progress("train-vlm", "iter " + std::to_string(it + 1) + "/" +
                                                         std::to_string(tc.max_iters) + " loss " +
                                                         fmt(loss) + " lr " + fmt(lr));
                             }
                           });
  result.model.metadata["seed"] = cfg.seed;
  result.model.metadata["corpus_size"] = corpus.size();
  result.model.metadata["precision"] = precision_name(cfg.precision);

  OutputRecord rec(record_dir_for(a.out), "train-vlm");
  vlm::save_model(a.out, result.model);
  const auto loss_csv = sibling(a.out, ".loss.csv");
  {
    std::ostringstream csv;
    csv << "iter,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, static_cast<double>(result.loss_history[i]));
      csv << buf;
    }
    io::write_file(loss_csv, csv.str());
  }
  for (const auto& f : files) rec.input(f);
  rec.artifact(a.out, {{"layer", a.layer}, {"D", result.model.feature_dim()}, {"K", result.model.input_dim()}});
  rec.artifact(loss_csv);
  rec.finish(cfg.to_json(), fs::path(a.out).filename().string());

  std::vector<double> hist(result.loss_history.begin(), result.loss_history.end());
  const auto [head, tail] = vlm::smoothed_endpoints(hist, std::max<std::size_t>(1, hist.size() / 10));
  out << "layer " << a.layer << ": smoothed loss " << fmt(head) << " -> " << fmt(tail) << " over "
      << hist.size() << " iterations\n";
}

template <std::floating_point T>
std::map<std::string, Tensor<T>> features_of_image(const cnn::CnnModel<T>& net,
                                                   const std::string& path,
                                                   const RunConfig& cfg) {
  const auto x = cnn_input(io::read_image(path), net.spec, cfg.pixel_mean).template cast<T>();
  auto f = cnn::forward(net, x);
  return {f.begin(), f.end()};
}

template <std::floating_point T>
void score_impl(const ScoreArgs& a, const RunConfig& cfg, std::ostream& out) {
  const auto net = cnn::load_model<T>(a.cnn);
  const auto models = load_vlms<T>(a.models, net.spec);
  std::vector<std::string> names;
  for (const auto& m : models) names.push_back(m.layer_name);
  std::map<std::string, double> lambdas =
      a.lambdas.empty() ? vlm::default_layer_weights(names) : parse_lambdas(a.lambdas);
  for (const auto& [name, _] : lambdas) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw UsageError("--lambdas names layer '" + name + "' but no model was given for it");
    }
  }
  const auto feats = features_of_image(net, a.image, cfg);
  std::map<std::string, T> per_layer, lam;
  for (const auto& m : models) {
    per_layer[m.layer_name] =
        vlm::layer_unnaturalness(vlm::unnaturalness_map(m, feats.at(m.layer_name), false, cfg.train.variant));
  }
  for (const auto& [k, v] : lambdas) lam[k] = static_cast<T>(v);
  const T total = vlm::image_unnaturalness(per_layer, lam);
  out << "layer,lambda,u\n";
  for (const auto& m : models) {
    out << m.layer_name << ',' << fmt(lambdas.at(m.layer_name)) << ','
        << fmt(static_cast<double>(per_layer.at(m.layer_name))) << '\n';
  }
  out << "image,," << fmt(static_cast<double>(total)) << '\n';
}

template <std::floating_point T>
Tensor<double> saliency_for(const cnn::CnnModel<T>& net, const vlm::VlmLayerModel<T>& model,
                            const Tensor<double>& raw, const RunConfig& cfg) {
  const auto x = cnn_input(raw, net.spec, cfg.pixel_mean).template cast<T>();
  const auto feats = cnn::forward(net, x);
  const auto map = vlm::unnaturalness_map(model, feats.at(model.layer_name), false, cfg.train.variant);
  return sal::saliency_from_map(map.template cast<double>(), raw.dim(0), raw.dim(1),
                                cfg.saliency.sigma);
}

template <std::floating_point T>
void saliency_impl(const SaliencyArgs& a, const RunConfig& cfg, std::ostream& out) {
  const auto net = cnn::load_model<T>(a.cnn);
  const auto model = load_vlms<T>({a.model}, net.spec).front();
  const auto s = saliency_for(net, model, io::read_image(a.image), cfg);

  OutputRecord rec(record_dir_for(a.out), "saliency");
  io::write_png_gray16(a.out, io::stretch_to_range(s, 65535.0));
  const auto raw = sibling(a.out, ".vlmt");
  io::write_tensor(raw, s, {{"layer", model.layer_name}, {"sigma", cfg.saliency.sigma}});
  for (const auto& p : {a.cnn, a.model, a.image}) rec.input(p);
  rec.artifact(a.out, {{"shape", s.shape()}});
  rec.artifact(raw, {{"shape", s.shape()}});
  rec.finish(cfg.to_json(), fs::path(a.out).filename().string());
  out << "wrote " << a.out << " (" << s.dim(0) << "x" << s.dim(1) << ")\n";
}

template <std::floating_point T>
void eval_auc_impl(const EvalAucArgs& a, const RunConfig& cfg, std::ostream& out) {
  const auto net = cnn::load_model<T>(a.cnn);
  const auto model = load_vlms<T>({a.model}, net.spec).front();
  const auto dataset = sal::load_dataset(a.dataset);
  std::map<std::string, sal::FixationSet> all;
  for (const auto& e : dataset) all[e.id] = e.fixations;

  std::vector<double> aucs(dataset.size());
  parallel_for(dataset.size(), cfg.effective_jobs(), [&](std::size_t i) {
    const auto& e = dataset[i];
    const auto s = saliency_for(net, model, io::read_image(e.image), cfg);
    const auto neg = sal::build_negative_set(all, e.id, cfg.saliency.negative_cap, cfg.seed);
    aucs[i] = sal::shuffled_auc(s, e.fixations.points, neg.points);
    progress("eval-auc", std::to_string(i + 1) + "/" + std::to_string(dataset.size()) + " " + e.id +
                             " auc " + fmt(aucs[i]));
  });

  std::vector<std::pair<std::string, double>> rows;
  double total = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    rows.emplace_back(dataset[i].id, aucs[i]);
    total += aucs[i];
  }
  OutputRecord rec(record_dir_for(a.out), "eval-auc");
  sal::write_auc_report(a.out, rows);
  rec.input(a.cnn);
  rec.input(a.model);
  for (const auto& e : dataset) {
    rec.input(e.image);
    rec.input(fs::path(a.dataset) / "fixations" / (e.id + ".csv"));
  }
  rec.artifact(a.out, {{"images", dataset.size()}});
  rec.finish(cfg.to_json(), fs::path(a.out).filename().string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "mean,%.10f\n", total / double(dataset.size()));
  out << buf;
}

template <std::floating_point T>
void reconstruct_impl(const ReconstructArgs& a, const RunConfig& cfg, std::ostream& out) {
  const auto net = cnn::load_model<T>(a.cnn);
  const auto models = load_vlms<T>(a.models, net.spec);

  std::map<std::string, Tensor<T>> target;
  if (!a.target_image.empty()) {
    auto feats = features_of_image(net, a.target_image, cfg);
    const auto layers = a.target_layers.empty() ? net.spec.taps : a.target_layers;
    for (const auto& l : layers) {
      auto it = feats.find(l);
      if (it == feats.end()) throw UsageError("--target-layers: '" + l + "' is not a CNN tap");
      target[l] = it->second;
    }
  } else {
    for (const auto& p : a.target_tensors) {
      auto c = io::read_container(p, io::kTensorMagic);
      if (!c.meta().contains("tap")) {
        throw DataError(p + " does not record which tap it came from (meta \"tap\")");
      }
      target[c.meta()["tap"].get<std::string>()] = c.template get<T>("value");
    }
  }

  recon::ReconstructionConfig rc = cfg.reconstruct;
  rc.seed = cfg.seed;
  std::optional<Tensor<T>> init;
  if (!a.init_image.empty()) {
    rc.init = recon::InitKind::kFromImage;
    init = cnn_input(io::read_image(a.init_image), net.spec, cfg.pixel_mean).template cast<T>();
  } else if (rc.init == recon::InitKind::kFromImage) {
    throw UsageError("init \"from_image\" needs --init-image");
  }
  if (!a.rgb_corpus.empty()) {
    std::vector<Tensor<double>> imgs;
    for (const auto& f : io::list_images(a.rgb_corpus)) imgs.push_back(io::read_image(f));
    if (imgs.empty()) throw DataError("no images in " + a.rgb_corpus);
    rc.rgb = recon::fit_rgb_stats(imgs);
    for (std::size_t c = 0; c < 3; ++c) rc.rgb.mean[c] -= cfg.pixel_mean[c];
  }

  const auto problem = recon::make_problem(net, target, std::span<const vlm::VlmLayerModel<T>>(models), rc);
  const auto x0 = recon::initial_image(problem, rc, init);
  const std::size_t every = std::max<std::size_t>(1, rc.iters / 20);
  const auto result = recon::reconstruct(problem, rc, x0, [&](const recon::HistoryEntry& e) {
    if (e.iter % every == 0 || e.iter == rc.iters) {
      progress("reconstruct", "iter " + std::to_string(e.iter) + "/" + std::to_string(rc.iters) +
                                  " objective " + fmt(e.objective));
    }
  });

  Tensor<double> pixels = result.image.template cast<double>();
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] += cfg.pixel_mean[i % 3];
  OutputRecord rec(a.out, "reconstruct");
  const fs::path dir = a.out;
  io::write_tensor(dir / "reconstruction.vlmt", pixels,
                   {{"space", "pixels"}, {"best_iter", result.best_iter}});
  io::write_png_rgb8(dir / "reconstruction.png", io::stretch_to_range(pixels, 255.0));
  recon::write_history_csv(dir / "history.csv", result.history);
  rec.input(a.cnn);
  for (const auto& p : a.models) rec.input(p);
  if (!a.target_image.empty()) rec.input(a.target_image);
  for (const auto& p : a.target_tensors) rec.input(p);
  if (!a.init_image.empty()) rec.input(a.init_image);
  rec.artifact(dir / "reconstruction.vlmt", {{"shape", pixels.shape()},
                                             {"init", rc.to_json()["init"]},
                                             {"rgb_mean", rc.rgb.mean},
                                             {"rgb_std", rc.rgb.stddev}});
  rec.artifact(dir / "reconstruction.png");
  rec.artifact(dir / "history.csv", {{"rows", result.history.size()}});
  rec.finish(cfg.to_json(), "reconstruct");
  out << "best objective " << fmt(result.best_objective) << " at iteration " << result.best_iter
      << " (initial " << fmt(result.history.front().objective) << ")\n";
}

template <typename Fn>
void by_precision(const RunConfig& cfg, Fn&& fn) {
  if (cfg.precision == Precision::kWide) fn(double{});
  else fn(float{});
}

}  // namespace

std::map<std::string, double> parse_lambdas(const std::string& spec) {
  std::map<std::string, double> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--lambdas: expected layer=weight, got '" + item + "'");
    }
    const std::string name = item.substr(0, eq);
    double w = 0;
    try {
      std::size_t used = 0;
      w = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError("--lambdas: bad weight in '" + item + "'");
    }
    if (!(w >= 0.0)) throw UsageError("--lambdas: weights must be >= 0");
    if (!out.emplace(name, w).second) throw UsageError("--lambdas: layer '" + name + "' given twice");
  }
  if (out.empty()) throw UsageError("--lambdas is empty");
  return out;
}

void cmd_extract(const ExtractArgs& a, const RunConfig& cfg, std::ostream& out) {
  require_file(a.cnn, "--cnn");
  require_dir(a.images, "--images");
  by_precision(cfg, [&](auto t) { extract_impl<decltype(t)>(a, cfg, out); });
}

void cmd_train_vlm(const TrainArgs& a, const RunConfig& cfg, std::ostream& out) {
  require_dir(a.features, "--features");
  cfg.train.validate();
  by_precision(cfg, [&](auto t) { train_impl<decltype(t)>(a, cfg, out); });
}

void cmd_score(const ScoreArgs& a, const RunConfig& cfg, std::ostream& out) {
  require_file(a.cnn, "--cnn");
  require_file(a.image, "--image");
  for (const auto& m : a.models) require_file(m, "--model");
  by_precision(cfg, [&](auto t) { score_impl<decltype(t)>(a, cfg, out); });
}

void cmd_saliency(const SaliencyArgs& a, const RunConfig& cfg, std::ostream& out) {
  require_file(a.cnn, "--cnn");
  require_file(a.model, "--model");
  require_file(a.image, "--image");
  by_precision(cfg, [&](auto t) { saliency_impl<decltype(t)>(a, cfg, out); });
}

void cmd_eval_auc(const EvalAucArgs& a, const RunConfig& cfg, std::ostream& out) {
  require_file(a.cnn, "--cnn");
  require_file(a.model, "--model");
  require_dir(a.dataset, "--dataset");
  by_precision(cfg, [&](auto t) { eval_auc_impl<decltype(t)>(a, cfg, out); });
}

void cmd_reconstruct(const ReconstructArgs& a, const RunConfig& cfg, std::ostream& out) {
  require_file(a.cnn, "--cnn");
  for (const auto& m : a.models) require_file(m, "--models");
  if (a.target_image.empty() == a.target_tensors.empty()) {
    throw UsageError("give exactly one of --target-image or --target-tensor");
  }
  if (!a.target_image.empty()) require_file(a.target_image, "--target-image");
  for (const auto& t : a.target_tensors) require_file(t, "--target-tensor");
  if (!a.init_image.empty()) require_file(a.init_image, "--init-image");
  if (!a.rgb_corpus.empty()) require_dir(a.rgb_corpus, "--rgb-corpus");
  cfg.reconstruct.validate();
  by_precision(cfg, [&](auto t) { reconstruct_impl<decltype(t)>(a, cfg, out); });
}

}  // namespace natscan::cli
