#include "app.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "natscan/error.hpp"
#include "run_config.hpp"

namespace natscan::cli {
namespace {

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::size_t> jobs;
  std::optional<std::string> config;
  std::optional<std::string> pixel_mean;
};

void add_global(CLI::App& sub, GlobalFlags& g) {
  sub.add_option("--seed", g.seed, "Global seed for every random stream (default 0)");
  sub.add_option("--precision", g.precision, "Arithmetic precision: wide (double) or narrow (float)")
      ->check(CLI::IsMember({"wide", "narrow"}));
  sub.add_option("--jobs", g.jobs, "Worker threads; 0 = one per available core (default 0)");
  sub.add_option("--config", g.config, "JSON config file; flags override its values");
  sub.add_option("--pixel-mean", g.pixel_mean,
                 "Per-channel mean R,G,B subtracted from raw 0-255 pixels (default 0,0,0)");
}

std::array<double, 3> parse_pixel_mean(const std::string& s) {
  std::array<double, 3> out{};
  std::stringstream ss(s);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 3) throw UsageError("--pixel-mean takes exactly three values");
    try {
      std::size_t used = 0;
      out[n] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--pixel-mean: bad number '" + item + "'");
    }
    ++n;
  }
  if (n != 3) throw UsageError("--pixel-mean takes exactly three values");
  return out;
}

/// Collects a command's path flags and resolves them against config "paths".
class PathFlags {
 public:
  void single(CLI::App& sub, const std::string& flag, const std::string& key,
              const std::string& help, bool required) {
    auto& slot = singles_[key];
    slot.required = required;
    slot.flag = flag;
    sub.add_option(flag, slot.value, help + (required ? " (required)" : ""));
  }
  void list(CLI::App& sub, const std::string& flag, const std::string& key,
            const std::string& help, bool required, bool comma) {
    auto& slot = lists_[key];
    slot.required = required;
    slot.flag = flag;
    auto* opt = sub.add_option(flag, slot.value, help + (required ? " (required)" : ""));
    if (comma) opt->delimiter(',');
  }

  /// Flag, else config file; the result is written back into cfg.paths.
  void resolve(RunConfig& cfg) {
    for (auto& [key, s] : singles_) {
      if (s.value.empty()) s.value = cfg.path(key).value_or("");
      if (s.value.empty() && s.required) missing(s.flag, key);
      if (!s.value.empty()) cfg.paths[key] = s.value;
    }
    for (auto& [key, s] : lists_) {
      if (s.value.empty()) s.value = cfg.path_list(key);
      if (s.value.empty() && s.required) missing(s.flag, key);
      if (!s.value.empty()) cfg.paths[key] = s.value;
    }
  }

  const std::string& get(const std::string& key) const { return singles_.at(key).value; }
  const std::vector<std::string>& get_list(const std::string& key) const {
    return lists_.at(key).value;
  }

 private:
  [[noreturn]] static void missing(const std::string& flag, const std::string& key) {
    throw UsageError("missing " + flag.substr(0, flag.find(',')) + " (or paths." + key +
                     " in the config file)");
  }

  struct Single {
    std::string value, flag;
    bool required = false;
  };
  struct List {
    std::vector<std::string> value;
    std::string flag;
    bool required = false;
  };
  std::map<std::string, Single> singles_;
  std::map<std::string, List> lists_;
};

/// A numeric override that lands in the config only when given.
template <typename V>
struct Override {
  std::optional<V> value;
  void apply(V& target) const {
    if (value) target = *value;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"natscan: unnaturalness models over CNN feature grids"};
  app.name("natscan");
  app.require_subcommand(1);
  app.allow_extras(false);

  GlobalFlags global;
  std::map<std::string, PathFlags> paths;
  std::function<void(RunConfig&, std::ostream&)> action;

  auto make = [&](const std::string& name, const std::string& help) -> CLI::App& {
    CLI::App* sub = app.add_subcommand(name, help);
    add_global(*sub, global);
    return *sub;
  };

  // extract
  auto& extract = make("extract", "Write CNN feature grids at the chosen taps for every image");
  auto& p_extract = paths["extract"];
  p_extract.single(extract, "--cnn", "cnn", "CNN weight file (VLMW0001)", true);
  p_extract.single(extract, "--images", "images", "Directory of PNG/PPM images", true);
  p_extract.list(extract, "--taps", "taps", "Comma-separated tap names (default: every CNN tap)",
                 false, true);
  p_extract.single(extract, "--out", "out", "Output directory; one subdirectory per tap", true);
  extract.callback([&] {
    action = [&](RunConfig& cfg, std::ostream& o) {
      p_extract.resolve(cfg);
      cmd_extract({p_extract.get("cnn"), p_extract.get("images"), p_extract.get("out"),
                   p_extract.get_list("taps")},
                  cfg, o);
    };
  });

  // train-vlm
  auto& train = make("train-vlm", "Fit preprocessing and train the four directional predictors of one layer");
  auto& p_train = paths["train-vlm"];
  p_train.single(train, "--features", "features", "Feature directory written by extract", true);
  p_train.single(train, "--layer", "layer", "Tap name to train on", true);
  p_train.single(train, "--out", "out", "Model file to write (VLMM0001); <stem>.loss.csv beside it", true);
  Override<std::size_t> t_iters, t_batch;
  Override<double> t_lr, t_momentum, t_clip;
  train.add_option("--iters", t_iters.value, "Training iterations (train.max_iters)");
  train.add_option("--lr", t_lr.value, "Initial learning rate (train.lr)");
  train.add_option("--batch", t_batch.value, "Minibatch size in grids (train.batch)");
  train.add_option("--momentum", t_momentum.value, "Momentum coefficient (train.momentum)");
  train.add_option("--clip-norm", t_clip.value, "Gradient norm clip, 0 disables (train.clip_norm)");
  train.callback([&] {
    action = [&](RunConfig& cfg, std::ostream& o) {
      t_iters.apply(cfg.train.max_iters);
      t_batch.apply(cfg.train.batch);
      t_lr.apply(cfg.train.lr);
      t_momentum.apply(cfg.train.momentum);
      t_clip.apply(cfg.train.clip_norm);
      p_train.resolve(cfg);
      cmd_train_vlm({p_train.get("features"), p_train.get("layer"), p_train.get("out")}, cfg, o);
    };
  });

  // score
  auto& score = make("score", "Print per-layer and weighted image unnaturalness of one image");
  auto& p_score = paths["score"];
  p_score.single(score, "--cnn", "cnn", "CNN weight file (VLMW0001)", true);
  p_score.list(score, "--model,--models", "models", "VLM model files, one per layer", true, false);
  p_score.single(score, "--image", "image", "Image to score", true);
  p_score.single(score, "--lambdas", "lambdas",
                 "Layer weights as name=w,...; default 1, 0.1, 0.01, ... in model order", false);
  score.callback([&] {
    action = [&](RunConfig& cfg, std::ostream& o) {
      p_score.resolve(cfg);
      cmd_score({p_score.get("cnn"), p_score.get("image"), p_score.get("lambdas"),
                 p_score.get_list("models")},
                cfg, o);
    };
  });

  // saliency
  Override<double> s_sigma;
  auto& saliency = make("saliency", "Write the blurred unnaturalness saliency map of one image");
  auto& p_sal = paths["saliency"];
  p_sal.single(saliency, "--cnn", "cnn", "CNN weight file (VLMW0001)", true);
  p_sal.single(saliency, "--model", "model", "VLM model file", true);
  p_sal.single(saliency, "--image", "image", "Input image", true);
  p_sal.single(saliency, "--out", "out", "16-bit grayscale PNG; raw map goes to <stem>.vlmt", true);
  saliency.add_option("--sigma", s_sigma.value, "Blur sigma as a fraction of image width (saliency.sigma)");
  saliency.callback([&] {
    action = [&](RunConfig& cfg, std::ostream& o) {
      s_sigma.apply(cfg.saliency.sigma);
      p_sal.resolve(cfg);
      cmd_saliency({p_sal.get("cnn"), p_sal.get("model"), p_sal.get("image"), p_sal.get("out")},
                   cfg, o);
    };
  });

  // eval-auc
  Override<double> e_sigma;
  Override<std::size_t> e_cap;
  auto& eval = make("eval-auc", "Shuffled AUC of unnaturalness saliency over a fixation dataset");
  auto& p_eval = paths["eval-auc"];
  p_eval.single(eval, "--cnn", "cnn", "CNN weight file (VLMW0001)", true);
  p_eval.single(eval, "--model", "model", "VLM model file", true);
  p_eval.single(eval, "--dataset", "dataset", "Root with images/ and fixations/", true);
  p_eval.single(eval, "--out", "out", "Report CSV (image_id,shuffled_auc)", true);
  eval.add_option("--sigma", e_sigma.value, "Blur sigma as a fraction of image width (saliency.sigma)");
  eval.add_option("--negative-cap", e_cap.value,
                  "Maximum pooled negative fixations per image (saliency.negative_cap)");
  eval.callback([&] {
    action = [&](RunConfig& cfg, std::ostream& o) {
      e_sigma.apply(cfg.saliency.sigma);
      e_cap.apply(cfg.saliency.negative_cap);
      p_eval.resolve(cfg);
      cmd_eval_auc({p_eval.get("cnn"), p_eval.get("model"), p_eval.get("dataset"), p_eval.get("out")},
                   cfg, o);
    };
  });

  // reconstruct
  Override<std::size_t> r_iters;
  Override<double> r_lr, r_lambda_r, r_momentum;
  auto& recon = make("reconstruct", "Invert CNN features by gradient descent with the VLM prior");
  auto& p_rec = paths["reconstruct"];
  p_rec.single(recon, "--cnn", "cnn", "CNN weight file (VLMW0001)", true);
  p_rec.list(recon, "--models,--model", "models", "VLM model files used as the prior", false, false);
  p_rec.single(recon, "--target-image", "target_image", "Image whose features are the target", false);
  p_rec.list(recon, "--target-tensor", "target_tensor",
             "Feature files from extract used as the target (alternative to --target-image)", false,
             false);
  p_rec.list(recon, "--target-layers", "target_layers",
             "Comma-separated taps matched with --target-image (default: every tap)", false, true);
  p_rec.single(recon, "--init-image", "init_image", "Start from this image instead of Gaussian noise",
               false);
  p_rec.single(recon, "--rgb-corpus", "rgb_corpus",
               "Image directory for the Gaussian init statistics", false);
  p_rec.single(recon, "--out", "out", "Output directory", true);
  recon.add_option("--iters", r_iters.value, "Descent iterations (reconstruct.iters)");
  recon.add_option("--lr", r_lr.value, "Step size (reconstruct.lr)");
  recon.add_option("--lambda-r", r_lambda_r.value, "Weight of the VLM prior (reconstruct.lambda_r)");
  recon.add_option("--momentum", r_momentum.value, "Momentum coefficient (reconstruct.momentum)");
  recon.callback([&] {
    action = [&](RunConfig& cfg, std::ostream& o) {
      r_iters.apply(cfg.reconstruct.iters);
      r_lr.apply(cfg.reconstruct.lr);
      r_lambda_r.apply(cfg.reconstruct.lambda_r);
      r_momentum.apply(cfg.reconstruct.momentum);
      p_rec.resolve(cfg);
      ReconstructArgs a;
      a.cnn = p_rec.get("cnn");
      a.target_image = p_rec.get("target_image");
      a.init_image = p_rec.get("init_image");
      a.rgb_corpus = p_rec.get("rgb_corpus");
      a.out = p_rec.get("out");
      a.models = p_rec.get_list("models");
      a.target_tensors = p_rec.get_list("target_tensor");
      a.target_layers = p_rec.get_list("target_layers");
      cmd_reconstruct(a, cfg, o);
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "natscan: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  try {
    RunConfig cfg = global.config ? RunConfig::from_file(*global.config) : RunConfig{};
    if (global.seed) cfg.seed = *global.seed;
    if (global.precision) cfg.precision = parse_precision(*global.precision);
    if (global.jobs) cfg.jobs = *global.jobs;
    if (global.pixel_mean) cfg.pixel_mean = parse_pixel_mean(*global.pixel_mean);
    action(cfg, out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "natscan: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "natscan: error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "natscan: error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace natscan::cli
