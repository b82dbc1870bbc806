// One PASS/FAIL line per acceptance criterion. Exit status 0 only if all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lstm_oracle.hpp"
#include "natscan/cnn.hpp"
#include "natscan/container.hpp"
#include "natscan/gradcheck.hpp"
#include "natscan/image_io.hpp"
#include "natscan/log.hpp"
#include "natscan/preprocess.hpp"
#include "natscan/reconstruct.hpp"
#include "natscan/rng.hpp"
#include "natscan/saliency.hpp"
#include "natscan/train.hpp"
#include "natscan/vlm.hpp"
#include "run_config.hpp"
#include "support.hpp"
#include "vlm_oracle.hpp"

namespace fs = std::filesystem;
using namespace natscan;
using cnn::LayerSpec;
using testing::random;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Shared state: the committed corpus, CNN and pipeline config, and the VLM
// trained on them.
struct Fixture {
  cnn::CnnModel<double> net;
  cli::RunConfig cfg;
  std::vector<Tensor<double>> conv3;  // preprocessed conv3 grids of the corpus
  std::optional<vlm::VlmLayerModel<double>> trained;
};

Fixture& fixture() {
  static Fixture f = [] {
    Fixture x;
    x.net = cnn::load_model<double>(testing::data_dir() / "toy_cnn.vlmw");
    x.cfg = cli::RunConfig::from_file((testing::data_dir() / "pipeline.json").string());
    return x;
  }();
  return f;
}

Tensor<double> features(const cnn::CnnModel<double>& net, const fs::path& image,
                        const std::string& tap) {
  return cnn::forward(net, io::read_image(image)).at(tap);
}

// ---------------------------------------------------------------------------

struct ToyConfig {
  cnn::CnnModel<double> net;
  std::vector<vlm::VlmLayerModel<double>> models;
};

/// 2-3 conv layers, tap grids at most 8x8, depths at most 16.
ToyConfig toy_config(std::uint64_t seed) {
  Rng rng = make_rng(seed, "acceptance.toy");
  cnn::CnnSpec s;
  s.input_h = testing::pick(rng, 6, 8);
  s.input_w = testing::pick(rng, 6, 8);
  s.layers = {LayerSpec::conv("conv1", testing::pick(rng, 4, 8), 3, 3, 1, 1), LayerSpec::relu()};
  if (seed % 3 == 0) s.layers.push_back(LayerSpec::maxpool("pool1", 2, 2));
  s.layers.push_back(LayerSpec::conv("conv2", testing::pick(rng, 4, 16), 3, 3, 1, 1));
  s.taps = {"conv2"};
  if (seed % 2 == 1) {
    s.layers.push_back(LayerSpec::relu());
    s.layers.push_back(LayerSpec::conv("conv3", testing::pick(rng, 4, 16), 3, 3, 1, 1));
    s.taps.push_back("conv3");
  }
  ToyConfig t{cnn::make_random_model<double>(s, seed), {}};
  std::map<std::string, std::vector<Tensor<double>>> feats;
  for (int i = 0; i < 4; ++i) {
    for (auto& [name, g] : cnn::forward(t.net, random({s.input_h, s.input_w, 3}, rng)))
      feats[name].push_back(std::move(g));
  }
  for (const auto& name : s.taps) {
    t.models.push_back(vlm::make_model<double>(name, prep::fit<double>(feats[name]), seed));
  }
  return t;
}

Outcome gradient_integrity() {
  double worst = 0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = toy_config(seed);
    Rng rng = make_rng(seed, "acceptance.images");
    const Shape in{t.net.spec.input_h, t.net.spec.input_w, 3};
    auto image = random(in, rng);

    // Prior alone: lambda_r = 1 and no target gives sum_l lambda_l u_l.
    recon::ReconstructionConfig rc;
    rc.lambda_r = 1.0;
    auto target_image = random(in, rng);
    auto target = cnn::forward(t.net, target_image);
    auto full = recon::make_problem(t.net, {target.begin(), target.end()},
                                    std::span<const vlm::VlmLayerModel<double>>(t.models), rc);
    recon::Problem<double> prior = full;
    prior.target.clear();

    // Cross-check the prior value against the scoring path.
    std::map<std::string, double> per_layer;
    for (const auto& m : t.models) {
      per_layer[m.layer_name] =
          vlm::layer_unnaturalness(vlm::unnaturalness_map(m, cnn::forward(t.net, image).at(m.layer_name), false));
    }
    const double u = vlm::image_unnaturalness(per_layer, prior.lambdas);
    if (std::abs(recon::objective(prior, image, false).value - u) > 1e-10 * std::max(1.0, u)) {
      return {false, "seed " + std::to_string(seed) + ": prior value disagrees with image_unnaturalness"};
    }

    full.lambda_r = 0.5;
    for (const auto* p : {&prior, &full}) {
      const auto analytic = recon::objective(*p, image).gradient;
      const auto numeric = finite_diff_grad<double>(
          [&](const Tensor<double>& x) { return recon::objective(*p, x, false).value; }, image, 1e-5);
      const auto report = check_gradient(analytic, numeric, 1e-4, 1e-8);
      worst = std::max(worst, report.max_rel_error);
      checked += report.checked;
      if (!report.passed) return {false, "seed " + std::to_string(seed) + ": " + report.summary()};
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " pixel derivatives over 10 configs, max rel err " +
                            fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------

vlm::VlmLayerModel<double> random_vlm(std::size_t d, Rng& rng, std::uint64_t seed) {
  auto a = random({d, d}, rng);
  auto eig = prep::jacobi_eigen(add(a, transpose(a)).data(), d);
  const std::size_t k = d / 2;
  prep::PreprocessParams<double> p;
  p.mean = random({d}, rng);
  p.stddev = random({d}, rng, 0.5, 2.0);
  p.projection = Tensor<double>(Shape{d, k});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) p.projection(i, j) = eig.vectors[i * d + j];
  p.eigenvalues = Tensor<double>(Shape{k}, 1.0);
  return vlm::make_model<double>("conv1", p, seed);
}

Outcome formula_oracles() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = make_rng(seed, "acceptance.oracle");
    const std::size_t len = testing::pick(rng, 2, 9), k = testing::pick(rng, 1, 6);
    auto s = random({len, k}, rng), mu = random({len - 1, k}, rng);
    worst = std::max(worst, std::abs(vlm::sequence_nll(s, mu) - oracle::nll(s, mu)));

    std::map<std::string, double> got_layers, want_layers, lambdas;
    for (int layer = 0; layer < 2; ++layer) {
      const std::size_t d = 2 * testing::pick(rng, 1, 4) + testing::pick(rng, 0, 1);
      auto m = random_vlm(d, rng, seed * 2 + layer);
      const std::string name = "conv" + std::to_string(layer + 1);
      m.layer_name = name;
      auto grid = random({testing::pick(rng, 2, 6), testing::pick(rng, 2, 6), d}, rng);
      for (bool symmetric : {false, true}) {
        const auto variant = symmetric ? vlm::MapVariant::kSymmetric : vlm::MapVariant::kPrinted;
        const auto got = vlm::unnaturalness_map(m, grid, false, variant);
        const auto want = oracle::map(m, prep::apply(m.preprocess, grid), symmetric);
        if (got.shape() != want.shape()) return {false, "map shape mismatch at seed " + std::to_string(seed)};
        worst = std::max(worst, testing::max_abs_diff(got, want));
        if (!symmetric) {
          got_layers[name] = vlm::layer_unnaturalness(got);
          want_layers[name] = oracle::layer(want);
          worst = std::max(worst, std::abs(got_layers[name] - want_layers[name]));
        }
      }
      lambdas[name] = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    }
    worst = std::max(worst, std::abs(vlm::image_unnaturalness(got_layers, lambdas) -
                                     oracle::image(want_layers, lambdas)));
  }
  return {worst <= 1e-10, "50 cases, max abs deviation " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------

Outcome lstm_correctness() {
  std::uint64_t worst_ulps = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = make_rng(seed, "acceptance.lstm");
    const auto din = testing::pick(rng, 1, 8), dh = testing::pick(rng, 1, 5);
    vlm::LstmParams<double> p;
    for (std::size_t g = 0; g < 4; ++g) {
      p.w_x[g] = random({din, dh}, rng);
      p.w_h[g] = random({dh, dh}, rng);
      p.b[g] = random({dh}, rng);
    }
    auto x = random({din}, rng), h = random({dh}, rng), c = random({dh}, rng);
    auto [hg, cg] = vlm::lstm_step(p, x, h, c);
    auto [hw, cw] = oracle::lstm_step(p, x, h, c);
    for (std::size_t j = 0; j < dh; ++j) {
      worst_ulps = std::max({worst_ulps, testing::ulp_distance(hg[j], hw[j]),
                             testing::ulp_distance(cg[j], cw[j])});
    }
  }
  // Causality: perturbing element j leaves every prediction of elements <= j
  // unchanged and changes the prediction of element j + 1.
  std::size_t probes = 0, violations = 0;
  constexpr std::size_t len = 8;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, "acceptance.causal");
    const std::size_t k = testing::pick(rng, 2, 8);
    auto stack = vlm::random_stack<double>(k, rng);
    auto seq = random({len, k}, rng);
    auto base = vlm::predict_sequence(stack, seq);
    for (std::size_t j = 0; j < len; ++j) {
      auto moved = seq;
      for (std::size_t c = 0; c < k; ++c) moved(j, c) += 0.5;
      auto mu = vlm::predict_sequence(stack, moved);
      // Row r of mu predicts element r + 1 (0-based).
      for (std::size_t r = 0; r + 1 <= j && r < len - 1; ++r)
        for (std::size_t c = 0; c < k; ++c) violations += mu(r, c) != base(r, c);
      if (j < len - 1) {
        bool changed = false;
        for (std::size_t c = 0; c < k; ++c) changed |= mu(j, c) != base(j, c);
        violations += !changed;
      }
      ++probes;
    }
  }
  const bool pass = worst_ulps <= 4 && violations == 0;
  return {pass, "lstm_step max " + std::to_string(worst_ulps) + " ulps over 50 cases; " +
                    std::to_string(probes) + " causality probes at T=8, " +
                    std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------------------

Outcome preprocessing() {
  double worst_ratio = 0;
  std::string depths;
  bool depth_ok = true;
  for (std::size_t d : {6u, 11u, 16u, 96u}) {
    Rng rng = make_rng(d, "acceptance.prep");
    auto a = random({d, d}, rng, -2, 2);
    std::normal_distribution<double> unit;
    constexpr std::size_t n = 10000;
    Tensor<double> g(Shape{100, 100, d});
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : z) v = unit(rng);
      for (std::size_t r = 0; r < d; ++r) {
        double acc = double(r);
        for (std::size_t c = 0; c < d; ++c) acc += a(r, c) * z[c];
        g[i * d + r] = acc;
      }
    }
    std::vector<Tensor<double>> corpus{g};
    auto p = prep::fit<double>(corpus);
    auto out = prep::apply(p, g);
    const std::size_t k = out.dim(2);
    depth_ok &= k == d / 2;
    depths += std::to_string(d) + "->" + std::to_string(k) + " ";
    std::vector<double> mean(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) mean[j] += out[i * k + j];
    for (auto& m : mean) m /= double(n);
    std::vector<double> cov(k * k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c)
          cov[r * k + c] += (out[i * k + r] - mean[r]) * (out[i * k + c] - mean[c]);
    double diag = 0, off = 0;
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c)
        (r == c ? diag : off) = std::max(r == c ? diag : off, std::abs(cov[r * k + c] / double(n)));
    worst_ratio = std::max(worst_ratio, off / diag);
  }
  return {depth_ok && worst_ratio < 1e-6,
          "depths " + depths + "; max |offdiag| / max diag " + fmt("%.2e", worst_ratio)};
}

// ---------------------------------------------------------------------------

Outcome training_progress() {
  auto& f = fixture();
  std::vector<Tensor<double>> raw;
  for (const auto& img : io::list_images(testing::data_dir() / "corpus"))
    raw.push_back(features(f.net, img, "conv3"));
  auto pre = prep::fit<double>(raw);
  for (const auto& g : raw) f.conv3.push_back(prep::apply(pre, g));

  vlm::TrainConfig tc = f.cfg.train;
  tc.seed = f.cfg.seed;
  tc.max_iters = 300;
  auto run = [&] {
    return vlm::train(vlm::make_model<double>("conv3", pre, f.cfg.seed),
                      std::span<const Tensor<double>>(f.conv3), tc);
  };
  auto a = run();
  auto b = run();
  bool identical = a.loss_history == b.loss_history;
  identical &= io::serialize(vlm::to_container(a.model)) == io::serialize(vlm::to_container(b.model));
  const auto [head, tail] = vlm::smoothed_endpoints(a.loss_history, 30);
  f.trained = std::move(a.model);
  const double ratio = tail / head;
  return {ratio < 0.7 && identical,
          std::to_string(raw.size()) + " grids, smoothed loss " + fmt("%.4g", head) + " -> " +
              fmt("%.4g", tail) + " (ratio " + fmt("%.3f", ratio) + "), rerun " +
              (identical ? "bit-identical" : "DIFFERS")};
}

// ---------------------------------------------------------------------------

Outcome reconstruction() {
  auto& f = fixture();
  if (!f.trained) return {false, "needs the trained VLM from the training criterion"};
  const auto image = io::read_image(testing::data_dir() / "corpus" / "img_005.png");
  auto taps = cnn::forward(f.net, image);
  std::map<std::string, Tensor<double>> target{{"conv3", taps.at("conv3")}};
  std::vector<vlm::VlmLayerModel<double>> models{*f.trained};

  // Identity case.
  recon::ReconstructionConfig id = f.cfg.reconstruct;
  id.lambda_r = 0;
  id.init = recon::InitKind::kFromImage;
  id.iters = 50;
  auto p_id = recon::make_problem(f.net, target, std::span<const vlm::VlmLayerModel<double>>(models), id);
  auto r_id = recon::reconstruct(p_id, id, recon::initial_image<double>(p_id, id, image));
  double max_obj = 0;
  for (const auto& e : r_id.history) max_obj = std::max(max_obj, std::abs(e.objective));
  const bool identity_ok = max_obj == 0.0 && r_id.image == image;

  // Gaussian init, committed step size, 500 iterations.
  recon::ReconstructionConfig g = f.cfg.reconstruct;
  g.seed = f.cfg.seed;
  g.iters = 500;
  std::vector<Tensor<double>> corpus;
  for (const auto& img : io::list_images(testing::data_dir() / "corpus")) corpus.push_back(io::read_image(img));
  g.rgb = recon::fit_rgb_stats(corpus);
  auto p = recon::make_problem(f.net, target, std::span<const vlm::VlmLayerModel<double>>(models), g);
  auto r = recon::reconstruct(p, g, recon::initial_image<double>(p, g, std::nullopt));
  const double initial = r.history.front().objective;
  const double reduction = 1.0 - r.best_objective / initial;
  return {identity_ok && reduction >= 0.95,
          std::string("identity: max objective ") + fmt("%g", max_obj) + " over 50 iters" +
              (identity_ok ? "" : " (image moved)") + "; gaussian: " + fmt("%.4g", initial) +
              " -> " + fmt("%.4g", r.best_objective) + " (" + fmt("%.3f", 100 * reduction) +
              "% reduction, threshold 95%)"};
}

// ---------------------------------------------------------------------------

Outcome auc_trio() {
  using sal::Point;
  Rng rng = make_rng(1, "acceptance.auc");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Perfect separation: left half 1, right half 0.
  Tensor<double> halves(Shape{20, 20});
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 10; ++x) halves(y, x) = 1.0;
  std::vector<Point> left, right;
  for (int i = 0; i < 50; ++i) {
    left.push_back({0.45 * u(rng), u(rng)});
    right.push_back({0.55 + 0.45 * u(rng), u(rng)});
  }
  const double perfect = sal::shuffled_auc(halves, left, right);
  // Identical distributions: same points on both sides.
  auto noise = random({20, 20}, rng);
  const double same = sal::shuffled_auc(noise, left, left);

  // Centered Gaussian against center-biased fixations on both sides.
  std::normal_distribution<double> n01(0.0, 1.0);
  auto center_biased = [&](std::size_t n) {
    std::vector<Point> pts;
    while (pts.size() < n) {
      const double x = 0.5 + 0.2 * n01(rng), y = 0.5 + 0.2 * n01(rng);
      if (x >= 0 && x <= 1 && y >= 0 && y <= 1) pts.push_back({x, y});
    }
    return pts;
  };
  const auto pos = center_biased(3000), neg = center_biased(3000);
  const double gauss = sal::shuffled_auc(sal::centered_gaussian(64, 64, 0.2), pos, neg);

  // Rank-sum AUC equals brute-force pairwise AUC exactly.
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng r2 = make_rng(seed, "acceptance.pairs");
    const std::size_t np = testing::pick(r2, 1, 100), nn = testing::pick(r2, 1, 100);
    std::vector<double> a(np), b(nn);
    for (auto& v : a) v = double(testing::pick(r2, 0, 20));  // ties on purpose
    for (auto& v : b) v = double(testing::pick(r2, 0, 20));
    mismatches += sal::rank_auc(a, b) != sal::pairwise_auc(a, b);
  }
  const bool pass = perfect == 1.0 && same == 0.5 && std::abs(gauss - 0.5) <= 0.05 && mismatches == 0;
  return {pass, "perfect " + fmt("%.17g", perfect) + ", identical " + fmt("%.17g", same) +
                    ", centered gaussian " + fmt("%.4f", gauss) + ", rank vs pairwise mismatches " +
                    std::to_string(mismatches) + "/50"};
}

// ---------------------------------------------------------------------------

Outcome discrimination() {
  auto& f = fixture();
  if (!f.trained) return {false, "needs the trained VLM from the training criterion"};
  const fs::path root = testing::data_dir() / "saliency";
  const auto truth = nlohmann::json::parse(io::read_file(root / "truth.json"));
  const auto dataset = sal::load_dataset(root);
  std::map<std::string, sal::FixationSet> all;
  for (const auto& e : dataset) all[e.id] = e.fixations;

  const double ps = truth["patch_sigma"], cs = truth["center_sigma"], pw = truth["patch_weight"];
  double density_sum = 0, gauss_sum = 0;
  std::size_t above = 0;
  std::string vlm_aucs;
  for (const auto& e : dataset) {
    const auto img = io::read_image(e.image);
    const std::size_t h = img.dim(0), w = img.dim(1);
    const auto neg = sal::build_negative_set(all, e.id, f.cfg.saliency.negative_cap, f.cfg.seed).points;

    // The generating density, evaluated at pixel centers.
    const double pcx = truth["images"][e.id]["patch_center"][0];
    const double pcy = truth["images"][e.id]["patch_center"][1];
    Tensor<double> density(Shape{h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double px = (x + 0.5) / double(w), py = (y + 0.5) / double(h);
        auto g = [](double dx, double dy, double s) {
          return std::exp(-(dx * dx + dy * dy) / (2 * s * s)) / (s * s);
        };
        density(y, x) = pw * g(px - pcx, py - pcy, ps) + (1 - pw) * g(px - 0.5, py - 0.5, cs);
      }
    density_sum += sal::shuffled_auc(density, e.fixations.points, neg);
    gauss_sum += sal::shuffled_auc(sal::centered_gaussian(h, w, cs), e.fixations.points, neg);

    const auto map = vlm::unnaturalness_map(*f.trained, cnn::forward(f.net, img).at("conv3"), false,
                                            f.cfg.train.variant);
    const auto s = sal::saliency_from_map(map, h, w, f.cfg.saliency.sigma);
    const double auc = sal::shuffled_auc(s, e.fixations.points, neg);
    above += auc > 0.5;
    vlm_aucs += fmt("%.3f", auc) + " ";
  }
  const double n = double(dataset.size());
  const double gap = density_sum / n - gauss_sum / n;
  const double p = sal::sign_test_p(above, dataset.size());
  return {gap >= 0.05 && p < 0.01,
          "density " + fmt("%.4f", density_sum / n) + " vs centered gaussian " +
              fmt("%.4f", gauss_sum / n) + " (gap " + fmt("%.4f", gap) + "); VLM saliency beats uniform on " +
              std::to_string(above) + "/" + std::to_string(dataset.size()) + " images, sign test p = " +
              fmt("%.2e", p)};
}

// ---------------------------------------------------------------------------

int shell(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : -1);
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(io::read_file(e.path()))));
    out[fs::relative(e.path(), root).generic_string()] = buf;
  }
  return out;
}

Outcome end_to_end() {
  const std::string bin = NATSCAN_CLI_PATH;
  const fs::path data = testing::data_dir();
  const fs::path out = fs::path(NATSCAN_TEST_SCRATCH_DIR) / "acceptance-e2e";
  const std::string cfg = " --config " + (data / "pipeline.json").string() + " --cnn " +
                          (data / "toy_cnn.vlmw").string();
  const std::string o = out.string();
  const std::vector<std::string> steps = {
      "extract" + cfg + " --images " + (data / "corpus").string() + " --out " + o + "/features",
      "train-vlm --config " + (data / "pipeline.json").string() + " --features " + o +
          "/features --layer conv3 --out " + o + "/models/conv3.vlmm",
      "score" + cfg + " --model " + o + "/models/conv3.vlmm --image " +
          (data / "saliency/images/s00.png").string(),
      "saliency" + cfg + " --model " + o + "/models/conv3.vlmm --image " +
          (data / "saliency/images/s00.png").string() + " --out " + o + "/saliency/s00.png",
      "eval-auc" + cfg + " --model " + o + "/models/conv3.vlmm --dataset " +
          (data / "saliency").string() + " --out " + o + "/auc/report.csv",
      "reconstruct" + cfg + " --models " + o + "/models/conv3.vlmm --target-image " +
          (data / "corpus/img_005.png").string() + " --rgb-corpus " + (data / "corpus").string() +
          " --out " + o + "/reconstruct",
  };
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::map<std::string, std::string>> runs;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(out);
    fs::create_directories(out);
    for (const auto& s : steps) {
      const int rc = shell(bin + " " + s + " > " + o + "/stdout_" + s.substr(0, s.find(' ')) +
                           ".txt 2> /dev/null");
      if (rc != 0) return {false, "run " + std::to_string(run + 1) + ": '" + s + "' exited " + std::to_string(rc)};
    }
    runs.push_back(hash_tree(out));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t differing = 0;
  for (const auto& [file, h] : runs[0]) differing += !runs[1].contains(file) || runs[1].at(file) != h;
  differing += runs[1].size() > runs[0].size() ? runs[1].size() - runs[0].size() : 0;
  return {differing == 0 && secs < 600,
          std::to_string(runs[0].size()) + " files, " + std::to_string(differing) +
              " differ between runs; both runs took " + fmt("%.1f", secs) + " s (limit 600 s)"};
}

}  // namespace

int main() {
  // Library warnings (floored variances and the like) are not results.
  log::ScopedSink quiet([](std::string_view, std::string_view) {});
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_s;
  };
  const std::vector<Criterion> criteria = {
      {"gradient integrity", gradient_integrity, 120},
      {"formula oracles", formula_oracles, 60},
      {"lstm correctness", lstm_correctness, 0},
      {"preprocessing", preprocessing, 0},
      {"training progress", training_progress, 300},
      {"reconstruction", reconstruction, 180},
      {"shuffled auc trio", auc_trio, 0},
      {"discrimination", discrimination, 0},
      {"end-to-end reproducibility", end_to_end, 600},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (criteria[i].limit_s > 0 && secs >= criteria[i].limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", criteria[i].limit_s) + " s budget";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].name << ": "
              << o.detail << " (" << fmt("%.1f", secs) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
