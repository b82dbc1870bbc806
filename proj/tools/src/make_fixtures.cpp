// Generates the committed synthetic data set under <out>:
//   toy_cnn.vlmw                 32x32x3 CNN, taps conv2 and conv3
//   corpus/img_NNN.png           64 smooth synthetic images
//   saliency/images/sNN.png      16 smooth images, each with one textured patch
//   saliency/fixations/sNN.csv   fixations drawn from a known density
//   saliency/truth.json          parameters of that density per image
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "natscan/cnn.hpp"
#include "natscan/container.hpp"
#include "natscan/image_io.hpp"
#include "natscan/rng.hpp"
#include "natscan/saliency.hpp"

namespace fs = std::filesystem;
using natscan::Rng;
using natscan::Shape;
using natscan::Tensor;

namespace {

constexpr std::size_t kSize = 32;
constexpr std::uint64_t kSeed = 20161016;

natscan::cnn::CnnSpec toy_spec() {
  using natscan::cnn::LayerSpec;
  natscan::cnn::CnnSpec s;
  s.input_h = s.input_w = kSize;
  s.input_channels = 3;
  s.layers = {LayerSpec::conv("conv1", 8, 3, 3, 1, 1),  LayerSpec::relu("relu1"),
              LayerSpec::maxpool("pool1", 2, 2),        LayerSpec::conv("conv2", 16, 3, 3, 1, 1),
              LayerSpec::relu("relu2"),                 LayerSpec::maxpool("pool2", 2, 2),
              LayerSpec::conv("conv3", 16, 3, 3, 1, 1)};
  s.taps = {"conv2", "conv3"};
  return s;
}

/// Low-frequency color field: a few plane waves plus soft blobs.
Tensor<double> smooth_image(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<double> img(Shape{kSize, kSize, 3});
  double base[3], amp[3][3], fx[3], fy[3], ph[3];
  for (int c = 0; c < 3; ++c) base[c] = 60.0 + 120.0 * u(rng);
  for (int k = 0; k < 3; ++k) {
    const double f = 0.5 + 1.5 * u(rng);
    const double angle = 2.0 * std::numbers::pi * u(rng);
    fx[k] = f * std::cos(angle);
    fy[k] = f * std::sin(angle);
    ph[k] = 2.0 * std::numbers::pi * u(rng);
    for (int c = 0; c < 3; ++c) amp[k][c] = 40.0 * (u(rng) - 0.5);
  }
  struct Blob {
    double cx, cy, r, col[3];
  } blobs[2];
  for (auto& b : blobs) {
    b.cx = u(rng);
    b.cy = u(rng);
    b.r = 0.15 + 0.2 * u(rng);
    for (double& c : b.col) c = 60.0 * (u(rng) - 0.5);
  }
  for (std::size_t y = 0; y < kSize; ++y) {
    for (std::size_t x = 0; x < kSize; ++x) {
      const double px = (x + 0.5) / kSize, py = (y + 0.5) / kSize;
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (int k = 0; k < 3; ++k) {
          v += amp[k][c] * std::sin(2.0 * std::numbers::pi * (fx[k] * px + fy[k] * py) + ph[k]);
        }
        for (const auto& b : blobs) {
          const double d2 = (px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy);
          v += b.col[c] * std::exp(-d2 / (2.0 * b.r * b.r));
        }
        img(y, x, static_cast<std::size_t>(c)) = std::clamp(v, 0.0, 255.0);
      }
    }
  }
  return img;
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <out-dir>\n";
    return 1;
  }
  const fs::path out = argv[1];
  fs::create_directories(out / "corpus");
  fs::create_directories(out / "saliency" / "images");
  fs::create_directories(out / "saliency" / "fixations");

  const auto net = natscan::cnn::make_random_model<double>(toy_spec(), kSeed);
  natscan::cnn::save_model(out / "toy_cnn.vlmw", net);

  Rng corpus_rng = natscan::make_rng(kSeed, "fixtures.corpus");
  for (std::size_t i = 0; i < 64; ++i) {
    natscan::io::write_png_rgb8(out / "corpus" / (numbered("img_", i, 3) + ".png"),
                                smooth_image(corpus_rng));
  }

  // Each saliency image carries one 8x8 patch of high-contrast noise away
  // from the center. Fixations: 70% around the patch, 30% from a central
  // Gaussian shared by all images.
  constexpr std::size_t kPatch = 8, kFixations = 30;
  constexpr double kPatchSigma = 0.06, kCenterSigma = 0.2, kPatchWeight = 0.7;
  Rng sal_rng = natscan::make_rng(kSeed, "fixtures.saliency");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  nlohmann::json truth = {{"patch_sigma", kPatchSigma},
                          {"center_sigma", kCenterSigma},
                          {"patch_weight", kPatchWeight},
                          {"images", nlohmann::json::object()}};
  for (std::size_t i = 0; i < 16; ++i) {
    const std::string id = numbered("s", i, 2);
    auto img = smooth_image(sal_rng);
    // Patch centers lie on a ring around the image center.
    const double angle = 2.0 * std::numbers::pi * (i + u(sal_rng)) / 16.0;
    const double radius = 0.25 + 0.05 * u(sal_rng);
    const double cx = 0.5 + radius * std::cos(angle), cy = 0.5 + radius * std::sin(angle);
    const auto x0 = static_cast<std::size_t>(std::clamp(cx * kSize - kPatch / 2.0, 0.0, double(kSize - kPatch)));
    const auto y0 = static_cast<std::size_t>(std::clamp(cy * kSize - kPatch / 2.0, 0.0, double(kSize - kPatch)));
    for (std::size_t y = y0; y < y0 + kPatch; ++y)
      for (std::size_t x = x0; x < x0 + kPatch; ++x)
        for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = u(sal_rng) < 0.5 ? 0.0 : 255.0;
    natscan::io::write_png_rgb8(out / "saliency" / "images" / (id + ".png"), img);

    const double pcx = (x0 + kPatch / 2.0) / kSize, pcy = (y0 + kPatch / 2.0) / kSize;
    natscan::sal::FixationSet fix{id, {}};
    while (fix.points.size() < kFixations) {
      const bool on_patch = u(sal_rng) < kPatchWeight;
      const double s = on_patch ? kPatchSigma : kCenterSigma;
      const double mx = on_patch ? pcx : 0.5, my = on_patch ? pcy : 0.5;
      const double x = mx + s * n01(sal_rng), y = my + s * n01(sal_rng);
      if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) continue;
      fix.points.push_back({x, y});
    }
    natscan::sal::write_fixations(out / "saliency" / "fixations" / (id + ".csv"), fix);
    truth["images"][id] = {{"patch_center", {pcx, pcy}}};
  }
  natscan::io::write_file(out / "saliency" / "truth.json", truth.dump(2) + "\n");
  std::cout << "wrote fixtures to " << out.string() << '\n';
  return 0;
}
