#include <doctest/doctest.h>

#include <cmath>

#include "natscan/cnn.hpp"
#include "natscan/error.hpp"
#include "natscan/gradcheck.hpp"
#include "support.hpp"

using namespace natscan;
using cnn::CnnSpec;
using cnn::LayerSpec;
using testing::random;

namespace {

CnnSpec two_conv(std::size_t h = 16, std::size_t w = 16) {
  CnnSpec s;
  s.input_h = h;
  s.input_w = w;
  s.layers = {LayerSpec::conv("conv1", 4, 3, 3, 1, 1), LayerSpec::relu(),
              LayerSpec::maxpool("pool1", 2, 2), LayerSpec::conv("conv2", 5, 3, 3, 1, 0)};
  s.taps = {"conv1", "conv2"};
  return s;
}

CnnSpec alexnet_shaped() {
  CnnSpec s;
  s.input_h = s.input_w = 227;
  s.layers = {LayerSpec::conv("conv1", 96, 11, 11, 4, 0), LayerSpec::relu(),
              LayerSpec::maxpool("pool1", 3, 2),           LayerSpec::conv("conv2", 256, 5, 5, 1, 2),
              LayerSpec::relu(),                           LayerSpec::maxpool("pool2", 3, 2),
              LayerSpec::conv("conv3", 384, 3, 3, 1, 1),   LayerSpec::relu(),
              LayerSpec::conv("conv4", 384, 3, 3, 1, 1),   LayerSpec::relu(),
              LayerSpec::conv("conv5", 256, 3, 3, 1, 1)};
  s.taps = {"conv1", "conv2", "conv3", "conv4", "conv5"};
  return s;
}

double tap_functional(const cnn::CnnModel<double>& m, const Tensor<double>& img,
                      const cnn::TapOutputs<double>& cot) {
  auto taps = cnn::forward(m, img);
  double acc = 0;
  for (const auto& [name, c] : cot) acc += dot(c, taps.at(name));
  return acc;
}

}  // namespace

TEST_CASE("spec validation") {
  auto s = two_conv();
  CHECK_NOTHROW(cnn::validate(s));
  auto bad = s;
  bad.taps = {"pool1"};
  CHECK_THROWS_AS(cnn::validate(bad), UsageError);
  bad.taps = {"nope"};
  CHECK_THROWS_AS(cnn::validate(bad), UsageError);
  bad = s;
  bad.input_h = bad.input_w = 3;
  CHECK_THROWS_AS(cnn::validate(bad), UsageError);
}

TEST_CASE("output sizes follow the closed form, including AlexNet geometry") {
  auto shapes = cnn::tap_shapes(alexnet_shaped());
  CHECK(shapes.at("conv1") == Shape{55, 55, 96});
  CHECK(shapes.at("conv2") == Shape{27, 27, 256});
  CHECK(shapes.at("conv5") == Shape{13, 13, 256});
  auto t = cnn::tap_shapes(two_conv());
  CHECK(t.at("conv1") == Shape{16, 16, 4});
  CHECK(t.at("conv2") == Shape{6, 6, 5});
}

TEST_CASE("identity 1x1 kernel reproduces its input") {
  CnnSpec s;
  s.input_h = 5;
  s.input_w = 4;
  s.layers = {LayerSpec::conv("c", 3, 1, 1)};
  s.taps = {"c"};
  auto m = cnn::make_random_model<double>(s, 1);
  m.weights["c"] = Tensor<double>::zeros({3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) m.weights["c"](i, i, 0, 0) = 1.0;
  Rng rng = make_rng(1, "img");
  auto img = random({5, 4, 3}, rng);
  CHECK(cnn::forward(m, img).at("c") == img);

  auto g = random({5, 4, 3}, rng);
  CHECK(cnn::input_gradient(m, img, {{"c", g}}) == g);
  CHECK(cnn::input_gradient(m, img, {{"c", Tensor<double>::zeros({5, 4, 3})}}) ==
        Tensor<double>::zeros({5, 4, 3}));
}

TEST_CASE("sum filter on a constant image gives 9 c C in the valid region") {
  CnnSpec s;
  s.input_h = s.input_w = 6;
  s.layers = {LayerSpec::conv("c", 2, 3, 3)};
  s.taps = {"c"};
  auto m = cnn::make_random_model<double>(s, 2);
  m.weights["c"] = Tensor<double>::ones({2, 3, 3, 3});
  auto out = cnn::forward(m, Tensor<double>(Shape{6, 6, 3}, 1.5)).at("c");
  CHECK(out.shape() == Shape{4, 4, 2});
  for (double v : out.data()) CHECK(v == 9 * 1.5 * 3);
}

TEST_CASE("conv-only networks are linear in the image") {
  CnnSpec s;
  s.input_h = s.input_w = 9;
  s.layers = {LayerSpec::conv("c1", 4, 3, 3, 1, 1), LayerSpec::conv("c2", 3, 3, 3, 2, 0)};
  s.taps = {"c1", "c2"};
  auto m = cnn::make_random_model<double>(s, 3);
  for (auto& [_, b] : m.biases) b = Tensor<double>::zeros(b.shape());
  Rng rng = make_rng(3, "img");
  auto x = random({9, 9, 3}, rng), y = random({9, 9, 3}, rng);
  const double a = 0.7, b = -1.3;
  auto lhs = cnn::forward(m, add(scale(x, a), scale(y, b)));
  auto fx = cnn::forward(m, x), fy = cnn::forward(m, y);
  for (const auto& name : s.taps) {
    auto rhs = add(scale(fx.at(name), a), scale(fy.at(name), b));
    CHECK(testing::max_abs_diff(lhs.at(name), rhs) < 1e-10);
  }
}

TEST_CASE("post-ReLU taps are nonnegative, pre-ReLU taps are not") {
  auto s = two_conv();
  auto m = cnn::make_random_model<double>(s, 4);
  Rng rng = make_rng(4, "img");
  auto img = random({16, 16, 3}, rng);
  auto pre = cnn::forward(m, img).at("conv1");
  s.post_relu_taps = true;
  m.spec = s;
  auto post = cnn::forward(m, img).at("conv1");
  CHECK(post == relu(pre));
  double lo = 0;
  for (double v : pre.data()) lo = std::min(lo, v);
  CHECK(lo < 0);
}

TEST_CASE("input_gradient matches finite differences on random toy models") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, "cnn-grad");
    CnnSpec s;
    s.input_h = testing::pick(rng, 6, 9);
    s.input_w = testing::pick(rng, 6, 9);
    s.layers = {LayerSpec::conv("c1", testing::pick(rng, 2, 4), 3, 3, 1, testing::pick(rng, 0, 1)),
                LayerSpec::relu(), LayerSpec::maxpool("p", 2, 1),
                LayerSpec::conv("c2", testing::pick(rng, 2, 4), 2, 2, 1, 0)};
    s.taps = {"c1", "c2"};
    if (seed % 4 == 0) {
      s.layers.push_back(LayerSpec::linear("fc", 3));
      s.taps.push_back("fc");
    }
    auto m = cnn::make_random_model<double>(s, seed);
    auto img = random({s.input_h, s.input_w, 3}, rng);
    cnn::TapOutputs<double> cot;
    for (const auto& [name, shape] : cnn::tap_shapes(s)) cot[name] = random(shape, rng);
    auto analytic = cnn::input_gradient(m, img, cot);
    std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& x) {
      return tap_functional(m, x, cot);
    };
    auto numeric = finite_diff_grad(f, img, 1e-5);
    auto report = check_gradient(analytic, numeric, 1e-4, 1e-8);
    INFO("seed " << seed << ": " << report.summary());
    CHECK(report.passed);
  }
}

TEST_CASE("input_gradient rejects unknown taps and mismatched cotangents") {
  auto s = two_conv();
  auto m = cnn::make_random_model<double>(s, 5);
  Tensor<double> img(Shape{16, 16, 3});
  CHECK_THROWS_AS(cnn::input_gradient(m, img, {{"nope", Tensor<double>(Shape{1})}}), UsageError);
  CHECK_THROWS_AS(cnn::input_gradient(m, img, {{"conv2", Tensor<double>(Shape{2, 2, 5})}}), ShapeError);
  CHECK_THROWS_AS(cnn::forward(m, Tensor<double>(Shape{15, 16, 3})), ShapeError);
}

TEST_CASE("model save and load round-trips bit for bit") {
  auto s = two_conv();
  s.layers.push_back(LayerSpec::linear("fc", 7));
  s.taps.push_back("fc");
  auto m = cnn::make_random_model<double>(s, 6);
  auto path = testing::scratch_dir("cnn_roundtrip") / "m.vlmw";
  cnn::save_model(path, m);
  auto back = cnn::load_model<double>(path);
  CHECK(back.spec.taps == s.taps);
  for (const auto& [name, w] : m.weights) CHECK(back.weights.at(name) == w);
  for (const auto& [name, b] : m.biases) CHECK(back.biases.at(name) == b);
}

TEST_CASE("loader errors are distinct") {
  auto s = two_conv();
  auto m = cnn::make_random_model<double>(s, 7);
  auto dir = testing::scratch_dir("cnn_errors");

  auto c = cnn::to_container(m);
  io::Container wrong{std::string(io::kVlmMagic)};
  wrong.meta() = c.meta();
  io::write_container(dir / "magic.vlmw", wrong);
  CHECK_THROWS_AS(cnn::load_model<double>(dir / "magic.vlmw"), BadMagicError);

  auto bytes = io::serialize(c);
  io::write_file(dir / "trunc.vlmw", std::string_view(bytes).substr(0, bytes.size() - 16));
  try {
    (void)cnn::load_model<double>(dir / "trunc.vlmw");
    FAIL("expected truncation error");
  } catch (const TruncatedFileError& e) {
    const std::string what = e.what();
    CHECK(what.find(std::to_string(e.expected_bytes())) != std::string::npos);
    CHECK(what.find(std::to_string(e.actual_bytes())) != std::string::npos);
  }

  io::write_container(dir / "shape.vlmw", [&] {
    io::Container x{std::string(io::kCnnMagic)};
    x.meta() = c.meta();
    for (const auto& t : c.tensors()) x.put_stored(t);
    io::StoredTensor st{"conv2.weight", io::DType::kF64, Shape{5, 4, 2, 2},
                        std::vector<double>(5 * 4 * 2 * 2)};
    x.put_stored(st);
    return x;
  }());
  CHECK_THROWS_AS(cnn::load_model<double>(dir / "shape.vlmw"), ShapeError);

  auto nan_model = m;
  nan_model.weights["conv1"][0] = std::nan("");
  CHECK_THROWS_AS(cnn::validate(nan_model), NumericError);
}
