#include <doctest/doctest.h>

#include <cmath>
#include <fstream>

#include "natscan/container.hpp"
#include "natscan/error.hpp"
#include "natscan/gradcheck.hpp"
#include "natscan/rng.hpp"
#include "natscan/tensor.hpp"
#include "support.hpp"

using namespace natscan;
using testing::random;

namespace {

Tensor<double> triple_loop(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

}  // namespace

TEST_CASE("tensor construction checks sizes") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>(Shape{}), ShapeError);
  Tensor<double> t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t(1, 2) == 1.5);
}

TEST_CASE("elementwise ops reject mismatched shapes instead of broadcasting") {
  Tensor<double> a(Shape{2, 3}), b(Shape{3, 2}), c(Shape{3});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, c), ShapeError);
  CHECK_THROWS_AS(sub(c, a), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul with the identity returns the other operand") {
  Rng rng = make_rng(1, "test");
  auto a = random({4, 4}, rng);
  CHECK(matmul(Tensor<double>::identity(4), a) == a);
  CHECK(matmul(a, Tensor<double>::identity(4)) == a);
}

TEST_CASE("sigmoid and tanh at zero") {
  auto z = Tensor<double>::zeros({3});
  CHECK(sigmoid(z)[0] == 0.5);
  CHECK(tanh(z)[1] == 0.0);
}

TEST_CASE("matmul equals the triple-loop reference") {
  Rng rng = make_rng(2, "test");
  auto a = random({5, 4}, rng);
  auto b = random({4, 3}, rng);
  CHECK(matmul(a, b) == triple_loop(a, b));
  for (int c = 0; c < 30; ++c) {
    const auto m = testing::pick(rng, 1, 32), k = testing::pick(rng, 1, 32),
               n = testing::pick(rng, 1, 32);
    auto x = random({m, k}, rng, -10, 10);
    auto y = random({k, n}, rng, -10, 10);
    auto got = matmul(x, y);
    auto want = triple_loop(x, y);
    for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(testing::ulp_distance(got[i], want[i]) <= 8);
  }
}

TEST_CASE("tensor ops are deterministic") {
  Rng r1 = make_rng(3, "test"), r2 = make_rng(3, "test");
  auto a1 = random({7, 9}, r1), a2 = random({7, 9}, r2);
  CHECK(a1 == a2);
  auto b = matmul(a1, transpose(a1));
  auto c = matmul(a2, transpose(a2));
  CHECK(std::memcmp(b.data().data(), c.data().data(), b.size() * sizeof(double)) == 0);
}

TEST_CASE("finite_diff_grad on simple functions") {
  std::function<double(const Tensor<double>&)> f_sum = [](const Tensor<double>& x) { return sum(x); };
  Rng rng = make_rng(4, "test");
  auto x = random({6}, rng);
  auto g = finite_diff_grad(f_sum, x, 1e-5);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(1.0).epsilon(1e-9));

  std::function<double(const Tensor<double>&)> f_sq = [](const Tensor<double>& v) {
    return squared_norm(v);
  };
  auto g2 = finite_diff_grad(f_sq, Tensor<double>::vector({3, 4}), 1e-5);
  CHECK(std::abs(g2[0] - 6) < 1e-6);
  CHECK(std::abs(g2[1] - 8) < 1e-6);
}

TEST_CASE("finite_diff_grad names the component that produced a non-finite value") {
  std::function<double(const Tensor<double>&)> f = [](const Tensor<double>& v) {
    return v[2] > 0.5 ? std::log(-1.0) : sum(v);
  };
  try {
    (void)finite_diff_grad(f, Tensor<double>::vector({0, 0, 0.5}), 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("component 2") != std::string::npos);
  }
}

TEST_CASE("check_gradient tolerance rule") {
  auto a = Tensor<double>::vector({1.0, 2.0, -3.0});
  CHECK(check_gradient(a, a, 1e-12, 0.0).passed);
  CHECK_FALSE(check_gradient(Tensor<double>::vector({1.0}), Tensor<double>::vector({1.5}), 0.1, 0.0).passed);
  CHECK(check_gradient(Tensor<double>::vector({0.0}), Tensor<double>::vector({1e-9}), 0.0, 1e-6).passed);
  auto r = check_gradient(Tensor<double>::vector({1, 2, 3, 4}), Tensor<double>::vector({1, 2.5, 3, 9}), 0.01, 0.0);
  CHECK(r.failures == 2);
  REQUIRE(r.worst.size() == 2);
  CHECK(r.worst[0].index == 3);
  CHECK_THROWS_AS(check_gradient(Tensor<double>::vector({1}), Tensor<double>::vector({1, 2}), 0.1, 0.0),
                  ShapeError);
}

TEST_CASE("named rng streams are independent of each other") {
  CHECK(stream_seed(7, "a") == stream_seed(7, "a"));
  CHECK(stream_seed(7, "a") != stream_seed(7, "b"));
  CHECK(stream_seed(7, "a") != stream_seed(8, "a"));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("container round-trip is bit exact") {
  Rng rng = make_rng(5, "test");
  io::Container c{std::string(io::kTensorMagic)};
  c.meta()["note"] = "hello";
  auto a = random({3, 5}, rng);
  auto b = natscan::uniform_tensor<float>({7}, -1.f, 1.f, rng);
  c.put("a", a);
  c.put("b", b);
  auto bytes = io::serialize(c);
  auto back = io::deserialize(bytes, io::kTensorMagic);
  CHECK(back.magic() == io::kTensorMagic);
  CHECK(back.meta()["note"] == "hello");
  CHECK(back.template get<double>("a") == a);
  CHECK(back.template get<float>("b") == b);
  CHECK(back.at("b").dtype == io::DType::kF32);
}

TEST_CASE("container payload offsets are 8-byte aligned") {
  io::Container c{std::string(io::kTensorMagic)};
  c.put("x", Tensor<float>(Shape{3}, 1.f));
  c.put("y", Tensor<double>(Shape{2}, 2.0));
  auto bytes = io::serialize(c);
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 4);
  CHECK((12 + n) % 8 == 0);
  auto header = nlohmann::json::parse(std::string(bytes.begin() + 12, bytes.begin() + 12 + n));
  for (const auto& t : header["tensors"]) CHECK(t["offset"].get<std::size_t>() % 8 == 0);
}

TEST_CASE("container errors are distinct") {
  io::Container c{std::string(io::kTensorMagic)};
  c.put("x", Tensor<double>(Shape{4}, 1.0));
  auto bytes = io::serialize(c);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(io::deserialize(bad, io::kTensorMagic), BadMagicError);

  auto cut = bytes;
  cut.resize(cut.size() - 5);
  try {
    (void)io::deserialize(cut, io::kTensorMagic);
    FAIL("expected TruncatedFileError");
  } catch (const TruncatedFileError& e) {
    CHECK(e.expected_bytes() == e.actual_bytes() + 5);
    CHECK(std::string(e.what()).find("expected") != std::string::npos);
  }

  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 4);
  std::string header(bytes.begin() + 12, bytes.begin() + 12 + n);
  const auto pos = header.find("\"f64\"");
  REQUIRE(pos != std::string::npos);
  auto unk = bytes;
  std::memcpy(unk.data() + 12 + pos, "\"q64\"", 5);
  CHECK_THROWS_AS(io::deserialize(unk, io::kTensorMagic), FormatError);

  CHECK_THROWS_AS((void)c.get<double>("missing"), DataError);
}
