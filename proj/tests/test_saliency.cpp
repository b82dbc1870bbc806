#include <doctest/doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "natscan/error.hpp"
#include "natscan/image_io.hpp"
#include "natscan/saliency.hpp"
#include "support.hpp"

using namespace natscan;
using sal::Point;
using testing::random;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

double mean_of(const Tensor<double>& t) { return sum(t) / double(t.size()); }

std::vector<Point> clipped_normal(std::size_t n, double cx, double cy, double s, Rng& rng) {
  std::normal_distribution<double> nx(cx, s), ny(cy, s);
  std::vector<Point> out;
  while (out.size() < n) {
    const Point p{nx(rng), ny(rng)};
    if (p.x >= 0 && p.x <= 1 && p.y >= 0 && p.y <= 1) out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("gaussian kernel") {
  CHECK(sal::gaussian_kernel(0) == std::vector<double>{1.0});
  auto k = sal::gaussian_kernel(1.2);
  CHECK(k.size() == 2 * 4 + 1);
  double s = 0;
  for (double v : k) s += v;
  CHECK(std::abs(s - 1) < 1e-15);
  for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] == k[k.size() - 1 - i]);
  CHECK_THROWS_AS(sal::gaussian_kernel(-1), UsageError);
}

TEST_CASE("blur: identity at zero sigma, constant stays constant, mean preserved") {
  Rng rng = make_rng(1, "blur");
  auto m = random({13, 17}, rng);
  CHECK(sal::gaussian_blur(m, 0.0) == m);

  auto c = sal::gaussian_blur(Tensor<double>(Shape{9, 11}, 3.25), 2.0);
  for (double v : c.data()) CHECK(std::abs(v - 3.25) < 1e-14);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r2 = make_rng(seed, "blur-mean");
    auto x = random({testing::pick(r2, 3, 30), testing::pick(r2, 3, 30)}, r2, 0, 1);
    const double sigma = std::uniform_real_distribution<double>(0.3, 4.0)(r2);
    CHECK(std::abs(mean_of(sal::gaussian_blur(x, sigma)) - mean_of(x)) < 1e-8);
  }
  CHECK_THROWS_AS(sal::gaussian_blur(Tensor<double>(Shape{2, 2, 2}), 1.0), ShapeError);
}

TEST_CASE("blur of a centered delta matches direct 2-D kernel evaluation") {
  Tensor<double> d(Shape{33, 33});
  d(16, 16) = 1.0;
  const double sigma = 2.0;
  auto out = sal::gaussian_blur(d, sigma);
  const int r = 6;
  double z = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) z += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  for (int y = 0; y < 33; ++y)
    for (int x = 0; x < 33; ++x) {
      const int dy = y - 16, dx = x - 16;
      const double want =
          std::abs(dy) <= r && std::abs(dx) <= r ? std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / z : 0.0;
      CHECK(std::abs(out(std::size_t(y), std::size_t(x)) - want) < 1e-8);
    }
}

TEST_CASE("bilinear resize") {
  Rng rng = make_rng(2, "resize");
  auto m = random({5, 7}, rng);
  CHECK(sal::resize_bilinear(m, 5, 7) == m);
  auto c = sal::resize_bilinear(Tensor<double>(Shape{3, 4}, 2.5), 10, 9);
  for (double v : c.data()) CHECK(std::abs(v - 2.5) < 1e-15);
  // Doubling a 1x2 ramp with half-pixel centers.
  auto up = sal::resize_bilinear(Tensor<double>({1, 2}, {0.0, 1.0}), 1, 4);
  CHECK(up == Tensor<double>({1, 4}, {0.0, 0.25, 0.75, 1.0}));
  CHECK_THROWS_AS(sal::resize_bilinear(m, 0, 3), ShapeError);
}

TEST_CASE("saliency_from_map") {
  auto zero = sal::saliency_from_map(Tensor<double>::zeros({4, 4}), 12, 12, 0.1);
  for (double v : zero.data()) CHECK(v == 0.0);

  auto two = sal::saliency_from_map(Tensor<double>(Shape{3, 5}, 4.0), 6, 10, 0.0);
  CHECK(two.shape() == Shape{6, 10});
  for (double v : two.data()) CHECK(v == 2.0);

  // Impulse: sqrt, identity resize, then a Gaussian centered on the impulse.
  Tensor<double> u(Shape{21, 21});
  u(10, 10) = 9.0;
  const double sigma_rel = 0.1;
  auto s = sal::saliency_from_map(u, 21, 21, sigma_rel);
  CHECK(std::abs(sum(s) - 3.0) < 1e-6);
  auto k = sal::gaussian_kernel(sigma_rel * 21);
  const std::size_t r = k.size() / 2;
  for (std::size_t y = 10 - r; y <= 10 + r; ++y)
    for (std::size_t x = 10 - r; x <= 10 + r; ++x)
      CHECK(std::abs(s(y, x) - 3.0 * k[y + r - 10] * k[x + r - 10]) < 1e-12);

  CHECK_THROWS_AS(sal::saliency_from_map(u, 5, 5, -1), UsageError);
  auto bad = u;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(sal::saliency_from_map(bad, 5, 5, 0.1), NumericError);
}

TEST_CASE("nearest-pixel sampling") {
  auto m = Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sal::sample_nearest(m, {0, 0}) == 1);
  CHECK(sal::sample_nearest(m, {1, 1}) == 6);
  CHECK(sal::sample_nearest(m, {0.34, 0.49}) == 2);
  CHECK(sal::sample_nearest(m, {0.67, 0.5}) == 6);
}

TEST_CASE("AUC trio and exact sweep") {
  std::vector<double> hi{5, 6, 7}, lo{1, 2, 3, 4};
  CHECK(sal::rank_auc(hi, lo) == 1.0);
  CHECK(sal::rank_auc(lo, hi) == 0.0);
  CHECK(sal::rank_auc(hi, hi) == 0.5);
  std::vector<double> same{2, 2, 2};
  CHECK(sal::rank_auc(same, std::vector<double>{2, 2}) == 0.5);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = make_rng(seed, "auc");
    const auto np = testing::pick(rng, 1, 100), nn = testing::pick(rng, 1, 100);
    std::uniform_int_distribution<int> level(0, 6);  // coarse levels force ties
    std::vector<double> p(np), n(nn);
    for (auto& v : p) v = level(rng) * 0.5;
    for (auto& v : n) v = level(rng) * 0.5;
    std::size_t twice = 0;
    for (double a : p)
      for (double b : n) twice += a > b ? 2 : a == b ? 1 : 0;
    const double brute = double(twice) / (2.0 * double(np * nn));
    CHECK(sal::rank_auc(p, n) == brute);
    CHECK(sal::pairwise_auc(p, n) == brute);
  }
  std::vector<double> none;
  CHECK_THROWS_AS(sal::rank_auc(none, lo), DataError);
}

TEST_CASE("shuffled AUC is a rank statistic") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, "monotone");
    auto m = random({12, 16}, rng, 0, 1);
    auto pos = clipped_normal(40, 0.4, 0.6, 0.2, rng);
    auto neg = clipped_normal(60, 0.5, 0.5, 0.25, rng);
    const double base = sal::shuffled_auc(m, pos, neg);
    auto g = m;
    for (auto& v : g.data()) v = std::exp(3 * v) + 7;
    CHECK(sal::shuffled_auc(g, pos, neg) == base);
    auto complement = m;
    const double top = max_abs(m);
    for (auto& v : complement.data()) v = top - v;
    CHECK(std::abs(sal::shuffled_auc(complement, pos, neg) + base - 1.0) < 1e-12);
  }
  auto m = Tensor<double>::zeros({2, 2});
  std::vector<Point> none, one{{0.5, 0.5}};
  CHECK_THROWS_AS(sal::shuffled_auc(m, none, one), DataError);
  CHECK_THROWS_AS(sal::shuffled_auc(m, one, none), DataError);
}

TEST_CASE("centered Gaussian scores about 0.5 against center-biased negatives") {
  std::map<std::string, sal::FixationSet> all;
  Rng rng = make_rng(3, "center");
  for (int i = 0; i < 16; ++i) {
    const std::string id = "img" + std::to_string(10 + i);
    all[id] = {id, clipped_normal(80, 0.5, 0.5, 0.18, rng)};
  }
  auto g = sal::centered_gaussian(48, 64, 0.2);
  double total = 0;
  for (const auto& [id, set] : all) {
    auto neg = sal::build_negative_set(all, id, sal::kDefaultNegativeCap, 0);
    total += sal::shuffled_auc(g, set.points, neg.points);
  }
  CHECK(std::abs(total / 16 - 0.5) < 0.05);
}

TEST_CASE("fixation density beats the centered Gaussian") {
  std::map<std::string, sal::FixationSet> all;
  Rng rng = make_rng(4, "density");
  std::uniform_real_distribution<double> where(0.15, 0.85);
  for (int i = 0; i < 16; ++i) {
    const std::string id = "img" + std::to_string(10 + i);
    auto pts = clipped_normal(40, 0.5, 0.5, 0.18, rng);
    auto blob = clipped_normal(60, where(rng), where(rng), 0.05, rng);
    pts.insert(pts.end(), blob.begin(), blob.end());
    all[id] = {id, pts};
  }
  auto g = sal::centered_gaussian(48, 64, 0.2);
  double dens = 0, base = 0;
  for (const auto& [id, set] : all) {
    auto neg = sal::build_negative_set(all, id, sal::kDefaultNegativeCap, 0);
    dens += sal::shuffled_auc(sal::fixation_density(set.points, 48, 64, 2.0), set.points, neg.points);
    base += sal::shuffled_auc(g, set.points, neg.points);
  }
  CHECK(dens / 16 > base / 16 + 0.05);
}

TEST_CASE("negative sets") {
  std::map<std::string, sal::FixationSet> two{{"a", {"a", {{0.1, 0.2}, {0.3, 0.4}}}},
                                              {"b", {"b", {{0.5, 0.6}}}}};
  CHECK(sal::build_negative_set(two, "a", 10, 0).points == two["b"].points);
  CHECK(sal::build_negative_set(two, "b", 10, 0).points == two["a"].points);
  CHECK_THROWS_AS(sal::build_negative_set({{"a", two["a"]}}, "a", 10, 0), DataError);

  std::map<std::string, sal::FixationSet> many;
  Rng rng = make_rng(5, "pool");
  for (int i = 0; i < 5; ++i) {
    const std::string id = std::string(1, char('a' + i));
    many[id] = {id, clipped_normal(25, 0.5, 0.5, 0.3, rng)};
  }
  auto full = sal::build_negative_set(many, "a", 100, 0);
  REQUIRE(full.points.size() == 100);
  CHECK(full.points.front() == many["b"].points.front());
  CHECK(full.points.back() == many["e"].points.back());

  auto s1 = sal::build_negative_set(many, "a", 30, 7);
  auto s2 = sal::build_negative_set(many, "a", 30, 7);
  auto s3 = sal::build_negative_set(many, "a", 30, 8);
  CHECK(s1.points.size() == 30);
  CHECK(s1.points == s2.points);
  CHECK(s1.points != s3.points);
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : s1.points) distinct.insert({p.x, p.y});
  CHECK(distinct.size() == 30);
}

TEST_CASE("sign test") {
  CHECK(sal::sign_test_p(0, 16) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sal::sign_test_p(16, 16) == doctest::Approx(1.0 / 65536).epsilon(1e-12));
  CHECK(sal::sign_test_p(12, 16) == doctest::Approx(2517.0 / 65536).epsilon(1e-12));
  CHECK(sal::sign_test_p(13, 16) < 0.05);
  CHECK_THROWS_AS(sal::sign_test_p(3, 2), UsageError);
}

TEST_CASE("fixation files") {
  auto dir = testing::scratch_dir("fixations");
  sal::FixationSet s{"img", {{0, 1}, {0.25, 0.125}, {1.0 / 3, 0.7}}};
  sal::write_fixations(dir / "ok.csv", s);
  CHECK(slurp(dir / "ok.csv").rfind("x,y\n", 0) == 0);
  auto back = sal::read_fixations(dir / "ok.csv", "img");
  CHECK(back.points == s.points);
  CHECK(back.image_id == "img");

  spit(dir / "empty_ok.csv", "x,y\n");
  CHECK(sal::read_fixations(dir / "empty_ok.csv", "e").points.empty());
  for (const char* bad : {"", "y,x\n0,0\n", "x,y\n0.5\n", "x,y\n0.5,abc\n", "x,y\n1.5,0.5\n",
                          "x,y\n-0.1,0.5\n", "x,y\n0.5,0.5 \n"}) {
    spit(dir / "bad.csv", bad);
    INFO(bad);
    CHECK_THROWS_AS(sal::read_fixations(dir / "bad.csv", "b"), DataError);
  }
  CHECK_THROWS_AS(sal::read_fixations(dir / "missing.csv", "m"), DataError);
}

TEST_CASE("dataset loading and AUC report") {
  auto root = testing::scratch_dir("dataset");
  std::filesystem::create_directories(root / "images");
  for (const char* id : {"b", "a"}) {
    io::write_png_rgb8(root / "images" / (std::string(id) + ".png"), Tensor<double>(Shape{4, 4, 3}, 0.5));
    sal::write_fixations(root / "fixations" / (std::string(id) + ".csv"), {id, {{0.5, 0.5}}});
  }
  auto ds = sal::load_dataset(root);
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].id == "a");
  CHECK(ds[1].fixations.points.size() == 1);
  std::filesystem::remove(root / "fixations" / "a.csv");
  CHECK_THROWS_AS(sal::load_dataset(root), DataError);
  CHECK_THROWS_AS(sal::load_dataset(root / "nowhere"), DataError);

  std::vector<std::pair<std::string, double>> rows{{"a", 0.75}, {"b", 0.5}};
  sal::write_auc_report(root / "auc.csv", rows);
  CHECK(slurp(root / "auc.csv") == "image_id,shuffled_auc\na,0.7500000000\nb,0.5000000000\nmean,0.6250000000\n");
}
