#include "natscan/saliency.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "natscan/error.hpp"
#include "natscan/image_io.hpp"
#include "natscan/rng.hpp"

namespace natscan::sal {

namespace {

void require_map(const Tensor<double>& m, const char* what) {
  if (m.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected a 2-D map, got " + shape_string(m.shape()));
  }
}

// Half-sample symmetric reflection into [0, n).
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma_px) {
  if (!(sigma_px >= 0.0) || !std::isfinite(sigma_px)) throw UsageError("sigma must be >= 0");
  if (sigma_px == 0.0) return {1.0};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma_px));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * double(i * i) / (sigma_px * sigma_px));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

Tensor<double> gaussian_blur(const Tensor<double>& map, double sigma_px) {
  require_map(map, "gaussian_blur");
  const std::vector<double> k = gaussian_kernel(sigma_px);
  if (k.size() == 1) return map;
  const std::size_t h = map.dim(0), w = map.dim(1);
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  Tensor<double> tmp(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
        acc += k[static_cast<std::size_t>(o + radius)] *
               map(y, reflect(static_cast<std::ptrdiff_t>(x) + o, w));
      }
      tmp(y, x) = acc;
    }
  Tensor<double> out(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
        acc += k[static_cast<std::size_t>(o + radius)] *
               tmp(reflect(static_cast<std::ptrdiff_t>(y) + o, h), x);
      }
      out(y, x) = acc;
    }
  return out;
}

Tensor<double> resize_bilinear(const Tensor<double>& map, std::size_t out_h, std::size_t out_w) {
  require_map(map, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: output size must be positive");
  const std::size_t h = map.dim(0), w = map.dim(1);
  auto axis = [](std::size_t dst, std::size_t in, std::size_t out) {
    double src = (double(dst) + 0.5) * double(in) / double(out) - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, src - double(i0)};
  };
  Tensor<double> out(Shape{out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(y, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(x, w, out_w);
      const double top = map(y0, x0) * (1 - fx) + map(y0, x1) * fx;
      const double bottom = map(y1, x0) * (1 - fx) + map(y1, x1) * fx;
      out(y, x) = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

Tensor<double> saliency_from_map(const Tensor<double>& u, std::size_t out_h, std::size_t out_w,
                                 double sigma_rel) {
  require_map(u, "saliency_from_map");
  if (!(sigma_rel >= 0.0)) throw UsageError("sigma must be >= 0");
  if (!all_finite(u)) throw NumericError("saliency_from_map: map is not finite");
  return gaussian_blur(resize_bilinear(sqrt(u), out_h, out_w), sigma_rel * double(out_w));
}

FixationSet read_fixations(const std::filesystem::path& path, std::string image_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open fixation file " + path.string());
  FixationSet set;
  set.image_id = std::move(image_id);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "x,y") fail("expected header \"x,y\"");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected two comma-separated values");
    Point p;
    const char* b = line.data();
    const char* e = line.data() + line.size();
    auto r1 = std::from_chars(b, b + comma, p.x);
    auto r2 = std::from_chars(b + comma + 1, e, p.y);
    if (r1.ec != std::errc() || r1.ptr != b + comma || r2.ec != std::errc() || r2.ptr != e) {
      fail("malformed number");
    }
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
      fail("coordinate outside [0, 1]");
    }
    set.points.push_back(p);
  }
  if (!header) throw DataError(path.string() + ": missing header \"x,y\"");
  return set;
}

void write_fixations(const std::filesystem::path& path, const FixationSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "x,y\n";
  char buf[96];
  for (const Point& p : set.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.x, p.y);
    out << buf;
  }
}

double sample_nearest(const Tensor<double>& map, const Point& p) {
  const std::size_t h = map.dim(0), w = map.dim(1);
  const auto col = std::min(static_cast<std::size_t>(std::floor(p.x * double(w))), w - 1);
  const auto row = std::min(static_cast<std::size_t>(std::floor(p.y * double(h))), h - 1);
  return map(row, col);
}

double rank_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw DataError("AUC needs nonempty sample sets");
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(neg.begin(), neg.end());
  // Twice the Mann-Whitney count, kept integral so ties are exact.
  std::uint64_t twice = 0;
  for (double v : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), v);
    const auto hi = std::upper_bound(lo, neg.end(), v);
    twice += 2 * static_cast<std::uint64_t>(lo - neg.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return double(twice) / (2.0 * double(positives.size()) * double(neg.size()));
}

double pairwise_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw DataError("AUC needs nonempty sample sets");
  std::uint64_t twice = 0;
  for (double p : positives)
    for (double n : negatives) twice += p > n ? 2 : (p == n ? 1 : 0);
  return double(twice) / (2.0 * double(positives.size()) * double(negatives.size()));
}

double shuffled_auc(const Tensor<double>& sal, std::span<const Point> positives,
                    std::span<const Point> negatives) {
  require_map(sal, "shuffled_auc");
  if (positives.empty()) throw DataError("shuffled_auc: no positive fixations");
  if (negatives.empty()) throw DataError("shuffled_auc: no negative fixations");
  std::vector<double> pos, neg;
  pos.reserve(positives.size());
  neg.reserve(negatives.size());
  for (const Point& p : positives) pos.push_back(sample_nearest(sal, p));
  for (const Point& p : negatives) neg.push_back(sample_nearest(sal, p));
  return rank_auc(pos, neg);
}

FixationSet build_negative_set(const std::map<std::string, FixationSet>& all,
                               const std::string& exclude, std::size_t cap, std::uint64_t seed) {
  FixationSet pool;
  pool.image_id = "negatives:" + exclude;
  for (const auto& [id, set] : all) {
    if (id == exclude) continue;
    pool.points.insert(pool.points.end(), set.points.begin(), set.points.end());
  }
  if (pool.points.empty()) throw DataError("no fixations from other images to use as negatives");
  if (pool.points.size() <= cap) return pool;

  Rng rng = make_rng(seed, "saliency.negatives." + exclude);
  std::vector<std::size_t> idx(pool.points.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  FixationSet out;
  out.image_id = pool.image_id;
  out.points.reserve(cap);
  for (std::size_t i : idx) out.points.push_back(pool.points[i]);
  return out;
}

Tensor<double> centered_gaussian(std::size_t h, std::size_t w, double sigma_rel) {
  if (!(sigma_rel > 0.0)) throw UsageError("centered_gaussian: sigma must be positive");
  const double s = sigma_rel * double(w);
  const double cy = double(h) / 2.0, cx = double(w) / 2.0;
  Tensor<double> out(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
      out(y, x) = std::exp(-0.5 * (dx * dx + dy * dy) / (s * s));
    }
  return out;
}

Tensor<double> fixation_density(std::span<const Point> points, std::size_t h, std::size_t w,
                                double sigma_px) {
  Tensor<double> counts(Shape{h, w});
  for (const Point& p : points) {
    const auto col = std::min(static_cast<std::size_t>(std::floor(p.x * double(w))), w - 1);
    const auto row = std::min(static_cast<std::size_t>(std::floor(p.y * double(h))), h - 1);
    counts(row, col) += 1.0;
  }
  return gaussian_blur(counts, sigma_px);
}

double sign_test_p(std::size_t successes, std::size_t n) {
  if (successes > n) throw UsageError("sign_test_p: successes exceed trials");
  double p = 0;
  for (std::size_t k = successes; k <= n; ++k) {
    p += std::exp(std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) -
                  std::lgamma(double(n - k) + 1) - double(n) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root) {
  const auto images_dir = root / "images";
  const auto fix_dir = root / "fixations";
  if (!std::filesystem::is_directory(images_dir)) {
    throw DataError("dataset has no images/ directory: " + root.string());
  }
  std::vector<DatasetEntry> out;
  for (const auto& img : io::list_images(images_dir)) {
    DatasetEntry e;
    e.id = img.stem().string();
    e.image = img;
    const auto csv = fix_dir / (e.id + ".csv");
    if (!std::filesystem::exists(csv)) throw DataError("missing fixation file " + csv.string());
    e.fixations = read_fixations(csv, e.id);
    out.push_back(std::move(e));
  }
  if (out.empty()) throw DataError("no images in " + images_dir.string());
  std::sort(out.begin(), out.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
  return out;
}

void write_auc_report(const std::filesystem::path& path,
                      std::span<const std::pair<std::string, double>> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "image_id,shuffled_auc\n";
  double total = 0;
  char buf[64];
  for (const auto& [id, auc] : rows) {
    std::snprintf(buf, sizeof buf, "%.10f", auc);
    out << id << ',' << buf << '\n';
    total += auc;
  }
  std::snprintf(buf, sizeof buf, "%.10f", rows.empty() ? 0.0 : total / double(rows.size()));
  out << "mean," << buf << '\n';
}

}  // namespace natscan::sal
