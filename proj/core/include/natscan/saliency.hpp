#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "natscan/tensor.hpp"

// Saliency maps from unnaturalness maps, and shuffled-AUC evaluation against
// recorded eye fixations. Maps here are always 2-D [H, W] in double.

namespace natscan::sal {

/// Separable Gaussian blur, kernel radius ceil(3 sigma), normalized to sum 1,
/// half-sample symmetric borders (the edge pixel is repeated). sigma 0 returns
/// the input unchanged.
Tensor<double> gaussian_blur(const Tensor<double>& map, double sigma_px);

/// Normalized 1-D kernel used by gaussian_blur; size 2 ceil(3 sigma) + 1.
std::vector<double> gaussian_kernel(double sigma_px);

/// Bilinear resize with pixel centers at (i + 0.5) (align_corners = false),
/// samples clamped at the borders.
Tensor<double> resize_bilinear(const Tensor<double>& map, std::size_t out_h, std::size_t out_w);

/// sqrt, resize to out_h x out_w, then blur with sigma = sigma_rel * out_w pixels.
Tensor<double> saliency_from_map(const Tensor<double>& u, std::size_t out_h, std::size_t out_w,
                                 double sigma_rel);

struct Point {
  double x = 0;  // column, [0, 1]
  double y = 0;  // row, [0, 1]
  bool operator==(const Point&) const = default;
};

struct FixationSet {
  std::string image_id;
  std::vector<Point> points;
};

/// Reads a "x,y" CSV. Throws DataError on malformed rows or coordinates
/// outside [0, 1].
FixationSet read_fixations(const std::filesystem::path& path, std::string image_id);
void write_fixations(const std::filesystem::path& path, const FixationSet& set);

/// Value at the pixel containing (x, y): column min(floor(x W), W - 1),
/// likewise for rows.
double sample_nearest(const Tensor<double>& map, const Point& p);

/// Mann-Whitney AUC of map values at positives versus negatives, ties
/// counting one half.
double shuffled_auc(const Tensor<double>& sal, std::span<const Point> positives,
                    std::span<const Point> negatives);

/// Pairwise reference: (wins + ties / 2) / (|P| |N|) over every pair of scores.
double pairwise_auc(std::span<const double> positives, std::span<const double> negatives);
/// The rank-sum form used by shuffled_auc, on raw scores.
double rank_auc(std::span<const double> positives, std::span<const double> negatives);

inline constexpr std::size_t kDefaultNegativeCap = 5000;

/// Pools the fixations of every image except `exclude` (in image-id order).
/// If the pool exceeds `cap`, a seeded subset of `cap` points is drawn
/// without replacement, kept in pool order.
FixationSet build_negative_set(const std::map<std::string, FixationSet>& all,
                               const std::string& exclude, std::size_t cap, std::uint64_t seed);

/// Isotropic Gaussian centered in the image, sigma = sigma_rel * w pixels.
Tensor<double> centered_gaussian(std::size_t h, std::size_t w, double sigma_rel);

/// Fixation counts per pixel blurred with sigma_px.
Tensor<double> fixation_density(std::span<const Point> points, std::size_t h, std::size_t w,
                                double sigma_px);

/// One-sided sign-test p-value: P(X >= successes) for X ~ Binomial(n, 1/2).
double sign_test_p(std::size_t successes, std::size_t n);

struct DatasetEntry {
  std::string id;
  std::filesystem::path image;
  FixationSet fixations;
};

/// Reads <root>/images/<id>.{png,ppm} with <root>/fixations/<id>.csv, sorted
/// by id. Images without a fixation file are an error.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root);

/// "image_id,shuffled_auc" rows followed by "mean,<value>".
void write_auc_report(const std::filesystem::path& path,
                      std::span<const std::pair<std::string, double>> rows);

}  // namespace natscan::sal
