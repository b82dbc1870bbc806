#pragma once

#include <filesystem>
#include <vector>

#include "natscan/tensor.hpp"

namespace natscan::io {

/// Decodes a PNG or binary PPM (P6, maxval <= 255) into an H x W x 3 tensor
/// of raw 0-255 values. Grayscale and alpha PNGs are converted to RGB.
/// Throws DataError if the file cannot be decoded.
Tensor<double> read_image(const std::filesystem::path& path);

/// 8-bit RGB PNG; values are rounded and clamped to [0, 255].
void write_png_rgb8(const std::filesystem::path& path, const Tensor<double>& image);
/// 16-bit grayscale PNG from an H x W tensor; values rounded and clamped to
/// [0, 65535].
void write_png_gray16(const std::filesystem::path& path, const Tensor<double>& map);
void write_ppm(const std::filesystem::path& path, const Tensor<double>& image);

/// Affinely maps [min, max] of `t` onto [0, hi]. A constant tensor maps to 0.
Tensor<double> stretch_to_range(const Tensor<double>& t, double hi);

bool has_image_extension(const std::filesystem::path& path);
/// Image files directly inside `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace natscan::io
