#include "natscan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>

#include "natscan/container.hpp"

namespace natscan::io {
namespace {

Tensor<double> decode_png(const std::filesystem::path& path, const std::string& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError("cannot decode PNG '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const std::size_t h = image.height, w = image.width;
  Tensor<double> out(Shape{h, w, 3});
  for (std::size_t i = 0; i < h * w * 3; ++i) out[i] = buffer[i];
  return out;
}

// Skips whitespace and '#' comments between PPM header tokens.
std::size_t ppm_token(const std::string& s, std::size_t& at) {
  while (at < s.size()) {
    if (s[at] == '#') {
      while (at < s.size() && s[at] != '\n') ++at;
    } else if (std::isspace(static_cast<unsigned char>(s[at]))) {
      ++at;
    } else {
      break;
    }
  }
  std::size_t v = 0;
  bool any = false;
  while (at < s.size() && std::isdigit(static_cast<unsigned char>(s[at]))) {
    v = v * 10 + static_cast<std::size_t>(s[at] - '0');
    ++at;
    any = true;
  }
  if (!any) throw DataError("malformed PPM header");
  return v;
}

Tensor<double> decode_ppm(const std::filesystem::path& path, const std::string& bytes) {
  std::size_t at = 2;
  const std::size_t w = ppm_token(bytes, at);
  const std::size_t h = ppm_token(bytes, at);
  const std::size_t maxval = ppm_token(bytes, at);
  ++at;  // single whitespace before raster
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DataError("unsupported PPM '" + path.string() + "'");
  }
  if (bytes.size() < at + w * h * 3) {
    throw DataError("truncated PPM '" + path.string() + "'");
  }
  Tensor<double> out(Shape{h, w, 3});
  const double scale = 255.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < h * w * 3; ++i) {
    out[i] = static_cast<unsigned char>(bytes[at + i]) * scale;
  }
  return out;
}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* file = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (file) std::fclose(file);
  }
};

void write_png(const std::filesystem::path& path, std::size_t w, std::size_t h, int bit_depth,
               int color_type, const std::vector<png_byte>& raster, std::size_t row_bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  PngWriter wr;
  wr.file = std::fopen(path.c_str(), "wb");
  if (!wr.file) throw DataError("cannot write '" + path.string() + "'");
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!wr.png) throw DataError("libpng initialization failed");
  wr.info = png_create_info_struct(wr.png);
  if (!wr.info) throw DataError("libpng initialization failed");
  if (setjmp(png_jmpbuf(wr.png))) throw DataError("PNG encoding failed for '" + path.string() + "'");
  png_init_io(wr.png, wr.file);
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  for (std::size_t y = 0; y < h; ++y) {
    png_write_row(wr.png, const_cast<png_bytep>(raster.data() + y * row_bytes));
  }
  png_write_end(wr.png, nullptr);
}

}  // namespace

Tensor<double> read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.substr(1, 3) == "PNG") {
    return decode_png(path, bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(path, bytes);
  throw DataError("unrecognized image format '" + path.string() + "' (PNG and binary PPM only)");
}

void write_png_rgb8(const std::filesystem::path& path, const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("write_png_rgb8: expected H x W x 3, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::vector<png_byte> raster(h * w * 3);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    raster[i] = static_cast<png_byte>(std::clamp(std::lround(image[i]), 0L, 255L));
  }
  write_png(path, w, h, 8, PNG_COLOR_TYPE_RGB, raster, w * 3);
}

void write_png_gray16(const std::filesystem::path& path, const Tensor<double>& map) {
  if (map.rank() != 2) {
    throw ShapeError("write_png_gray16: expected H x W, got " + shape_string(map.shape()));
  }
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::vector<png_byte> raster(h * w * 2);
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto v = static_cast<unsigned>(std::clamp(std::lround(map[i]), 0L, 65535L));
    raster[2 * i] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
    raster[2 * i + 1] = static_cast<png_byte>(v & 0xff);
  }
  write_png(path, w, h, 16, PNG_COLOR_TYPE_GRAY, raster, w * 2);
}

void write_ppm(const std::filesystem::path& path, const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("write_ppm: expected H x W x 3, got " + shape_string(image.shape()));
  }
  std::ostringstream os;
  os << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string bytes = os.str();
  for (double v : image.data()) {
    bytes.push_back(static_cast<char>(std::clamp(std::lround(v), 0L, 255L)));
  }
  write_file(path, bytes);
}

Tensor<double> stretch_to_range(const Tensor<double>& t, double hi) {
  const auto [lo_it, hi_it] = std::minmax_element(t.data().begin(), t.data().end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  Tensor<double> out(t.shape());
  if (span <= 0) return out;
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = (t[i] - lo) / span * hi;
  return out;
}

bool has_image_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".ppm";
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("not a directory: '" + dir.string() + "'");
  }
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace natscan::io
