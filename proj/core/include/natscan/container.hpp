#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "natscan/tensor.hpp"

// Binary container shared by CNN weights ("VLMW0001"), VLM models
// ("VLMM0001") and standalone tensors ("VLMT0001").
//
// Layout (little-endian):
//   8 bytes   magic
//   4 bytes   u32 header length N
//   N bytes   UTF-8 JSON header, space-padded so the payload starts 8-aligned
//   payload   raw scalars; every tensor offset is 8-aligned and relative to
//             the payload start
//
// Header: {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset"}]}
// with dtype one of "f32", "f64".

namespace natscan::io {

inline constexpr std::string_view kCnnMagic = "VLMW0001";
inline constexpr std::string_view kVlmMagic = "VLMM0001";
inline constexpr std::string_view kTensorMagic = "VLMT0001";

enum class DType { kF32, kF64 };

std::string_view dtype_name(DType d);
/// Throws FormatError for anything but "f32" / "f64".
DType parse_dtype(std::string_view code);

template <std::floating_point T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::kF32 : DType::kF64;
}

/// Values are held as doubles; f32 payloads round-trip exactly.
struct StoredTensor {
  std::string name;
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<double> values;
};

class Container {
 public:
  Container() = default;
  explicit Container(std::string magic) : magic_(std::move(magic)) {}

  const std::string& magic() const noexcept { return magic_; }
  nlohmann::json& meta() noexcept { return meta_; }
  const nlohmann::json& meta() const noexcept { return meta_; }
  const std::vector<StoredTensor>& tensors() const noexcept { return tensors_; }

  bool contains(std::string_view name) const;
  const StoredTensor& at(std::string_view name) const;

  template <std::floating_point T>
  void put(std::string name, const Tensor<T>& t, DType dtype = dtype_of<T>()) {
    StoredTensor s{std::move(name), dtype, t.shape(), {t.data().begin(), t.data().end()}};
    put_stored(std::move(s));
  }

  /// Converts to T. Throws DataError if `name` is absent.
  template <std::floating_point T>
  Tensor<T> get(std::string_view name) const {
    const StoredTensor& s = at(name);
    return Tensor<T>(s.shape, std::vector<T>(s.values.begin(), s.values.end()));
  }

  void put_stored(StoredTensor t);

 private:
  std::string magic_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<StoredTensor> tensors_;
};

std::string serialize(const Container& c);
/// Parses bytes. Distinct error types: BadMagicError, TruncatedFileError,
/// FormatError for malformed headers and unknown dtypes.
Container deserialize(std::string_view bytes, std::string_view expected_magic);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, std::string_view expected_magic);

/// Standalone tensor file ("VLMT0001") with a single tensor named "value".
template <std::floating_point T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t,
                  const nlohmann::json& meta = nlohmann::json::object());
template <std::floating_point T>
Tensor<T> read_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace natscan::io
