#include "natscan/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace natscan::io {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

std::size_t dtype_bytes(DType d) { return d == DType::kF32 ? 4 : 8; }

std::size_t align8(std::size_t n) { return (n + 7) / 8 * 8; }

}  // namespace

std::string_view dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view code) {
  if (code == "f32") return DType::kF32;
  if (code == "f64") return DType::kF64;
  throw FormatError("unknown dtype code '" + std::string(code) + "'");
}

bool Container::contains(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const StoredTensor& Container::at(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw DataError("container has no tensor named '" + std::string(name) + "'");
}

void Container::put_stored(StoredTensor t) {
  if (checked_size(t.shape) != t.values.size()) {
    throw ShapeError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                     " values for shape " + shape_string(t.shape));
  }
  for (auto& existing : tensors_) {
    if (existing.name == t.name) {
      existing = std::move(t);
      return;
    }
  }
  tensors_.push_back(std::move(t));
}

std::string serialize(const Container& c) {
  if (c.magic().size() != 8) throw FormatError("container magic must be 8 bytes");
  nlohmann::json header;
  header["meta"] = c.meta();
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : c.tensors()) {
    header["tensors"].push_back({{"name", t.name},
                                 {"dtype", dtype_name(t.dtype)},
                                 {"shape", t.shape},
                                 {"offset", offset}});
    offset = align8(offset + t.values.size() * dtype_bytes(t.dtype));
  }
  std::string text = header.dump();
  text.resize(align8(12 + text.size()) - 12, ' ');

  std::string out;
  out.reserve(12 + text.size() + offset);
  out.append(c.magic());
  const auto n = static_cast<std::uint32_t>(text.size());
  char len[4];
  std::memcpy(len, &n, 4);
  out.append(len, 4);
  out.append(text);
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset, '\0');
  std::size_t at = payload_start;
  for (const auto& t : c.tensors()) {
    char* dst = out.data() + at;
    if (t.dtype == DType::kF32) {
      for (std::size_t i = 0; i < t.values.size(); ++i) {
        const float v = static_cast<float>(t.values[i]);
        std::memcpy(dst + 4 * i, &v, 4);
      }
    } else {
      std::memcpy(dst, t.values.data(), 8 * t.values.size());
    }
    at = payload_start + align8(at - payload_start + t.values.size() * dtype_bytes(t.dtype));
  }
  return out;
}

Container deserialize(std::string_view bytes, std::string_view expected_magic) {
  if (bytes.size() < 12) {
    throw TruncatedFileError("file too short for container preamble: expected at least 12 bytes, found " +
                                 std::to_string(bytes.size()),
                             12, bytes.size());
  }
  const std::string_view magic = bytes.substr(0, 8);
  if (magic != expected_magic) {
    std::string shown;
    for (char ch : magic) {
      if (ch >= 0x20 && ch < 0x7f) {
        shown += ch;
      } else {
        char esc[5];
        std::snprintf(esc, sizeof esc, "\\x%02x", static_cast<unsigned char>(ch));
        shown += esc;
      }
    }
    throw BadMagicError("bad magic '" + shown + "', expected '" +
                        std::string(expected_magic) + "'");
  }
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(n)) {
    throw TruncatedFileError("truncated header: expected " + std::to_string(12 + std::size_t{n}) +
                                 " bytes, found " + std::to_string(bytes.size()),
                             12 + std::size_t{n}, bytes.size());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, n));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed container header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array()) {
    throw FormatError("container header lacks a tensor table");
  }

  Container c{std::string(magic)};
  if (header.contains("meta")) c.meta() = header["meta"];
  const std::string_view payload = bytes.substr(12 + n);

  struct Entry {
    StoredTensor tensor;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t needed = 0;
  try {
    for (const auto& j : header["tensors"]) {
      Entry e;
      e.tensor.name = j.at("name").get<std::string>();
      e.tensor.dtype = parse_dtype(j.at("dtype").get<std::string>());
      e.tensor.shape = j.at("shape").get<Shape>();
      e.offset = j.at("offset").get<std::size_t>();
      if (e.offset % 8 != 0) {
        throw FormatError("tensor '" + e.tensor.name + "' offset " + std::to_string(e.offset) +
                          " is not 8-byte aligned");
      }
      const std::size_t count = checked_size(e.tensor.shape);
      needed = std::max(needed, e.offset + count * dtype_bytes(e.tensor.dtype));
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor table: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("malformed tensor table: ") + e.what());
  }
  if (payload.size() < needed) {
    throw TruncatedFileError("truncated payload: expected " + std::to_string(needed) +
                                 " bytes, found " + std::to_string(payload.size()),
                             needed, payload.size());
  }
  for (auto& e : entries) {
    const std::size_t count = checked_size(e.tensor.shape);
    e.tensor.values.resize(count);
    const char* src = payload.data() + e.offset;
    if (e.tensor.dtype == DType::kF32) {
      for (std::size_t i = 0; i < count; ++i) {
        float v;
        std::memcpy(&v, src + 4 * i, 4);
        e.tensor.values[i] = v;
      }
    } else {
      std::memcpy(e.tensor.values.data(), src, 8 * count);
    }
    c.put_stored(std::move(e.tensor));
  }
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file(path, serialize(c));
}

Container read_container(const std::filesystem::path& path, std::string_view expected_magic) {
  const std::string bytes = read_file(path);
  try {
    return deserialize(bytes, expected_magic);
  } catch (const TruncatedFileError& e) {
    throw TruncatedFileError(path.string() + ": " + e.what(), e.expected_bytes(), e.actual_bytes());
  } catch (const BadMagicError& e) {
    throw BadMagicError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <std::floating_point T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t,
                  const nlohmann::json& meta) {
  Container c{std::string(kTensorMagic)};
  c.meta() = meta;
  c.put("value", t);
  write_container(path, c);
}

template <std::floating_point T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  return read_container(path, kTensorMagic).get<T>("value");
}

template void write_tensor(const std::filesystem::path&, const Tensor<float>&,
                           const nlohmann::json&);
template void write_tensor(const std::filesystem::path&, const Tensor<double>&,
                           const nlohmann::json&);
template Tensor<float> read_tensor(const std::filesystem::path&);
template Tensor<double> read_tensor(const std::filesystem::path&);

}  // namespace natscan::io
