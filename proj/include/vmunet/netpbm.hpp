#pragma once

// Binary PPM (P6) images and PGM (P5) label maps, maxval 255.
// Writers emit the canonical header "P6\n<w> <h>\n255\n"; readers accept
// arbitrary whitespace and '#' comments between header fields.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "vmunet/error.hpp"
#include "vmunet/label_map.hpp"
#include "vmunet/tensor.hpp"

namespace vmunet::netpbm {

namespace detail {

struct Header {
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  std::size_t payload_offset = 0;
};

inline Header parse_header(std::string_view bytes, std::string_view expected_magic) {
  Header h;
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&](const char* field) {
    skip_space();
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw DataError(std::string("netpbm: ") + field + " too large");
      ++pos;
    }
    if (pos == start) throw DataError(std::string("netpbm: missing ") + field);
    return value;
  };
  if (bytes.size() < 2 || bytes.substr(0, 2) != expected_magic) {
    throw DataError("netpbm: bad magic, expected " + std::string(expected_magic));
  }
  h.magic = std::string(expected_magic);
  pos = 2;
  h.width = read_number("width");
  h.height = read_number("height");
  h.maxval = read_number("maxval");
  if (h.width == 0 || h.height == 0) throw DataError("netpbm: zero extent");
  if (h.maxval != 255) throw DataError("netpbm: maxval must be 255, got " + std::to_string(h.maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw DataError("netpbm: missing whitespace after maxval");
  }
  h.payload_offset = pos + 1;
  return h;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

/// [H, W, 3] floats in [0, 1] -> P6 bytes (values clamped, rounded to nearest of 256 levels).
inline std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("encode_ppm: expected [H, W, 3], got " + to_string(image.shape()));
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  out.reserve(out.size() + image.numel());
  for (double v : image.data()) out.push_back(static_cast<char>(detail::quantize(v)));
  return out;
}

inline Tensor decode_ppm(std::string_view bytes) {
  const auto h = detail::parse_header(bytes, "P6");
  const std::size_t n = h.width * h.height * 3;
  if (bytes.size() - h.payload_offset < n) throw DataError("ppm: truncated payload");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<unsigned char>(bytes[h.payload_offset + i]) / 255.0;
  return Tensor({h.height, h.width, 3}, std::move(v));
}

inline std::string encode_pgm(const LabelMap& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.append(mask.labels.begin(), mask.labels.end());
  return out;
}

inline LabelMap decode_pgm(std::string_view bytes) {
  const auto h = detail::parse_header(bytes, "P5");
  const std::size_t n = h.width * h.height;
  if (bytes.size() - h.payload_offset < n) throw DataError("pgm: truncated payload");
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(bytes[h.payload_offset + i]);
  return LabelMap(h.height, h.width, std::move(labels));
}

inline Tensor read_image(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_image(const std::filesystem::path& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

inline LabelMap read_mask(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_mask(const std::filesystem::path& path, const LabelMap& mask) { write_file(path, encode_pgm(mask)); }

}  // namespace vmunet::netpbm
