#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fidlab/image.hpp"

namespace fidlab::png {

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  put_u32(out, std::uint32_t(payload.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = ::crc32(0, out.data() + start, uInt(out.size() - start));
  put_u32(out, std::uint32_t(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

// Encodes 8-bit RGB, no interlace, filter 0 scanlines, fixed zlib level.
// Output bytes are a pure function of the pixel data.
inline std::vector<std::uint8_t> encode_rgb8(const std::vector<std::uint8_t>& rgb,
                                             int width, int height) {
  if (rgb.size() != std::size_t(width) * height * 3)
    throw std::invalid_argument("png encode: pixel buffer size mismatch");

  std::vector<std::uint8_t> raw;
  raw.reserve(std::size_t(height) * (1 + std::size_t(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter type 0
    const std::uint8_t* row = rgb.data() + std::size_t(y) * width * 3;
    raw.insert(raw.end(), row, row + std::size_t(width) * 3);
  }

  uLongf bound = ::compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (::compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png encode: deflate failed");
  compressed.resize(bound);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, std::uint32_t(width));
  detail::put_u32(ihdr, std::uint32_t(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", compressed);
  detail::put_chunk(out, "IEND", {});
  return out;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

// Reads the subset this project writes: 8-bit truecolor, non-interlaced.
// All five scanline filters are understood.
inline DecodedPng decode_rgb8(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw std::runtime_error("png decode: bad signature");

  DecodedPng out;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 12 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = detail::get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("png decode: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("png decode: bad IHDR");
      out.width = int(detail::get_u32(payload));
      out.height = int(detail::get_u32(payload + 4));
      if (payload[8] != 8 || payload[9] != 2 || payload[12] != 0)
        throw std::runtime_error("png decode: only 8-bit non-interlaced RGB is supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || out.width <= 0 || out.height <= 0)
    throw std::runtime_error("png decode: malformed file");

  const std::size_t stride = std::size_t(out.width) * 3;
  std::vector<std::uint8_t> raw(std::size_t(out.height) * (stride + 1));
  uLongf raw_len = uLongf(raw.size());
  if (::uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("png decode: inflate failed");

  out.rgb.resize(std::size_t(out.height) * stride);
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < out.height; ++y) {
    const std::uint8_t filter = raw[std::size_t(y) * (stride + 1)];
    const std::uint8_t* src = raw.data() + std::size_t(y) * (stride + 1) + 1;
    std::uint8_t* dst = out.rgb.data() + std::size_t(y) * stride;
    for (std::size_t i = 0; i < stride; ++i) {
      const int left = i >= 3 ? dst[i - 3] : 0;
      const int up = prev[i];
      const int upleft = i >= 3 ? prev[i - 3] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += detail::paeth(left, up, upleft); break;
        default: throw std::runtime_error("png decode: unknown filter type");
      }
      dst[i] = std::uint8_t(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return out;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

inline void save_image(const std::string& path, const RgbImage& img) {
  write_file(path, encode_rgb8(img.to_bytes(), img.width, img.height));
}

inline RgbImage load_image(const std::string& path) {
  DecodedPng d = decode_rgb8(read_file(path));
  return RgbImage::from_bytes(d.height, d.width, d.rgb);
}

}  // namespace fidlab::png
