// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "wid/common.hpp"

namespace wid {

// 8-bit grayscale raster, row-major, 0 = black ink, 255 = white page.
struct GrayImage {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // height * width

  std::uint8_t at(std::int64_t y, std::int64_t x) const {
    return pixels[static_cast<std::size_t>(y * width + x)];
  }
  std::uint8_t& at(std::int64_t y, std::int64_t x) {
    return pixels[static_cast<std::size_t>(y * width + x)];
  }
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::uint8_t* data, std::size_t len) {
  put_be32(out, static_cast<std::uint32_t>(len));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, static_cast<uInt>(4 + len));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace detail

inline const std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

// Encodes 8-bit grayscale, non-interlaced, filter 0 on every scanline.
inline std::vector<std::uint8_t> encode_png_gray8(const GrayImage& img) {
  if (img.height <= 0 || img.width <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.height * img.width))
    throw ValueError("encode_png_gray8: empty or inconsistent image");

  std::vector<std::uint8_t> raw;  // filter byte + row, per scanline
  raw.reserve(static_cast<std::size_t>(img.height * (img.width + 1)));
  for (std::int64_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = img.pixels.data() + y * img.width;
    raw.insert(raw.end(), row, row + img.width);
  }

  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> zdata(zlen);
  if (compress2(zdata.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("encode_png_gray8: deflate failed");
  zdata.resize(zlen);

  std::uint8_t ihdr[13];
  ihdr[0] = static_cast<std::uint8_t>(img.width >> 24);
  ihdr[1] = static_cast<std::uint8_t>(img.width >> 16);
  ihdr[2] = static_cast<std::uint8_t>(img.width >> 8);
  ihdr[3] = static_cast<std::uint8_t>(img.width);
  ihdr[4] = static_cast<std::uint8_t>(img.height >> 24);
  ihdr[5] = static_cast<std::uint8_t>(img.height >> 16);
  ihdr[6] = static_cast<std::uint8_t>(img.height >> 8);
  ihdr[7] = static_cast<std::uint8_t>(img.height);
  ihdr[8] = 8;    // bit depth
  ihdr[9] = 0;    // color type: grayscale
  ihdr[10] = 0;   // compression
  ihdr[11] = 0;   // filter method
  ihdr[12] = 0;   // interlace: none

  std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);
  detail::append_chunk(out, "IHDR", ihdr, sizeof(ihdr));
  detail::append_chunk(out, "IDAT", zdata.data(), zdata.size());
  detail::append_chunk(out, "IEND", nullptr, 0);
  return out;
}

// Decodes the gray8 subset this project emits; handles all five scanline
// filters so externally produced grayscale PNGs load too.
inline GrayImage decode_png_gray8(const std::vector<std::uint8_t>& bytes,
                                  const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(origin + ": " + what);
  };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0)
    throw fail("not a PNG file");

  std::int64_t width = 0, height = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<std::uint8_t> zdata;

  std::size_t pos = 8;
  while (pos < bytes.size() && !saw_iend) {
    if (pos + 8 > bytes.size()) throw fail("truncated chunk header");
    const std::uint32_t len = detail::get_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw fail("truncated chunk payload");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* data = bytes.data() + pos + 8;

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw fail("bad IHDR length");
      width = detail::get_be32(data);
      height = detail::get_be32(data + 4);
      if (data[8] != 8 || data[9] != 0)
        throw fail("unsupported PNG (need 8-bit grayscale, got depth " +
                   std::to_string(int(data[8])) + " color type " + std::to_string(int(data[9])) +
                   ")");
      if (data[10] != 0 || data[11] != 0) throw fail("unsupported compression/filter method");
      if (data[12] != 0) throw fail("interlaced PNG not supported");
      if (width <= 0 || height <= 0) throw fail("bad image dimensions");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      if (!saw_ihdr) throw fail("IDAT before IHDR");
      zdata.insert(zdata.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    // Ancillary chunks are skipped; CRCs are not re-verified on read.
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw fail("missing IHDR or IEND");

  const std::size_t stride = static_cast<std::size_t>(width) + 1;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * stride);
  uLongf rawlen = static_cast<uLongf>(raw.size());
  const int zrc = uncompress(raw.data(), &rawlen, zdata.data(), static_cast<uLong>(zdata.size()));
  if (zrc != Z_OK || rawlen != raw.size()) throw fail("inflate failed or wrong pixel count");

  GrayImage img;
  img.height = height;
  img.width = width;
  img.pixels.resize(static_cast<std::size_t>(height * width));
  // Undo per-scanline filtering. bpp = 1: "left" is the previous byte in the row.
  for (std::int64_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * stride];
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * stride + 1;
    std::uint8_t* dst = img.pixels.data() + y * width;
    const std::uint8_t* up = y > 0 ? dst - width : nullptr;
    for (std::int64_t x = 0; x < width; ++x) {
      const int a = x > 0 ? dst[x - 1] : 0;
      const int b = up ? up[x] : 0;
      const int c = (x > 0 && up) ? up[x - 1] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw fail("unknown scanline filter " + std::to_string(int(filter)));
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xFF);
    }
  }
  return img;
}

inline void write_png_gray8(const std::string& path, const GrayImage& img) {
  const std::vector<std::uint8_t> bytes = encode_png_gray8(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path);
}

inline GrayImage read_png_gray8(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_png_gray8(bytes, path);
}

}  // namespace wid
