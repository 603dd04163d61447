#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "spoof/error.hpp"
#include "spoof/image.hpp"

namespace spoof {

namespace png_detail {

inline constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos) {
  return (std::uint32_t{b[pos]} << 24) | (std::uint32_t{b[pos + 1]} << 16) | (std::uint32_t{b[pos + 2]} << 8) |
         std::uint32_t{b[pos + 3]};
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = ::crc32(0L, out.data() + type_pos, static_cast<uInt>(payload.size() + 4));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace png_detail

inline std::uint8_t quantize_to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
}

/// Applies the 8-bit quantizer round(v * 255) / 255 elementwise.
inline Image quantize(const Image& img) {
  std::vector<float> data(img.size());
  const auto src = img.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(quantize_to_byte(src[i])) / 255.0f;
  return Image(img.shape(), std::move(data));
}

/// Encodes C=1 as 8-bit grayscale and C=3 as 8-bit RGB, no interlace.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  using namespace png_detail;
  if (img.empty()) fail(ErrorKind::Shape, "cannot encode an empty image");
  if (img.channels() != 1 && img.channels() != 3) {
    fail(ErrorKind::UnsupportedFormat, "PNG export supports 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  const std::size_t c = img.channels();
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  const auto data = img.data();

  std::vector<std::uint8_t> raw;
  raw.reserve(h * (1 + w * c));
  for (std::size_t row = 0; row < h; ++row) {
    raw.push_back(0);  // filter: none
    for (std::size_t col = 0; col < w; ++col) {
      for (std::size_t ch = 0; ch < c; ++ch) raw.push_back(quantize_to_byte(data[img.offset(ch, row, col)]));
    }
  }

  uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(compressed_size);
  if (compress2(compressed.data(), &compressed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    fail(ErrorKind::Io, "zlib compression failed");
  }
  compressed.resize(compressed_size);

  std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);                     // bit depth
  ihdr.push_back(c == 1 ? 0 : 2);        // color type
  ihdr.push_back(0);                     // compression
  ihdr.push_back(0);                     // filter method
  ihdr.push_back(0);                     // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});
  return out;
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  using namespace png_detail;
  if (bytes.size() < kSignature.size() || !std::equal(kSignature.begin(), kSignature.end(), bytes.begin())) {
    fail(ErrorKind::Format, "missing PNG signature");
  }
  std::size_t pos = kSignature.size();
  std::uint32_t width = 0, height = 0;
  int color_type = -1;
  bool seen_end = false;
  std::vector<std::uint8_t> idat;

  while (pos < bytes.size() && !seen_end) {
    if (bytes.size() - pos < 12) fail(ErrorKind::Format, "truncated PNG chunk header");
    const std::uint32_t length = get_u32(bytes, pos);
    if (length > bytes.size() - pos - 12) fail(ErrorKind::Format, "truncated PNG chunk");
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const auto payload = bytes.subspan(pos + 8, length);
    const std::uint32_t stored_crc = get_u32(bytes, pos + 8 + length);
    const auto crc = ::crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(length + 4));
    if (static_cast<std::uint32_t>(crc) != stored_crc) fail(ErrorKind::Format, "CRC mismatch in " + type + " chunk");

    if (type == "IHDR") {
      if (length != 13) fail(ErrorKind::Format, "IHDR must be 13 bytes");
      width = get_u32(payload, 0);
      height = get_u32(payload, 4);
      const int bit_depth = payload[8];
      color_type = payload[9];
      if (payload[10] != 0 || payload[11] != 0) fail(ErrorKind::Format, "unknown compression or filter method");
      if (bit_depth != 8) fail(ErrorKind::UnsupportedFormat, "bit depth " + std::to_string(bit_depth));
      if (color_type != 0 && color_type != 2) {
        fail(ErrorKind::UnsupportedFormat, "color type " + std::to_string(color_type));
      }
      if (payload[12] != 0) fail(ErrorKind::UnsupportedFormat, "interlaced PNG");
      if (width == 0 || height == 0) fail(ErrorKind::Format, "zero image dimension");
    } else if (type == "IDAT") {
      if (color_type < 0) fail(ErrorKind::Format, "IDAT before IHDR");
      idat.insert(idat.end(), payload.begin(), payload.end());
    } else if (type == "IEND") {
      seen_end = true;
    }
    pos += 12 + length;
  }
  if (color_type < 0) fail(ErrorKind::Format, "missing IHDR");
  if (!seen_end) fail(ErrorKind::Format, "missing IEND");

  const std::size_t channels = color_type == 0 ? 1 : 3;
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    fail(ErrorKind::Format, "corrupt PNG image data");
  }

  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * stride);
  for (std::size_t row = 0; row < height; ++row) {
    const std::uint8_t filter = raw[row * (stride + 1)];
    const std::uint8_t* in = raw.data() + row * (stride + 1) + 1;
    std::uint8_t* cur = pixels.data() + row * stride;
    const std::uint8_t* prev = row > 0 ? cur - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= channels ? cur[i - channels] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= channels) ? prev[i - channels] : 0;
      int value = in[i];
      switch (filter) {
        case 0: break;
        case 1: value += a; break;
        case 2: value += b; break;
        case 3: value += (a + b) / 2; break;
        case 4: value += paeth(a, b, c); break;
        default: fail(ErrorKind::Format, "unknown row filter " + std::to_string(filter));
      }
      cur[i] = static_cast<std::uint8_t>(value);
    }
  }

  const ImageShape shape{channels, height, width};
  std::vector<float> data(shape.size());
  for (std::size_t row = 0; row < height; ++row) {
    for (std::size_t col = 0; col < width; ++col) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        data[(ch * height + row) * width + col] = static_cast<float>(pixels[row * stride + col * channels + ch]) / 255.0f;
      }
    }
  }
  return Image(shape, std::move(data));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

inline Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::NotFound, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_png(bytes);
}

}  // namespace spoof
