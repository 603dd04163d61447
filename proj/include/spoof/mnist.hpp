#pragma once

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spoof/error.hpp"
#include "spoof/image.hpp"

namespace spoof {

/// Reads a whole file through zlib, which passes uncompressed input through
/// unchanged, so both .gz and raw IDX files work.
inline std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int got = gzread(f, buf, sizeof buf);
    if (got < 0) {
      gzclose(f);
      fail(ErrorKind::Format, "corrupt compressed stream in " + path.string());
    }
    if (got == 0) break;
    out.insert(out.end(), buf, buf + got);
  }
  gzclose(f);
  return out;
}

struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> data;
};

/// Big-endian IDX: two zero bytes, type byte (0x08 = u8), rank, u32 dims.
inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& what = "IDX data") {
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) fail(ErrorKind::Format, what + ": bad IDX magic");
  if (bytes[2] != 0x08) fail(ErrorKind::UnsupportedFormat, what + ": only unsigned-byte IDX data is supported");
  const std::size_t rank = bytes[3];
  if (bytes.size() < 4 + 4 * rank) fail(ErrorKind::Format, what + ": truncated IDX header");
  IdxArray a;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint8_t* p = bytes.data() + 4 + 4 * i;
    const std::size_t d = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | p[3];
    a.dims.push_back(d);
    count *= d;
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() != offset + count) {
    fail(ErrorKind::Format, what + ": expected " + std::to_string(count) + " data bytes, found " + std::to_string(bytes.size() - offset));
  }
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return a;
}

struct MnistSplit {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
};

/// Loads an images/labels IDX pair; pixels are scaled by 1/255.
inline MnistSplit load_idx_pair(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = parse_idx(read_maybe_gzip(images_path), images_path.string());
  const auto labels = parse_idx(read_maybe_gzip(labels_path), labels_path.string());
  if (images.dims.size() != 3) fail(ErrorKind::Format, images_path.string() + ": image IDX must have rank 3");
  if (labels.dims.size() != 1) fail(ErrorKind::Format, labels_path.string() + ": label IDX must have rank 1");
  if (images.dims[0] != labels.dims[0]) fail(ErrorKind::Format, "image and label counts differ");
  const ImageShape shape{1, images.dims[1], images.dims[2]};
  MnistSplit out;
  out.images.reserve(images.dims[0]);
  const std::size_t px = shape.size();
  for (std::size_t i = 0; i < images.dims[0]; ++i) {
    std::vector<float> v(px);
    for (std::size_t k = 0; k < px; ++k) v[k] = static_cast<float>(images.data[i * px + k]) / 255.0f;
    out.images.emplace_back(shape, std::move(v));
  }
  out.labels.assign(labels.data.begin(), labels.data.end());
  return out;
}

struct Mnist {
  MnistSplit train;
  MnistSplit test;
};

/// Expects the standard file names (optionally .gz) in `dir`.
inline Mnist load_mnist(const std::filesystem::path& dir) {
  const auto pick = [&](const std::string& stem) {
    for (const auto& name : {stem + ".gz", stem}) {
      if (std::filesystem::exists(dir / name)) return dir / name;
    }
    fail(ErrorKind::NotFound, "missing " + stem + "[.gz] in " + dir.string());
  };
  return {load_idx_pair(pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte")),
          load_idx_pair(pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte"))};
}

}  // namespace spoof
