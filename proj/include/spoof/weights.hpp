#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spoof/error.hpp"

namespace spoof {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> dims, std::vector<float> values) : shape(std::move(dims)), data(std::move(values)) {
    if (data.size() != element_count(shape)) {
      fail(ErrorKind::Shape, "tensor data has " + std::to_string(data.size()) + " values, shape needs " +
                                 std::to_string(element_count(shape)));
    }
  }

  static Tensor zeros(std::vector<std::size_t> dims) {
    const auto n = element_count(dims);
    return Tensor(std::move(dims), std::vector<float>(n, 0.0f));
  }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

/// Named tensors, ordered by name.
using WeightMap = std::map<std::string, Tensor>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// SPWT container:
//   "SPWT" | u64 LE header length L | L bytes JSON header | f32 LE blob
// The header maps tensor name -> {"dtype":"f32","shape":[..],"offset":o,"nbytes":n}
// with offsets relative to the start of the blob.
inline constexpr char kWeightMagic[4] = {'S', 'P', 'W', 'T'};

namespace weights_detail {

inline void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[start + 4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
}

inline float read_f32_le(const std::uint8_t* p) {
  const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
                             (std::uint32_t{p[3]} << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace weights_detail

inline std::vector<std::uint8_t> serialize_weights(const WeightMap& weights) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::vector<std::uint8_t> blob;
  for (const auto& [name, tensor] : weights) {
    const std::size_t offset = blob.size();
    weights_detail::append_f32_le(blob, tensor.data);
    header[name] = {{"dtype", "f32"}, {"shape", tensor.shape}, {"offset", offset}, {"nbytes", tensor.data.size() * 4}};
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kWeightMagic, kWeightMagic + 4);
  const auto len = static_cast<std::uint64_t>(text.size());
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

inline WeightMap deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    fail(ErrorKind::Format, "bad magic: not an SPWT weight file");
  }
  std::uint64_t header_len = 0;
  for (int b = 0; b < 8; ++b) header_len |= std::uint64_t{bytes[4 + b]} << (8 * b);
  if (header_len > bytes.size() - 12) fail(ErrorKind::Format, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) fail(ErrorKind::Format, "header must be a JSON object");

  const auto blob = bytes.subspan(12 + header_len);
  WeightMap weights;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& [name, entry] : header.items()) {
    try {
      if (entry.at("dtype").get<std::string>() != "f32") fail(ErrorKind::Format, "tensor '" + name + "': dtype must be f32");
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      const auto count = Tensor::element_count(shape);
      if (nbytes != count * 4) {
        fail(ErrorKind::Format, "tensor '" + name + "': nbytes " + std::to_string(nbytes) + " inconsistent with shape " +
                                    shape_string(shape));
      }
      if (offset > blob.size() || nbytes > blob.size() - offset) {
        fail(ErrorKind::Format, "tensor '" + name + "': data truncated");
      }
      for (const auto& [o, n] : extents) {
        if (nbytes > 0 && n > 0 && offset < o + n && o < offset + nbytes) {
          fail(ErrorKind::Format, "tensor '" + name + "': data overlaps another tensor");
        }
      }
      extents.emplace_back(offset, nbytes);
      std::vector<float> data(count);
      for (std::size_t i = 0; i < count; ++i) data[i] = weights_detail::read_f32_le(blob.data() + offset + 4 * i);
      weights.emplace(name, Tensor(std::move(shape), std::move(data)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, "tensor '" + name + "': " + e.what());
    }
  }
  return weights;
}

inline void save_weights(const WeightMap& weights, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(weights);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

inline WeightMap load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::NotFound, "cannot open weight file " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_weights(bytes);
}

}  // namespace spoof
