#pragma once

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "../common/fixtures.hpp"
#include "spoof/spoof.hpp"

namespace spoof::testing {

#define EXPECT_SPOOF_ERROR(stmt, expected_kind)                                 \
  do {                                                                          \
    try {                                                                       \
      stmt;                                                                     \
      ADD_FAILURE() << "expected " << ::spoof::to_string(expected_kind);        \
    } catch (const ::spoof::Error& e) {                                         \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                           \
    }                                                                           \
  } while (0)

inline Image make_image(ImageShape shape, std::vector<float> values) { return Image(shape, std::move(values)); }

inline Image random_image(ImageShape shape, std::uint64_t seed) { return new_canvas(shape, InitMode::UniformRandom, seed); }

/// Softmax over fixed per-class weights applied to the channel-0 mean.
inline ProbVector softmax_of(const std::vector<double>& logits) { return softmax<double>(logits); }

/// Confidence for class 0 = mean of channel 0; remaining mass spread evenly.
inline std::unique_ptr<FunctionOracle> channel0_oracle(ImageShape shape, std::size_t classes = 2) {
  return std::make_unique<FunctionOracle>(classes, shape, [classes](const Image& img) {
    const auto& s = img.shape();
    double sum = 0.0;
    for (std::size_t r = 0; r < s.height; ++r)
      for (std::size_t c = 0; c < s.width; ++c) sum += img.at(0, r, c);
    const double m = sum / static_cast<double>(s.height * s.width);
    std::vector<double> p(classes, (1.0 - m) / static_cast<double>(classes - 1));
    p[0] = m;
    return ProbVector{p};
  });
}

/// Small random MLP (dense-relu-dense-softmax) for fast builtin victims.
inline std::pair<NetworkSpec, WeightMap> tiny_mlp(ImageShape in, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
  NetworkSpec spec{in, {FlattenLayer{}, DenseLayer{"fc1", in.size(), hidden}, ReluLayer{}, DenseLayer{"fc2", hidden, classes}, SoftmaxLayer{}}};
  auto w = init_dense_weights(spec, seed);
  // larger weights so probabilities move noticeably with single pixels
  for (auto& [name, t] : w)
    for (auto& v : t.data) v *= 4.0f;
  return {spec, w};
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("spoof_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace spoof::testing
