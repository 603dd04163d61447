#pragma once

// Fixtures shared by the unit tests and the acceptance binary (no gtest).

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "spoof/spoof.hpp"

namespace spoof::testing {

/// Deterministic 3-class toy: softmax of (mean, 1 - mean, spread) logits.
inline std::unique_ptr<FunctionOracle> toy3_oracle(ImageShape shape) {
  return std::make_unique<FunctionOracle>(3, shape, [](const Image& img) {
    const auto d = img.data();
    double mean = 0.0, sq = 0.0;
    for (float v : d) mean += v;
    mean /= static_cast<double>(d.size());
    for (float v : d) sq += (v - mean) * (v - mean);
    const double spread = std::sqrt(sq / static_cast<double>(d.size()));
    return softmax<double>(std::vector<double>{4.0 * mean, 4.0 * (1.0 - mean), 8.0 * spread});
  });
}

inline NetworkSpec random_dense_spec(std::mt19937_64& gen) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + gen() % (hi - lo + 1); };
  const ImageShape in{1, pick(1, 3), pick(2, 4)};
  NetworkSpec spec{in, {FlattenLayer{}}};
  std::size_t width = in.size();
  const auto hidden_layers = pick(0, 2);
  for (std::size_t h = 0; h < hidden_layers; ++h) {
    const auto next = pick(2, 7);
    spec.layers.push_back(DenseLayer{"h" + std::to_string(h), width, next});
    spec.layers.push_back(ReluLayer{});
    width = next;
  }
  spec.layers.push_back(DenseLayer{"out", width, pick(2, 5)});
  spec.layers.push_back(SoftmaxLayer{});
  return spec;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Norm-based relative error between analytic and central-difference
/// gradients over every parameter of the stack.
inline double gradient_check_error(const NetworkSpec& spec, std::uint64_t seed) {
  const auto weights = init_dense_weights(spec, seed);
  auto stack = make_dense_stack<double>(spec, weights);
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Index batch = 5;
  RowMatrix<double> x(batch, static_cast<Eigen::Index>(spec.input.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(gen);
  std::vector<std::size_t> labels(static_cast<std::size_t>(batch));
  for (auto& l : labels) l = gen() % spec.num_classes();

  DenseGradients<double> g;
  loss_and_gradients(stack, x, labels, g);
  DenseGradients<double> scratch;
  const double eps = 1e-3;
  std::vector<double> analytic, numeric;
  const auto probe = [&](double& param, double grad) {
    const double saved = param;
    param = saved + eps;
    const double up = loss_and_gradients(stack, x, labels, scratch);
    param = saved - eps;
    const double down = loss_and_gradients(stack, x, labels, scratch);
    param = saved;
    analytic.push_back(grad);
    numeric.push_back((up - down) / (2.0 * eps));
  };
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto& layer = stack.layers[l];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) probe(layer.weight.data()[i], g.weight[l].data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], g.bias[l][i]);
  }
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  return norm(diff) / std::max({norm(analytic), norm(numeric), 1e-12});
}

}  // namespace spoof::testing
