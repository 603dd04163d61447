#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/network.hpp"
#include "spoof/random.hpp"
#include "spoof/weights.hpp"

namespace spoof {

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return images.size(); }
  void check(std::size_t num_classes) const {
    if (images.size() != labels.size()) fail(ErrorKind::Validation, "dataset has different image and label counts");
    for (auto l : labels)
      if (l >= num_classes) fail(ErrorKind::Validation, "label " + std::to_string(l) + " outside " + std::to_string(num_classes) + " classes");
  }
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset val;
};

inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  LabeledDataset out = a;
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

enum class TrainableScope { FinalLayer, AllDense };

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  TrainableScope scope = TrainableScope::AllDense;

  void validate() const {
    if (!(learning_rate > 0.0)) fail(ErrorKind::Configuration, "learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::Configuration, "momentum must lie in [0,1)");
    if (batch_size == 0) fail(ErrorKind::Configuration, "batch size must be >= 1");
  }
};

struct TrainHistory {
  std::vector<double> train_accuracy;
  std::vector<double> val_accuracy;
};

// ---------------------------------------------------------------------------
// Dense stack: (dense | relu)* followed by softmax.

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct DenseParams {
  std::string name;
  RowMatrix<T> weight;  // out x in
  ColVector<T> bias;
};

template <typename T>
struct DenseStack {
  struct Op {
    bool relu = false;
    std::size_t dense = 0;  // index into layers when !relu
  };
  std::vector<DenseParams<T>> layers;
  std::vector<Op> ops;

  std::size_t input_size() const { return static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t output_size() const { return static_cast<std::size_t>(layers.back().weight.rows()); }

  /// Logits for a batch (rows are examples).
  RowMatrix<T> logits(const RowMatrix<T>& x) const {
    RowMatrix<T> a = x;
    for (const auto& op : ops) {
      if (op.relu) {
        a = a.cwiseMax(T(0));
      } else {
        const auto& l = layers[op.dense];
        a = (a * l.weight.transpose()).rowwise() + l.bias.transpose();
      }
    }
    return a;
  }
};

namespace train_detail {

/// Every parametric layer must be dense.
inline void require_dense(const NetworkSpec& spec) {
  spec.infer_shapes();
  bool any = false;
  for (const auto& layer : spec.layers) {
    if (std::holds_alternative<Conv2dLayer>(layer)) fail(ErrorKind::Unsupported, "training conv2d layers is not supported");
    if (std::holds_alternative<MaxPoolLayer>(layer)) fail(ErrorKind::Unsupported, "training through maxpool layers is not supported");
    any = any || std::holds_alternative<DenseLayer>(layer);
  }
  if (!any) fail(ErrorKind::Unsupported, "network has no dense layer to train");
}

inline std::size_t final_dense_index(const NetworkSpec& spec) {
  spec.infer_shapes();
  const std::size_t i = spec.layers.size() >= 2 ? spec.layers.size() - 2 : 0;
  if (spec.layers.size() < 2 || !std::holds_alternative<DenseLayer>(spec.layers[i])) {
    fail(ErrorKind::Unsupported, "final layer before the softmax must be dense");
  }
  return i;
}

}  // namespace train_detail

/// Builds a stack over the given dense-only spec from a weight map.
template <typename T>
DenseStack<T> make_dense_stack(const NetworkSpec& spec, const WeightMap& weights) {
  train_detail::require_dense(spec);
  check_weights(spec, weights);
  DenseStack<T> s;
  for (const auto& layer : spec.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      DenseParams<T> p;
      p.name = d->name;
      p.weight.resize(static_cast<Eigen::Index>(d->out), static_cast<Eigen::Index>(d->in));
      p.bias.resize(static_cast<Eigen::Index>(d->out));
      const auto& w = weights.at(d->name + ".weight").data;
      const auto& b = weights.at(d->name + ".bias").data;
      for (std::size_t i = 0; i < w.size(); ++i) p.weight.data()[i] = static_cast<T>(w[i]);
      for (std::size_t i = 0; i < b.size(); ++i) p.bias[static_cast<Eigen::Index>(i)] = static_cast<T>(b[i]);
      s.ops.push_back({false, s.layers.size()});
      s.layers.push_back(std::move(p));
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      s.ops.push_back({true, 0});
    }
  }
  return s;
}

template <typename T>
void store_dense_stack(const DenseStack<T>& s, WeightMap& weights) {
  for (const auto& l : s.layers) {
    auto& w = weights[l.name + ".weight"];
    w.shape = {static_cast<std::size_t>(l.weight.rows()), static_cast<std::size_t>(l.weight.cols())};
    w.data.resize(static_cast<std::size_t>(l.weight.size()));
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = static_cast<float>(l.weight.data()[i]);
    auto& b = weights[l.name + ".bias"];
    b.shape = {static_cast<std::size_t>(l.bias.size())};
    b.data.resize(static_cast<std::size_t>(l.bias.size()));
    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = static_cast<float>(l.bias[static_cast<Eigen::Index>(i)]);
  }
}

template <typename T>
struct DenseGradients {
  std::vector<RowMatrix<T>> weight;
  std::vector<ColVector<T>> bias;
};

/// Mean cross-entropy of softmax(logits) against `labels`, with exact
/// gradients for every dense layer.
template <typename T>
T loss_and_gradients(const DenseStack<T>& s, const RowMatrix<T>& x, std::span<const std::size_t> labels, DenseGradients<T>& grads) {
  const auto n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0) fail(ErrorKind::Shape, "batch and label counts differ");
  std::vector<RowMatrix<T>> inputs;  // input of each op
  inputs.reserve(s.ops.size());
  RowMatrix<T> a = x;
  for (const auto& op : s.ops) {
    inputs.push_back(a);
    if (op.relu) {
      a = a.cwiseMax(T(0));
    } else {
      const auto& l = s.layers[op.dense];
      a = (a * l.weight.transpose()).rowwise() + l.bias.transpose();
    }
  }
  // softmax + cross-entropy
  T loss = 0;
  RowMatrix<T> delta(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const T m = a.row(r).maxCoeff();
    const Eigen::Array<T, 1, Eigen::Dynamic> e = (a.row(r).array() - m).exp();
    const T sum = e.sum();
    const auto label = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]);
    if (label >= a.cols()) fail(ErrorKind::Validation, "label outside the output layer");
    loss += std::log(sum) - (a(r, label) - m);
    delta.row(r) = e / sum;
    delta(r, label) -= T(1);
  }
  delta /= static_cast<T>(n);

  grads.weight.assign(s.layers.size(), {});
  grads.bias.assign(s.layers.size(), {});
  for (std::size_t k = s.ops.size(); k-- > 0;) {
    const auto& op = s.ops[k];
    const auto& in = inputs[k];
    if (op.relu) {
      delta = (in.array() > T(0)).select(delta, T(0));
    } else {
      const auto& l = s.layers[op.dense];
      grads.weight[op.dense] = delta.transpose() * in;
      grads.bias[op.dense] = delta.colwise().sum().transpose();
      if (k > 0) delta = delta * l.weight;
    }
  }
  return loss / static_cast<T>(n);
}

/// U(-1/sqrt(in), 1/sqrt(in)) for every dense weight and bias, drawn in
/// layer order from one stream.
inline WeightMap init_dense_weights(const NetworkSpec& spec, std::uint64_t seed) {
  spec.infer_shapes();
  Rng rng(stream_seed(seed, 0x1A17));
  WeightMap weights;
  for (const auto& [name, shape] : expected_tensors(spec)) {
    auto t = Tensor::zeros(shape);
    weights.emplace(name, std::move(t));
  }
  for (const auto& layer : spec.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(d->in));
      for (auto& v : weights.at(d->name + ".weight").data) v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
      for (auto& v : weights.at(d->name + ".bias").data) v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(c->in_channels * c->kernel * c->kernel));
      for (auto& v : weights.at(c->name + ".weight").data) v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
      for (auto& v : weights.at(c->name + ".bias").data) v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
    }
  }
  return weights;
}

namespace train_detail {

template <typename T>
RowMatrix<T> to_matrix(std::span<const float> flat, std::size_t rows, std::size_t cols) {
  RowMatrix<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows * cols; ++i) m.data()[i] = static_cast<T>(flat[i]);
  return m;
}

inline RowMatrix<float> images_to_matrix(const std::vector<Image>& images) {
  if (images.empty()) return RowMatrix<float>(0, 0);
  const auto d = images.front().shape().size();
  RowMatrix<float> m(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto px = images[i].data();
    if (px.size() != d) fail(ErrorKind::Shape, "dataset images differ in shape");
    std::copy(px.begin(), px.end(), m.data() + i * d);
  }
  return m;
}

template <typename T>
double accuracy(const DenseStack<T>& s, const RowMatrix<T>& x, const std::vector<std::size_t>& labels) {
  if (x.rows() == 0) return 0.0;
  std::size_t hits = 0;
  constexpr Eigen::Index kChunk = 1024;
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const auto rows = std::min(kChunk, x.rows() - start);
    const RowMatrix<T> z = s.logits(x.middleRows(start, rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
      Eigen::Index arg = 0;
      z.row(r).maxCoeff(&arg);
      hits += static_cast<std::size_t>(arg) == labels[static_cast<std::size_t>(start + r)] ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows());
}

/// Minibatch SGD with momentum (v = mu v + g; w -= lr v). Batch order is a
/// per-epoch permutation drawn from the config seed.
template <typename T>
TrainHistory sgd(DenseStack<T>& s, const RowMatrix<T>& x, const std::vector<std::size_t>& y, const RowMatrix<T>& vx,
                 const std::vector<std::size_t>& vy, const TrainConfig& cfg) {
  TrainHistory h;
  std::vector<RowMatrix<T>> vw;
  std::vector<ColVector<T>> vb;
  for (const auto& l : s.layers) {
    vw.push_back(RowMatrix<T>::Zero(l.weight.rows(), l.weight.cols()));
    vb.push_back(ColVector<T>::Zero(l.bias.size()));
  }
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> order(n);
  DenseGradients<T> g;
  RowMatrix<T> bx;
  std::vector<std::size_t> by;
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mu = static_cast<T>(cfg.momentum);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(stream_seed(cfg.seed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const auto m = std::min(cfg.batch_size, n - start);
      bx.resize(static_cast<Eigen::Index>(m), x.cols());
      by.resize(m);
      for (std::size_t k = 0; k < m; ++k) {
        bx.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(order[start + k]));
        by[k] = y[order[start + k]];
      }
      loss_and_gradients(s, bx, by, g);
      for (std::size_t l = 0; l < s.layers.size(); ++l) {
        vw[l] = mu * vw[l] + g.weight[l];
        vb[l] = mu * vb[l] + g.bias[l];
        s.layers[l].weight -= lr * vw[l];
        s.layers[l].bias -= lr * vb[l];
      }
    }
    h.train_accuracy.push_back(accuracy(s, x, y));
    h.val_accuracy.push_back(vx.rows() ? accuracy(s, vx, vy) : 0.0);
  }
  return h;
}

}  // namespace train_detail

struct TrainResult {
  WeightMap weights;
  TrainHistory history;
};

/// Cross-entropy minibatch SGD. With AllDense every parametric layer must be
/// dense; with FinalLayer only the last dense layer is updated and earlier
/// layers (of any kind) act as a frozen feature extractor. Starts from
/// `initial` when given, else from init_dense_weights(spec, cfg.seed).
inline TrainResult train_dense(const NetworkSpec& spec, const DatasetSplit& data, const TrainConfig& cfg,
                               std::optional<WeightMap> initial = std::nullopt) {
  cfg.validate();
  const auto classes = spec.num_classes();
  data.train.check(classes);
  data.val.check(classes);
  if (data.train.size() == 0) fail(ErrorKind::EmptyInput, "training set is empty");
  TrainResult out;
  out.weights = initial ? std::move(*initial) : init_dense_weights(spec, cfg.seed);
  check_weights(spec, out.weights);

  if (cfg.scope == TrainableScope::AllDense) {
    train_detail::require_dense(spec);
    auto stack = make_dense_stack<float>(spec, out.weights);
    const auto x = train_detail::images_to_matrix(data.train.images);
    const auto vx = train_detail::images_to_matrix(data.val.images);
    out.history = train_detail::sgd(stack, x, data.train.labels, vx, data.val.labels, cfg);
    store_dense_stack(stack, out.weights);
    return out;
  }

  // Frozen backbone: features are computed once.
  const auto last = train_detail::final_dense_index(spec);
  const auto& head = std::get<DenseLayer>(spec.layers[last]);
  const Network backbone(spec, out.weights);
  const auto features = [&](const std::vector<Image>& images) {
    if (images.empty()) return RowMatrix<float>(0, static_cast<Eigen::Index>(head.in));
    return train_detail::to_matrix<float>(backbone.activations(images, last), images.size(), head.in);
  };
  const auto x = features(data.train.images);
  const auto vx = features(data.val.images);
  const NetworkSpec head_spec{{head.in, 1, 1}, {head, SoftmaxLayer{}}};
  WeightMap head_weights{{head.name + ".weight", out.weights.at(head.name + ".weight")},
                         {head.name + ".bias", out.weights.at(head.name + ".bias")}};
  auto stack = make_dense_stack<float>(head_spec, head_weights);
  out.history = train_detail::sgd(stack, x, data.train.labels, vx, data.val.labels, cfg);
  store_dense_stack(stack, out.weights);
  return out;
}

/// Fraction of `data` whose top-1 prediction equals the label.
inline double accuracy(const Network& net, const LabeledDataset& data, std::size_t chunk = 1000) {
  if (data.size() == 0) fail(ErrorKind::EmptyInput, "accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const auto m = std::min(chunk, data.size() - start);
    const auto out = net.forward(std::span<const Image>(data.images).subspan(start, m));
    for (std::size_t k = 0; k < m; ++k) hits += out[k].probs.argmax() == data.labels[start + k] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Adds one output class to the final dense layer: a zero weight row and a
/// zero bias. Every other tensor is copied unchanged.
inline std::pair<NetworkSpec, WeightMap> extend_final_layer(const NetworkSpec& spec, const WeightMap& weights) {
  check_weights(spec, weights);
  const auto last = train_detail::final_dense_index(spec);
  NetworkSpec out_spec = spec;
  auto& head = std::get<DenseLayer>(out_spec.layers[last]);
  WeightMap out = weights;
  auto& w = out.at(head.name + ".weight");
  w.data.resize(w.data.size() + head.in, 0.0f);
  w.shape = {head.out + 1, head.in};
  auto& b = out.at(head.name + ".bias");
  b.data.push_back(0.0f);
  b.shape = {head.out + 1};
  head.out += 1;
  out_spec.infer_shapes();
  return {out_spec, out};
}

struct FineTuneResult {
  NetworkSpec spec;
  WeightMap weights;
  TrainHistory history;
};

/// Extends the classifier to N+1 classes and trains only the final layer on
/// `merged` (labels may include the new class N).
inline FineTuneResult fine_tune_final_layer(const WeightMap& weights, const NetworkSpec& spec, const DatasetSplit& merged,
                                            TrainConfig cfg) {
  auto [ext_spec, ext_weights] = extend_final_layer(spec, weights);
  cfg.scope = TrainableScope::FinalLayer;
  auto trained = train_dense(ext_spec, merged, cfg, std::move(ext_weights));
  return {std::move(ext_spec), std::move(trained.weights), std::move(trained.history)};
}

/// Labels every fooling image `new_class`, takes `per_class_count` images from
/// each target's pool, shuffles with `seed` and splits train/val by
/// `train_fraction` (train count rounded to nearest).
inline DatasetSplit build_fooling_class_dataset(std::span<const std::vector<Image>> by_target, std::size_t per_class_count,
                                                double train_fraction, std::size_t new_class, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) fail(ErrorKind::Configuration, "train fraction must lie in [0,1]");
  if (by_target.empty()) fail(ErrorKind::EmptyInput, "no fooling images supplied");
  std::size_t shortfall = 0;
  std::string detail;
  for (std::size_t t = 0; t < by_target.size(); ++t) {
    if (by_target[t].size() < per_class_count) {
      shortfall += per_class_count - by_target[t].size();
      detail += " class " + std::to_string(t) + ": " + std::to_string(by_target[t].size()) + "/" + std::to_string(per_class_count) + ";";
    }
  }
  if (shortfall > 0) fail(ErrorKind::Capacity, "short of " + std::to_string(shortfall) + " fooling images:" + detail);

  std::vector<Image> pool;
  for (const auto& imgs : by_target) pool.insert(pool.end(), imgs.begin(), imgs.begin() + static_cast<std::ptrdiff_t>(per_class_count));
  Rng rng(stream_seed(seed, 0xF001));
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pool.size())));
  DatasetSplit out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    auto& dst = i < n_train ? out.train : out.val;
    dst.images.push_back(std::move(pool[i]));
    dst.labels.push_back(new_class);
  }
  return out;
}

}  // namespace spoof
