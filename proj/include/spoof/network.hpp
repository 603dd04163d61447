#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/weights.hpp"

namespace spoof {

/// Probability vector returned by an oracle: non-negative, sums to 1.
struct ProbVector {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
  }
  bool operator==(const ProbVector&) const = default;
};

/// Max-subtracted softmax, evaluated in double precision.
template <typename T>
ProbVector softmax(std::span<const T> logits) {
  ProbVector out;
  out.probs.resize(logits.size());
  if (logits.empty()) return out;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (T z : logits) max_logit = std::max(max_logit, static_cast<double>(z));
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    sum += out.probs[i];
  }
  for (auto& p : out.probs) p /= sum;
  return out;
}

struct DenseLayer {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct Conv2dLayer {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct MaxPoolLayer {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};

struct ReluLayer {};
struct FlattenLayer {};
struct SoftmaxLayer {};

using Layer = std::variant<DenseLayer, Conv2dLayer, MaxPoolLayer, ReluLayer, FlattenLayer, SoftmaxLayer>;

/// Shape of an activation between layers. Flat activations have channels ==
/// size and height == width == 1.
struct ActivationShape {
  std::size_t channels = 0;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
};

struct NetworkSpec {
  ImageShape input;
  std::vector<Layer> layers;

  /// Activation shape after every layer; validates that adjacent layers
  /// compose and that the network ends in a softmax.
  std::vector<ActivationShape> infer_shapes() const {
    if (input.size() == 0) fail(ErrorKind::Configuration, "network input shape must be non-empty");
    if (layers.empty() || !std::holds_alternative<SoftmaxLayer>(layers.back())) {
      fail(ErrorKind::Configuration, "network must end with a softmax layer");
    }
    std::vector<ActivationShape> shapes;
    ActivationShape cur{input.channels, input.height, input.width};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto where = "layer " + std::to_string(i);
      std::visit(
          [&](const auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, DenseLayer>) {
              if (cur.size() != layer.in) {
                fail(ErrorKind::Configuration, where + " (dense '" + layer.name + "') expects " +
                                                   std::to_string(layer.in) + " inputs, got " +
                                                   std::to_string(cur.size()));
              }
              if (layer.out == 0) fail(ErrorKind::Configuration, where + ": dense output size must be >= 1");
              cur = {layer.out, 1, 1};
            } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
              if (cur.channels != layer.in_channels) {
                fail(ErrorKind::Configuration, where + " (conv2d '" + layer.name + "') expects " +
                                                   std::to_string(layer.in_channels) + " channels, got " +
                                                   std::to_string(cur.channels));
              }
              if (layer.kernel == 0 || layer.stride == 0 || layer.out_channels == 0) {
                fail(ErrorKind::Configuration, where + ": conv2d kernel, stride and channels must be >= 1");
              }
              const std::size_t h = cur.height + 2 * layer.padding;
              const std::size_t w = cur.width + 2 * layer.padding;
              if (h < layer.kernel || w < layer.kernel) fail(ErrorKind::Configuration, where + ": conv2d kernel larger than input");
              cur = {layer.out_channels, (h - layer.kernel) / layer.stride + 1, (w - layer.kernel) / layer.stride + 1};
            } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
              if (layer.kernel == 0 || layer.stride == 0) fail(ErrorKind::Configuration, where + ": maxpool kernel and stride must be >= 1");
              if (cur.height < layer.kernel || cur.width < layer.kernel) fail(ErrorKind::Configuration, where + ": maxpool window larger than input");
              cur = {cur.channels, (cur.height - layer.kernel) / layer.stride + 1, (cur.width - layer.kernel) / layer.stride + 1};
            } else if constexpr (std::is_same_v<L, FlattenLayer>) {
              cur = {cur.size(), 1, 1};
            } else if constexpr (std::is_same_v<L, SoftmaxLayer>) {
              if (i + 1 != layers.size()) fail(ErrorKind::Configuration, where + ": softmax must be the final layer");
              cur = {cur.size(), 1, 1};
            }
          },
          layers[i]);
      shapes.push_back(cur);
    }
    return shapes;
  }

  std::size_t num_classes() const { return infer_shapes().back().size(); }
};

/// Expected tensor name -> shape for every parametric layer.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors(const NetworkSpec& spec) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (const auto& layer : spec.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out.emplace_back(d->name + ".weight", std::vector<std::size_t>{d->out, d->in});
      out.emplace_back(d->name + ".bias", std::vector<std::size_t>{d->out});
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      out.emplace_back(c->name + ".weight", std::vector<std::size_t>{c->out_channels, c->in_channels, c->kernel, c->kernel});
      out.emplace_back(c->name + ".bias", std::vector<std::size_t>{c->out_channels});
    }
  }
  return out;
}

inline void check_weights(const NetworkSpec& spec, const WeightMap& weights) {
  for (const auto& [name, shape] : expected_tensors(spec)) {
    const auto it = weights.find(name);
    if (it == weights.end()) fail(ErrorKind::Configuration, "missing weight tensor '" + name + "'");
    if (it->second.shape != shape) {
      fail(ErrorKind::Configuration, "weight tensor '" + name + "' has shape " + shape_string(it->second.shape) +
                                         ", spec needs " + shape_string(shape));
    }
  }
}

/// 784 -> 256 -> 10 multilayer perceptron for 28x28 grayscale inputs.
inline NetworkSpec mlp_spec() {
  return NetworkSpec{{1, 28, 28},
                     {FlattenLayer{}, DenseLayer{"fc1", 784, 256}, ReluLayer{}, DenseLayer{"fc2", 256, 10}, SoftmaxLayer{}}};
}

/// LeNet-5 style network; conv1 pads by 2 so 28x28 inputs reach the
/// classic 16x5x5 feature map.
inline NetworkSpec lenet_spec() {
  return NetworkSpec{{1, 28, 28},
                     {Conv2dLayer{"conv1", 1, 6, 5, 1, 2}, ReluLayer{}, MaxPoolLayer{2, 2},
                      Conv2dLayer{"conv2", 6, 16, 5, 1, 0}, ReluLayer{}, MaxPoolLayer{2, 2}, FlattenLayer{},
                      DenseLayer{"fc1", 400, 120}, ReluLayer{}, DenseLayer{"fc2", 120, 84}, ReluLayer{},
                      DenseLayer{"fc3", 84, 10}, SoftmaxLayer{}}};
}

inline nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, DenseLayer>) {
            layers.push_back({{"type", "dense"}, {"name", l.name}, {"in", l.in}, {"out", l.out}});
          } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
            layers.push_back({{"type", "conv2d"}, {"name", l.name}, {"in_channels", l.in_channels},
                              {"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride},
                              {"padding", l.padding}});
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            layers.push_back({{"type", "maxpool"}, {"kernel", l.kernel}, {"stride", l.stride}});
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            layers.push_back({{"type", "relu"}});
          } else if constexpr (std::is_same_v<L, FlattenLayer>) {
            layers.push_back({{"type", "flatten"}});
          } else {
            layers.push_back({{"type", "softmax"}});
          }
        },
        layer);
  }
  return {{"input", {spec.input.channels, spec.input.height, spec.input.width}}, {"layers", layers}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  try {
    NetworkSpec spec;
    const auto input = j.at("input").get<std::vector<std::size_t>>();
    if (input.size() != 3) fail(ErrorKind::Configuration, "network input must be [C,H,W]");
    spec.input = {input[0], input[1], input[2]};
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        spec.layers.emplace_back(DenseLayer{l.at("name"), l.at("in"), l.at("out")});
      } else if (type == "conv2d") {
        spec.layers.emplace_back(Conv2dLayer{l.at("name"), l.at("in_channels"), l.at("out_channels"), l.at("kernel"),
                                             l.value("stride", std::size_t{1}), l.value("padding", std::size_t{0})});
      } else if (type == "maxpool") {
        spec.layers.emplace_back(MaxPoolLayer{l.at("kernel"), l.value("stride", l.at("kernel").get<std::size_t>())});
      } else if (type == "relu") {
        spec.layers.emplace_back(ReluLayer{});
      } else if (type == "flatten") {
        spec.layers.emplace_back(FlattenLayer{});
      } else if (type == "softmax") {
        spec.layers.emplace_back(SoftmaxLayer{});
      } else {
        fail(ErrorKind::Configuration, "unknown layer type '" + type + "'");
      }
    }
    spec.infer_shapes();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Configuration, std::string("malformed network spec: ") + e.what());
  }
}

/// Resolves "mlp", "lenet" or a path to a JSON network description.
inline NetworkSpec resolve_network_spec(const std::string& name_or_path) {
  if (name_or_path == "mlp") return mlp_spec();
  if (name_or_path == "lenet") return lenet_spec();
  std::ifstream in(name_or_path);
  if (!in) fail(ErrorKind::NotFound, "unknown network spec '" + name_or_path + "'");
  try {
    return network_spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Configuration, "cannot parse " + name_or_path + ": " + e.what());
  }
}

struct ForwardOutput {
  std::vector<float> logits;
  ProbVector probs;
};

/// Inference engine for a validated NetworkSpec + weights. Dense weights are
/// kept transposed (in x out) so the inner loop runs over contiguous outputs.
class Network {
 public:
  Network(NetworkSpec spec, WeightMap weights) : spec_(std::move(spec)), weights_(std::move(weights)) {
    shapes_ = spec_.infer_shapes();
    check_weights(spec_, weights_);
    for (const auto& layer : spec_.layers) {
      if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        const auto& w = weights_.at(d->name + ".weight").data;
        std::vector<float> t(w.size());
        for (std::size_t o = 0; o < d->out; ++o)
          for (std::size_t i = 0; i < d->in; ++i) t[i * d->out + o] = w[o * d->in + i];
        transposed_.push_back(std::move(t));
      }
    }
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  const WeightMap& weights() const noexcept { return weights_; }
  std::size_t num_classes() const noexcept { return shapes_.back().size(); }
  const ImageShape& input_shape() const noexcept { return spec_.input; }

  std::vector<ForwardOutput> forward(std::span<const Image> batch) const {
    const auto act = activations(batch, spec_.layers.size() - 1);
    const std::size_t n = batch.size();
    std::vector<ForwardOutput> out(n);
    const std::size_t k = num_classes();
    for (std::size_t b = 0; b < n; ++b) {
      out[b].logits.assign(act.begin() + b * k, act.begin() + (b + 1) * k);
      out[b].probs = softmax<float>(out[b].logits);
    }
    return out;
  }

  /// Batch-major output of layers [0, stop), flattened per image.
  std::vector<float> activations(std::span<const Image> batch, std::size_t stop) const {
    if (stop >= spec_.layers.size()) fail(ErrorKind::Index, "activation stop index past the softmax layer");
    for (const auto& img : batch) {
      if (img.shape() != spec_.input) {
        fail(ErrorKind::Shape, "network expects " + to_string(spec_.input) + " inputs, got " + to_string(img.shape()));
      }
    }
    const std::size_t n = batch.size();
    ActivationShape shape{spec_.input.channels, spec_.input.height, spec_.input.width};
    std::vector<float> act(n * shape.size());
    for (std::size_t b = 0; b < n; ++b) std::copy(batch[b].data().begin(), batch[b].data().end(), act.begin() + b * shape.size());

    std::size_t dense_index = 0;
    for (std::size_t li = 0; li < stop; ++li) {
      const auto& layer = spec_.layers[li];
      const ActivationShape next = shapes_[li];
      if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        act = dense(act, n, *d, transposed_[dense_index++]);
      } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
        act = conv2d(act, n, shape, next, *c);
      } else if (const auto* p = std::get_if<MaxPoolLayer>(&layer)) {
        act = maxpool(act, n, shape, next, *p);
      } else if (std::holds_alternative<ReluLayer>(layer)) {
        for (auto& v : act) v = v > 0.0f ? v : 0.0f;
      }
      shape = next;
    }
    return act;
  }

 private:
  std::vector<float> dense(const std::vector<float>& in, std::size_t n, const DenseLayer& d,
                           const std::vector<float>& wt) const {
    const auto& bias = weights_.at(d.name + ".bias").data;
    std::vector<float> out(n * d.out);
    for (std::size_t b = 0; b < n; ++b) {
      float* y = out.data() + b * d.out;
      std::copy(bias.begin(), bias.end(), y);
      const float* x = in.data() + b * d.in;
      for (std::size_t i = 0; i < d.in; ++i) {
        const float xi = x[i];
        if (xi == 0.0f) continue;
        const float* row = wt.data() + i * d.out;
        for (std::size_t o = 0; o < d.out; ++o) y[o] += xi * row[o];
      }
    }
    return out;
  }

  std::vector<float> conv2d(const std::vector<float>& in, std::size_t n, const ActivationShape& is,
                            const ActivationShape& os, const Conv2dLayer& c) const {
    const auto& w = weights_.at(c.name + ".weight").data;
    const auto& bias = weights_.at(c.name + ".bias").data;
    std::vector<float> out(n * os.size());
    const auto pad = static_cast<std::ptrdiff_t>(c.padding);
    for (std::size_t b = 0; b < n; ++b) {
      const float* x = in.data() + b * is.size();
      float* y = out.data() + b * os.size();
      for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
        for (std::size_t oh = 0; oh < os.height; ++oh) {
          for (std::size_t ow = 0; ow < os.width; ++ow) {
            float acc = bias[oc];
            for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
              for (std::size_t kh = 0; kh < c.kernel; ++kh) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * c.stride + kh) - pad;
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.height)) continue;
                for (std::size_t kw = 0; kw < c.kernel; ++kw) {
                  const auto iw = static_cast<std::ptrdiff_t>(ow * c.stride + kw) - pad;
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.width)) continue;
                  acc += w[((oc * c.in_channels + ic) * c.kernel + kh) * c.kernel + kw] *
                         x[(ic * is.height + static_cast<std::size_t>(ih)) * is.width + static_cast<std::size_t>(iw)];
                }
              }
            }
            y[(oc * os.height + oh) * os.width + ow] = acc;
          }
        }
      }
    }
    return out;
  }

  static std::vector<float> maxpool(const std::vector<float>& in, std::size_t n, const ActivationShape& is,
                                    const ActivationShape& os, const MaxPoolLayer& p) {
    std::vector<float> out(n * os.size());
    for (std::size_t b = 0; b < n; ++b) {
      const float* x = in.data() + b * is.size();
      float* y = out.data() + b * os.size();
      for (std::size_t ch = 0; ch < os.channels; ++ch) {
        for (std::size_t oh = 0; oh < os.height; ++oh) {
          for (std::size_t ow = 0; ow < os.width; ++ow) {
            float best = -std::numeric_limits<float>::infinity();
            for (std::size_t kh = 0; kh < p.kernel; ++kh)
              for (std::size_t kw = 0; kw < p.kernel; ++kw)
                best = std::max(best, x[(ch * is.height + oh * p.stride + kh) * is.width + ow * p.stride + kw]);
            y[(ch * os.height + oh) * os.width + ow] = best;
          }
        }
      }
    }
    return out;
  }

  NetworkSpec spec_;
  WeightMap weights_;
  std::vector<ActivationShape> shapes_;
  std::vector<std::vector<float>> transposed_;
};

/// Runs the builtin engine once without constructing a long-lived Network.
inline std::vector<ForwardOutput> forward_builtin(const NetworkSpec& spec, const WeightMap& weights,
                                                  std::span<const Image> batch) {
  return Network(spec, weights).forward(batch);
}

}  // namespace spoof
