#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/network.hpp"

namespace spoof {

inline constexpr double kProbSumTolerance = 1e-5;

/// Query-counted black-box classifier. Subclasses implement evaluate();
/// predict() validates shapes and charges one query per image.
class Oracle {
 public:
  Oracle(std::size_t num_classes, ImageShape input_shape, std::size_t batch_capacity = 1024)
      : num_classes_(num_classes), input_shape_(input_shape), batch_capacity_(batch_capacity) {
    if (num_classes_ == 0) fail(ErrorKind::Configuration, "oracle must expose at least one class");
    if (batch_capacity_ == 0) fail(ErrorKind::Configuration, "batch capacity must be >= 1");
  }
  virtual ~Oracle() = default;

  Oracle(const Oracle&) = delete;
  Oracle& operator=(const Oracle&) = delete;

  std::size_t num_classes() const noexcept { return num_classes_; }
  const ImageShape& input_shape() const noexcept { return input_shape_; }
  std::size_t batch_capacity() const noexcept { return batch_capacity_; }
  std::uint64_t queries() const noexcept { return queries_.load(std::memory_order_relaxed); }

  std::vector<ProbVector> predict(std::span<const Image> batch) {
    if (batch.empty()) fail(ErrorKind::EmptyInput, "predict needs at least one image");
    for (const auto& img : batch) {
      if (img.shape() != input_shape_) {
        fail(ErrorKind::Shape, "oracle expects " + to_string(input_shape_) + " images, got " + to_string(img.shape()));
      }
    }
    std::vector<ProbVector> out;
    out.reserve(batch.size());
    for (std::size_t start = 0; start < batch.size(); start += batch_capacity_) {
      const auto chunk = batch.subspan(start, std::min(batch_capacity_, batch.size() - start));
      auto probs = evaluate(chunk);
      if (probs.size() != chunk.size()) {
        fail(ErrorKind::Protocol, "backend returned " + std::to_string(probs.size()) + " vectors for " +
                                      std::to_string(chunk.size()) + " images");
      }
      for (auto& p : probs) {
        if (p.size() != num_classes_) {
          fail(ErrorKind::Protocol, "probability vector has length " + std::to_string(p.size()) + ", expected " +
                                        std::to_string(num_classes_));
        }
        out.push_back(std::move(p));
      }
      queries_.fetch_add(chunk.size(), std::memory_order_relaxed);
    }
    return out;
  }

  ProbVector predict_one(const Image& img) { return predict(std::span<const Image>(&img, 1)).front(); }

 protected:
  virtual std::vector<ProbVector> evaluate(std::span<const Image> batch) = 0;

 private:
  std::size_t num_classes_;
  ImageShape input_shape_;
  std::size_t batch_capacity_;
  std::atomic<std::uint64_t> queries_{0};
};

/// Oracle backed by the builtin inference engine.
class BuiltinOracle final : public Oracle {
 public:
  explicit BuiltinOracle(Network network, std::size_t batch_capacity = 1024)
      : Oracle(network.num_classes(), network.input_shape(), batch_capacity), network_(std::move(network)) {}

  BuiltinOracle(NetworkSpec spec, WeightMap weights) : BuiltinOracle(Network(std::move(spec), std::move(weights))) {}

  const Network& network() const noexcept { return network_; }

 protected:
  std::vector<ProbVector> evaluate(std::span<const Image> batch) override {
    auto outputs = network_.forward(batch);
    std::vector<ProbVector> probs;
    probs.reserve(outputs.size());
    for (auto& o : outputs) probs.push_back(std::move(o.probs));
    return probs;
  }

 private:
  Network network_;
};

/// Oracle computing each image's probabilities with a caller-supplied
/// function. Used for analytic toy classifiers.
class FunctionOracle final : public Oracle {
 public:
  using Fn = std::function<ProbVector(const Image&)>;

  FunctionOracle(std::size_t num_classes, ImageShape input_shape, Fn fn)
      : Oracle(num_classes, input_shape), fn_(std::move(fn)) {}

 protected:
  std::vector<ProbVector> evaluate(std::span<const Image> batch) override {
    std::vector<ProbVector> out;
    out.reserve(batch.size());
    for (const auto& img : batch) out.push_back(fn_(img));
    return out;
  }

 private:
  Fn fn_;
};

/// Forwards to another oracle and records every (image, probabilities) pair
/// it sees. The wrapped oracle's counter still advances.
class RecordingOracle final : public Oracle {
 public:
  explicit RecordingOracle(Oracle& inner)
      : Oracle(inner.num_classes(), inner.input_shape(), inner.batch_capacity()), inner_(inner) {}

  const std::vector<std::pair<Image, ProbVector>>& log() const noexcept { return log_; }

 protected:
  std::vector<ProbVector> evaluate(std::span<const Image> batch) override {
    auto probs = inner_.predict(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) log_.emplace_back(batch[i], probs[i]);
    return probs;
  }

 private:
  Oracle& inner_;
  std::vector<std::pair<Image, ProbVector>> log_;
};

inline bool is_probability_vector(const ProbVector& p, double tolerance = kProbSumTolerance) {
  double sum = 0.0;
  for (double v : p.probs) {
    if (!std::isfinite(v) || v < 0.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tolerance;
}

}  // namespace spoof
