#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/oracle.hpp"
#include "spoof/random.hpp"
#include "spoof/stats.hpp"

namespace spoof {

struct AttackConfig {
  std::size_t target_class = 0;
  std::uint64_t budget = 50000;
  std::uint64_t seed = 0;
  InitMode init = InitMode::Black;
  std::optional<double> early_stop_confidence;
  std::uint64_t checkpoint_stride = 50;
};

struct TrajectoryPoint {
  std::uint64_t query_index = 0;
  double confidence = 0.0;

  bool operator==(const TrajectoryPoint&) const = default;
};

struct AttackResult {
  std::size_t target_class = 0;
  Image initial_image;
  Image final_image;
  /// Accepted updates (the PC counter).
  std::uint64_t pixel_changes_accepted = 0;
  /// Loop iterations spent; the baseline query is reported separately.
  std::uint64_t queries_used = 0;
  std::uint64_t baseline_queries = 0;
  std::vector<TrajectoryPoint> trajectory;
  double final_confidence = 0.0;
  std::size_t final_top1 = 0;
  /// Changed spatial locations of final vs initial image.
  double pcr = 0.0;
  std::vector<PixelProposal> accepted;
  std::optional<std::string> error;

  bool ok() const noexcept { return !error.has_value(); }
};

/// Seed of the proposal stream for one target; independent of which other
/// targets are attacked alongside it.
inline std::uint64_t target_stream_seed(std::uint64_t global_seed, std::size_t target_class) {
  return stream_seed(global_seed, target_class);
}

namespace attack_detail {

inline constexpr std::uint64_t kCanvasStream = 0xC4A7'0000'0000'0001ULL;

inline void validate(const AttackConfig& cfg, const Oracle& oracle) {
  if (cfg.budget == 0) fail(ErrorKind::Configuration, "query budget must be >= 1");
  if (cfg.target_class >= oracle.num_classes()) {
    fail(ErrorKind::Configuration, "target class " + std::to_string(cfg.target_class) + " outside oracle's " +
                                       std::to_string(oracle.num_classes()) + " classes");
  }
  if (cfg.checkpoint_stride == 0) fail(ErrorKind::Configuration, "checkpoint stride must be >= 1");
  if (cfg.early_stop_confidence && (*cfg.early_stop_confidence <= 0.0 || *cfg.early_stop_confidence > 1.0)) {
    fail(ErrorKind::Configuration, "early-stop confidence must lie in (0, 1]");
  }
}

}  // namespace attack_detail

/// State of one single-sample greedy hill climber. Both the serial and the
/// batched runners drive the same state machine, which is what makes their
/// outputs identical.
class HillClimber {
 public:
  HillClimber(const AttackConfig& cfg, const ImageShape& shape)
      : cfg_(cfg), rng_(target_stream_seed(cfg.seed, cfg.target_class)) {
    result_.target_class = cfg.target_class;
    result_.initial_image = new_canvas(
        shape, cfg.init, stream_seed(target_stream_seed(cfg.seed, cfg.target_class), attack_detail::kCanvasStream));
    current_ = result_.initial_image;
  }

  const Image& current() const noexcept { return current_; }
  const AttackConfig& config() const noexcept { return cfg_; }

  void start(const ProbVector& baseline) {
    result_.baseline_queries = 1;
    confidence_ = baseline[cfg_.target_class];
    top1_ = baseline.argmax();
    result_.trajectory.push_back({0, confidence_});
  }

  bool done() const noexcept {
    if (result_.error) return true;
    if (result_.queries_used >= cfg_.budget) return true;
    return cfg_.early_stop_confidence && confidence_ >= *cfg_.early_stop_confidence;
  }

  /// Draws (row, col, channel) uniformly, then v ~ U(0,1).
  PixelProposal propose() {
    const auto& s = current_.shape();
    PixelProposal p;
    p.row = static_cast<std::size_t>(rng_.uniform_index(s.height));
    p.col = static_cast<std::size_t>(rng_.uniform_index(s.width));
    p.channel = static_cast<std::size_t>(rng_.uniform_index(s.channels));
    p.value = static_cast<float>(rng_.uniform01());
    return p;
  }

  /// Keeps the candidate iff it strictly raises the target probability.
  void observe(const PixelProposal& p, Image candidate, const ProbVector& probs) {
    ++result_.queries_used;
    const double c = probs[cfg_.target_class];
    if (c > confidence_) {
      current_ = std::move(candidate);
      confidence_ = c;
      top1_ = probs.argmax();
      ++result_.pixel_changes_accepted;
      result_.accepted.push_back(p);
    }
    if (result_.queries_used % cfg_.checkpoint_stride == 0) result_.trajectory.push_back({result_.queries_used, confidence_});
  }

  void abort(const std::string& message) { result_.error = message; }

  AttackResult finish() {
    if (!result_.trajectory.empty() && result_.trajectory.back().query_index != result_.queries_used) {
      result_.trajectory.push_back({result_.queries_used, confidence_});
    }
    result_.final_image = current_;
    result_.final_confidence = confidence_;
    result_.final_top1 = top1_;
    result_.pcr = changed_location_ratio(result_.final_image, result_.initial_image);
    return std::move(result_);
  }

 private:
  AttackConfig cfg_;
  Rng rng_;
  Image current_;
  double confidence_ = 0.0;
  std::size_t top1_ = 0;
  AttackResult result_;
};

/// Greedy single-pixel hill climbing against one target class: one baseline
/// query, then `budget` proposal queries. Oracle failures end the run early
/// with `error` set and the partial state returned.
inline AttackResult spoof_attack(Oracle& oracle, const AttackConfig& cfg) {
  attack_detail::validate(cfg, oracle);
  HillClimber climber(cfg, oracle.input_shape());
  try {
    climber.start(oracle.predict_one(climber.current()));
    while (!climber.done()) {
      const auto p = climber.propose();
      Image candidate = apply_proposal(climber.current(), p);
      const auto probs = oracle.predict_one(candidate);
      climber.observe(p, std::move(candidate), probs);
    }
  } catch (const Error& e) {
    climber.abort(e.what());
  }
  return climber.finish();
}

/// Runs one independent climber per config, evaluating all live candidates
/// in a single batched predict per step. Per-target results equal
/// spoof_attack with the same config.
inline std::vector<AttackResult> spoof_batch(Oracle& oracle, std::span<const AttackConfig> configs) {
  if (configs.empty()) fail(ErrorKind::Configuration, "spoof_batch needs at least one target");
  std::set<std::size_t> targets;
  for (const auto& cfg : configs) {
    attack_detail::validate(cfg, oracle);
    if (cfg.budget != configs.front().budget) fail(ErrorKind::Configuration, "all targets must share the query budget");
    if (!targets.insert(cfg.target_class).second) {
      fail(ErrorKind::Configuration, "duplicate target class " + std::to_string(cfg.target_class));
    }
  }

  std::vector<HillClimber> climbers;
  climbers.reserve(configs.size());
  for (const auto& cfg : configs) climbers.emplace_back(cfg, oracle.input_shape());

  try {
    std::vector<Image> batch;
    batch.reserve(climbers.size());
    for (const auto& c : climbers) batch.push_back(c.current());
    const auto baseline = oracle.predict(batch);
    for (std::size_t i = 0; i < climbers.size(); ++i) climbers[i].start(baseline[i]);

    std::vector<std::size_t> live;
    std::vector<PixelProposal> proposals;
    for (;;) {
      live.clear();
      proposals.clear();
      batch.clear();
      for (std::size_t i = 0; i < climbers.size(); ++i) {
        if (climbers[i].done()) continue;
        live.push_back(i);
        proposals.push_back(climbers[i].propose());
        batch.push_back(apply_proposal(climbers[i].current(), proposals.back()));
      }
      if (live.empty()) break;
      const auto probs = oracle.predict(batch);
      for (std::size_t k = 0; k < live.size(); ++k) climbers[live[k]].observe(proposals[k], std::move(batch[k]), probs[k]);
    }
  } catch (const Error& e) {
    for (auto& c : climbers)
      if (!c.done()) c.abort(e.what());
  }

  std::vector<AttackResult> results;
  results.reserve(climbers.size());
  for (auto& c : climbers) results.push_back(c.finish());
  return results;
}

/// One config per target class with shared settings.
inline std::vector<AttackConfig> configs_for_targets(std::span<const std::size_t> targets, const AttackConfig& base) {
  std::vector<AttackConfig> out;
  out.reserve(targets.size());
  for (auto t : targets) {
    AttackConfig cfg = base;
    cfg.target_class = t;
    out.push_back(cfg);
  }
  return out;
}

/// Rebuilds the final image from the initial canvas and the accepted
/// proposals.
inline Image replay_accepted(const AttackResult& result) {
  Image img = result.initial_image;
  for (const auto& p : result.accepted) img = apply_proposal(img, p);
  return img;
}

/// Confidence of a step-function trajectory at `query_index`.
inline double confidence_at(std::span<const TrajectoryPoint> trajectory, std::uint64_t query_index) {
  if (trajectory.empty()) fail(ErrorKind::EmptyInput, "empty trajectory");
  double value = trajectory.front().confidence;
  for (const auto& p : trajectory) {
    if (p.query_index > query_index) break;
    value = p.confidence;
  }
  return value;
}

struct AblationSummary {
  InitMode mode = InitMode::Black;
  /// results[s][k]: seed s, target k.
  std::vector<std::vector<AttackResult>> results;
  /// Median confidence over all (seed, target) runs at each checkpoint.
  std::vector<TrajectoryPoint> median_trajectory;
};

/// Runs spoof_batch under black, white and uniform-random canvases with the
/// same seeds; only the starting canvas differs between modes.
inline std::vector<AblationSummary> init_ablation(Oracle& oracle, std::uint64_t budget, std::span<const std::uint64_t> seeds,
                                                  std::uint64_t checkpoint_stride = 50) {
  if (budget == 0) fail(ErrorKind::Configuration, "query budget must be >= 1");
  if (seeds.empty()) fail(ErrorKind::Configuration, "init ablation needs at least one seed");
  std::vector<std::size_t> targets(oracle.num_classes());
  for (std::size_t c = 0; c < targets.size(); ++c) targets[c] = c;

  std::vector<AblationSummary> out;
  for (InitMode mode : {InitMode::Black, InitMode::White, InitMode::UniformRandom}) {
    AblationSummary summary;
    summary.mode = mode;
    for (auto seed : seeds) {
      AttackConfig base;
      base.budget = budget;
      base.seed = seed;
      base.init = mode;
      base.checkpoint_stride = checkpoint_stride;
      const auto configs = configs_for_targets(targets, base);
      summary.results.push_back(spoof_batch(oracle, configs));
    }
    std::set<std::uint64_t> grid;
    for (const auto& per_seed : summary.results)
      for (const auto& r : per_seed)
        for (const auto& p : r.trajectory) grid.insert(p.query_index);
    for (auto q : grid) {
      std::vector<double> values;
      for (const auto& per_seed : summary.results)
        for (const auto& r : per_seed) values.push_back(confidence_at(r.trajectory, q));
      summary.median_trajectory.push_back({q, median(values)});
    }
    out.push_back(std::move(summary));
  }
  return out;
}

}  // namespace spoof
