#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spoof/encodings.hpp"
#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/oracle.hpp"
#include "spoof/random.hpp"

namespace spoof {

struct Elite {
  Genome genome;
  double fitness = 0.0;
  std::uint64_t generation = 0;
  /// Index of the generation-0 individual this elite descends from.
  std::size_t ancestor = 0;
  /// Top-1 class of the elite's image when it was evaluated.
  std::size_t top1 = 0;
};

/// One bin per class.
class Archive {
 public:
  explicit Archive(std::size_t num_classes = 0) : bins_(num_classes) {}

  std::size_t size() const noexcept { return bins_.size(); }
  const std::optional<Elite>& bin(std::size_t c) const {
    if (c >= bins_.size()) fail(ErrorKind::Index, "class " + std::to_string(c) + " outside archive of " + std::to_string(bins_.size()));
    return bins_[c];
  }
  std::vector<std::size_t> filled() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < bins_.size(); ++c)
      if (bins_[c]) out.push_back(c);
    return out;
  }

  /// Replaces bin c iff it is empty or `fitness` strictly exceeds the elite.
  bool offer(std::size_t c, const Genome& g, double fitness, std::uint64_t generation, std::size_t ancestor, std::size_t top1) {
    auto& b = bins_.at(c);
    if (b && !(fitness > b->fitness)) return false;
    b = Elite{g, fitness, generation, ancestor, top1};
    return true;
  }

 private:
  std::vector<std::optional<Elite>> bins_;
};

struct EvolutionConfig {
  Encoding encoding = Encoding::Cppn;
  std::size_t population_size = 400;
  /// Includes generation 0, so the oracle sees population_size * generations images.
  std::uint64_t generations = 5000;
  std::uint64_t seed = 0;
  ImageShape shape{1, 28, 28};
  MutationParams mutation;
  DirectParams direct;

  void validate() const {
    if (population_size == 0) fail(ErrorKind::Configuration, "population size must be >= 1");
    if (generations == 0) fail(ErrorKind::Configuration, "generations must be >= 1");
    Image::check_dimensions(shape);
    mutation.validate();
    if (!(direct.mutation_rate >= 0.0 && direct.mutation_rate <= 1.0)) fail(ErrorKind::Configuration, "direct mutation rate must lie in [0,1]");
  }

  std::uint64_t checkpoint_interval() const { return std::max<std::uint64_t>(1, generations / 1000); }
};

struct EliteTrajectoryPoint {
  std::size_t class_index = 0;
  std::uint64_t generation = 0;
  std::uint64_t queries_so_far = 0;
  double fitness = 0.0;

  bool operator==(const EliteTrajectoryPoint&) const = default;
};

struct EvolutionResult {
  Archive archive;
  /// Ordered by checkpoint, then class.
  std::vector<EliteTrajectoryPoint> trajectory;
  std::uint64_t evaluations = 0;
  std::uint64_t generations_completed = 0;
  std::optional<std::string> error;

  bool ok() const noexcept { return !error.has_value(); }
};

namespace mapelites_detail {
inline constexpr std::uint64_t kLoopStream = 0xE70'0000'0000'0002ULL;
}

/// Generation-0 individual `index`; its own RNG stream lets it be
/// regenerated later without replaying the run.
inline Genome initial_genome(const EvolutionConfig& cfg, std::size_t index) {
  Rng rng(stream_seed(cfg.seed, index));
  return random_genome(cfg.encoding, cfg.shape, rng, cfg.direct);
}

inline Image replay_elite(const Archive& archive, std::size_t c, const ImageShape& shape) {
  const auto& b = archive.bin(c);
  if (!b) fail(ErrorKind::NotFound, "archive bin " + std::to_string(c) + " is empty");
  return render(b->genome, shape);
}

/// MAP-Elites with one bin per class. Oracle failures stop the loop and
/// return the archive as it stood, with `error` set.
inline EvolutionResult evolve(Oracle& oracle, const EvolutionConfig& cfg) {
  cfg.validate();
  if (cfg.shape != oracle.input_shape()) {
    fail(ErrorKind::Configuration, "evolution shape " + to_string(cfg.shape) + " != oracle input " + to_string(oracle.input_shape()));
  }
  const std::size_t n = oracle.num_classes();
  EvolutionResult out;
  out.archive = Archive(n);
  Rng rng(stream_seed(cfg.seed, mapelites_detail::kLoopStream));
  const auto interval = cfg.checkpoint_interval();

  std::vector<Genome> population;
  std::vector<std::size_t> ancestors;
  std::vector<Image> images;
  try {
    for (std::uint64_t gen = 0; gen < cfg.generations; ++gen) {
      population.clear();
      ancestors.clear();
      images.clear();
      if (gen == 0) {
        for (std::size_t i = 0; i < cfg.population_size; ++i) {
          population.push_back(initial_genome(cfg, i));
          ancestors.push_back(i);
        }
      } else {
        const auto filled = out.archive.filled();
        for (std::size_t i = 0; i < cfg.population_size; ++i) {
          const auto& parent = *out.archive.bin(filled[rng.uniform_index(filled.size())]);
          population.push_back(mutate(parent.genome, gen, cfg.mutation, rng));
          ancestors.push_back(parent.ancestor);
        }
      }
      for (const auto& g : population) images.push_back(render(g, cfg.shape));

      const auto probs = oracle.predict(images);
      out.evaluations += images.size();
      for (std::size_t i = 0; i < population.size(); ++i) {
        const auto top1 = probs[i].argmax();
        for (std::size_t c = 0; c < n; ++c) out.archive.offer(c, population[i], probs[i][c], gen, ancestors[i], top1);
      }
      out.generations_completed = gen + 1;

      if ((gen + 1) % interval == 0 || gen + 1 == cfg.generations) {
        for (std::size_t c = 0; c < n; ++c) {
          const auto& b = out.archive.bin(c);
          out.trajectory.push_back({c, gen, out.evaluations, b ? b->fitness : 0.0});
        }
      }
    }
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

/// Changed-location ratio between a filled bin's elite and the generation-0
/// individual it descends from.
inline double elite_pcr(const Archive& archive, std::size_t c, const EvolutionConfig& cfg) {
  const auto& b = archive.bin(c);
  if (!b) fail(ErrorKind::NotFound, "archive bin " + std::to_string(c) + " is empty");
  return changed_location_ratio(render(b->genome, cfg.shape), render(initial_genome(cfg, b->ancestor), cfg.shape));
}

inline nlohmann::json to_json(const Archive& a) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t c = 0; c < a.size(); ++c) {
    const auto& b = a.bin(c);
    if (!b) {
      bins.push_back(nullptr);
      continue;
    }
    bins.push_back({{"class", c}, {"fitness", b->fitness}, {"generation", b->generation}, {"ancestor", b->ancestor},
                    {"top1", b->top1}, {"genome", to_json(b->genome)}});
  }
  return {{"num_classes", a.size()}, {"bins", bins}};
}

inline Archive archive_from_json(const nlohmann::json& j) {
  try {
    Archive a(j.at("num_classes").get<std::size_t>());
    const auto& bins = j.at("bins");
    if (bins.size() != a.size()) fail(ErrorKind::Format, "archive bin count does not match num_classes");
    for (std::size_t c = 0; c < a.size(); ++c) {
      const auto& b = bins[c];
      if (b.is_null()) continue;
      a.offer(c, genome_from_json(b.at("genome")), b.at("fitness").get<double>(), b.at("generation").get<std::uint64_t>(),
              b.at("ancestor").get<std::size_t>(), b.at("top1").get<std::size_t>());
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed archive: ") + e.what());
  }
}

}  // namespace spoof
