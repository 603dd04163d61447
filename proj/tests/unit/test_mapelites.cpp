#include "helpers.hpp"

using namespace spoof;
using namespace spoof::testing;

namespace {

EvolutionConfig small_config(Encoding enc, ImageShape shape, std::size_t pop, std::uint64_t gens, std::uint64_t seed = 1) {
  EvolutionConfig cfg;
  cfg.encoding = enc;
  cfg.population_size = pop;
  cfg.generations = gens;
  cfg.seed = seed;
  cfg.shape = shape;
  return cfg;
}

}  // namespace

TEST(MapElites, EvaluationCountIncludesGenerationZero) {
  auto oracle = toy3_oracle({1, 6, 6});
  const auto r = evolve(*oracle, small_config(Encoding::Cppn, {1, 6, 6}, 8, 20));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.evaluations, 160u);
  EXPECT_EQ(oracle->queries(), 160u);
  EXPECT_EQ(r.generations_completed, 20u);
}

TEST(MapElites, SingleClassConstantOracleKeepsFirstElite) {
  FunctionOracle oracle(1, {1, 4, 4}, [](const Image&) { return ProbVector{{1.0}}; });
  for (auto enc : {Encoding::Cppn, Encoding::Direct}) {
    const auto cfg = small_config(enc, {1, 4, 4}, 5, 10);
    const auto r = evolve(oracle, cfg);
    const auto& e = *r.archive.bin(0);
    EXPECT_EQ(e.generation, 0u);
    EXPECT_EQ(e.ancestor, 0u);
    EXPECT_EQ(e.fitness, 1.0);
    EXPECT_EQ(elite_pcr(r.archive, 0, cfg), 0.0);
    EXPECT_EQ(replay_elite(r.archive, 0, cfg.shape), render(initial_genome(cfg, 0), cfg.shape));
  }
}

TEST(MapElites, ElitesAreBruteForceMaxima) {
  for (auto enc : {Encoding::Cppn, Encoding::Direct}) {
    auto inner = toy3_oracle({1, 5, 5});
    RecordingOracle oracle(*inner);
    const auto r = evolve(oracle, small_config(enc, {1, 5, 5}, 10, 15, 4));
    ASSERT_EQ(oracle.log().size(), 150u);
    for (std::size_t c = 0; c < 3; ++c) {
      double best = -1.0;
      std::size_t best_index = 0;
      for (std::size_t i = 0; i < oracle.log().size(); ++i) {
        if (oracle.log()[i].second[c] > best) {
          best = oracle.log()[i].second[c];
          best_index = i;
        }
      }
      const auto& e = *r.archive.bin(c);
      EXPECT_EQ(e.fitness, best);
      EXPECT_EQ(e.generation, best_index / 10);
      EXPECT_EQ(replay_elite(r.archive, c, {1, 5, 5}), oracle.log()[best_index].first);
      EXPECT_EQ(e.top1, oracle.log()[best_index].second.argmax());
    }
  }
}

TEST(MapElites, TrajectoryIsMonotonePerClass) {
  auto [spec, w] = tiny_mlp({1, 5, 5}, 6, 4, 2);
  BuiltinOracle oracle(spec, w);
  const auto r = evolve(oracle, small_config(Encoding::Cppn, {1, 5, 5}, 6, 30));
  ASSERT_EQ(r.trajectory.size(), 30u * 4u);
  for (std::size_t i = 4; i < r.trajectory.size(); ++i) {
    const auto& prev = r.trajectory[i - 4];
    const auto& cur = r.trajectory[i];
    ASSERT_EQ(prev.class_index, cur.class_index);
    EXPECT_GE(cur.fitness, prev.fitness);
    EXPECT_EQ(cur.queries_so_far, prev.queries_so_far + 6);
  }
  EXPECT_EQ(r.trajectory.back().queries_so_far, 180u);
}

TEST(MapElites, CheckpointInterval) {
  EvolutionConfig cfg;
  cfg.generations = 5000;
  EXPECT_EQ(cfg.checkpoint_interval(), 5u);
  cfg.generations = 999;
  EXPECT_EQ(cfg.checkpoint_interval(), 1u);
  cfg.generations = 2500;
  EXPECT_EQ(cfg.checkpoint_interval(), 2u);

  auto oracle = toy3_oracle({1, 3, 3});
  const auto r = evolve(*oracle, small_config(Encoding::Direct, {1, 3, 3}, 2, 2501));
  // every 2nd generation plus the final one
  EXPECT_EQ(r.trajectory.size(), (1250u + 1u) * 3u);
  EXPECT_EQ(r.trajectory.back().generation, 2500u);
}

TEST(MapElites, ReplayMatchesRecordedFitness) {
  auto [spec, w] = tiny_mlp({2, 6, 6}, 8, 5, 3);
  BuiltinOracle oracle(spec, w);
  const auto cfg = small_config(Encoding::Cppn, {2, 6, 6}, 10, 20, 8);
  const auto r = evolve(oracle, cfg);
  for (auto c : r.archive.filled()) {
    const auto p = oracle.predict_one(replay_elite(r.archive, c, cfg.shape));
    EXPECT_NEAR(p[c], r.archive.bin(c)->fitness, 1e-5);
    const double pcr = elite_pcr(r.archive, c, cfg);
    EXPECT_TRUE(pcr >= 0.0 && pcr <= 1.0);
  }
}

TEST(MapElites, ArchivePersistenceRoundTrip) {
  for (auto enc : {Encoding::Cppn, Encoding::Direct}) {
    auto oracle = toy3_oracle({3, 4, 4});
    const auto cfg = small_config(enc, {3, 4, 4}, 6, 12, 5);
    const auto r = evolve(*oracle, cfg);
    const auto back = archive_from_json(nlohmann::json::parse(to_json(r.archive).dump()));
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto a = replay_elite(r.archive, c, cfg.shape);
      const auto b = replay_elite(back, c, cfg.shape);
      EXPECT_EQ(a, b);
      EXPECT_EQ(encode_png(a), encode_png(b));
      EXPECT_EQ(back.bin(c)->fitness, r.archive.bin(c)->fitness);
      EXPECT_EQ(back.bin(c)->ancestor, r.archive.bin(c)->ancestor);
    }
  }
  EXPECT_SPOOF_ERROR(archive_from_json({{"num_classes", 2}, {"bins", {nullptr}}}), ErrorKind::Format);
}

TEST(MapElites, EmptyBins) {
  Archive a(3);
  EXPECT_TRUE(a.filled().empty());
  EXPECT_SPOOF_ERROR(replay_elite(a, 1, {1, 2, 2}), ErrorKind::NotFound);
  EXPECT_SPOOF_ERROR(a.bin(3), ErrorKind::Index);
  const auto back = archive_from_json(to_json(a));
  EXPECT_EQ(back.size(), 3u);
  EXPECT_TRUE(back.filled().empty());
}

TEST(MapElites, OfferRequiresStrictImprovement) {
  Archive a(1);
  const Genome g = DirectGenome{Image::filled({1, 1, 1}, 0.0f)};
  EXPECT_TRUE(a.offer(0, g, 0.5, 0, 0, 0));
  EXPECT_FALSE(a.offer(0, g, 0.5, 1, 1, 0));
  EXPECT_EQ(a.bin(0)->ancestor, 0u);
  EXPECT_TRUE(a.offer(0, g, 0.6, 2, 1, 0));
  EXPECT_EQ(a.bin(0)->generation, 2u);
}

TEST(MapElites, Deterministic) {
  auto oracle = toy3_oracle({1, 6, 6});
  const auto cfg = small_config(Encoding::Cppn, {1, 6, 6}, 7, 25, 42);
  const auto a = evolve(*oracle, cfg);
  const auto b = evolve(*oracle, cfg);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(to_json(a.archive).dump(), to_json(b.archive).dump());
  auto other = cfg;
  other.seed = 43;
  EXPECT_NE(to_json(evolve(*oracle, other).archive).dump(), to_json(a.archive).dump());
}

TEST(MapElites, OracleFailureKeepsArchive) {
  std::uint64_t calls = 0;
  FunctionOracle oracle(2, {1, 3, 3}, [&calls](const Image& img) {
    if (++calls > 25) fail(ErrorKind::Transport, "down");
    return ProbVector{{img.data()[0], 1.0 - img.data()[0]}};
  });
  const auto r = evolve(oracle, small_config(Encoding::Direct, {1, 3, 3}, 10, 10));
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(r.generations_completed, 2u);
  EXPECT_EQ(r.evaluations, 20u);
  EXPECT_EQ(r.archive.filled().size(), 2u);
}

TEST(MapElites, ConfigurationErrors) {
  auto oracle = toy3_oracle({1, 4, 4});
  EXPECT_SPOOF_ERROR(evolve(*oracle, small_config(Encoding::Cppn, {1, 5, 5}, 4, 4)), ErrorKind::Configuration);
  EXPECT_SPOOF_ERROR(evolve(*oracle, small_config(Encoding::Cppn, {1, 4, 4}, 0, 4)), ErrorKind::Configuration);
  EXPECT_SPOOF_ERROR(evolve(*oracle, small_config(Encoding::Cppn, {1, 4, 4}, 4, 0)), ErrorKind::Configuration);
  auto cfg = small_config(Encoding::Cppn, {1, 4, 4}, 4, 4);
  cfg.mutation.add_node_prob = 2.0;
  EXPECT_SPOOF_ERROR(evolve(*oracle, cfg), ErrorKind::Configuration);
  EXPECT_EQ(oracle->queries(), 0u);
}
