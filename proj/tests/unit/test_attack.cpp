#include "helpers.hpp"

using namespace spoof;
using namespace spoof::testing;

namespace {

AttackConfig config(std::size_t target, std::uint64_t budget, std::uint64_t seed, InitMode init = InitMode::Black) {
  AttackConfig cfg;
  cfg.target_class = target;
  cfg.budget = budget;
  cfg.seed = seed;
  cfg.init = init;
  return cfg;
}

void expect_same(const AttackResult& a, const AttackResult& b) {
  EXPECT_EQ(a.target_class, b.target_class);
  EXPECT_EQ(a.initial_image, b.initial_image);
  EXPECT_EQ(a.final_image, b.final_image);
  EXPECT_EQ(a.pixel_changes_accepted, b.pixel_changes_accepted);
  EXPECT_EQ(a.queries_used, b.queries_used);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(a.final_confidence, b.final_confidence);
  EXPECT_EQ(a.final_top1, b.final_top1);
  EXPECT_EQ(a.pcr, b.pcr);
  EXPECT_EQ(a.accepted, b.accepted);
}

}  // namespace

TEST(Attack, ConstantOracleAcceptsNothing) {
  auto oracle = make_uniform_oracle(4, {1, 5, 5});
  const auto r = spoof_attack(*oracle, config(2, 300, 1));
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.pixel_changes_accepted, 0u);
  EXPECT_EQ(r.final_image, r.initial_image);
  EXPECT_EQ(r.pcr, 0.0);
  EXPECT_DOUBLE_EQ(r.final_confidence, 0.25);
}

TEST(Attack, ToyChannelZeroOracle) {
  const ImageShape shape{3, 4, 4};
  auto oracle = channel0_oracle(shape);
  const auto r = spoof_attack(*oracle, config(0, 1000, 3));
  ASSERT_TRUE(r.ok());
  ASSERT_GT(r.pixel_changes_accepted, 0u);
  Image img = r.initial_image;
  for (const auto& p : r.accepted) {
    EXPECT_EQ(p.channel, 0u);
    EXPECT_GT(p.value, img.at(0, p.row, p.col));
    img = apply_proposal(img, p);
  }
  for (std::size_t ch = 1; ch < 3; ++ch)
    for (std::size_t row = 0; row < 4; ++row)
      for (std::size_t col = 0; col < 4; ++col) EXPECT_EQ(r.final_image.at(ch, row, col), 0.0f);
  EXPECT_GT(r.final_confidence, 0.8);
}

TEST(Attack, TrajectoryIsMonotoneAndCheckpointed) {
  auto [spec, w] = tiny_mlp({1, 6, 6}, 8, 4, 5);
  BuiltinOracle oracle(spec, w);
  auto cfg = config(1, 230, 9);
  cfg.checkpoint_stride = 50;
  const auto r = spoof_attack(oracle, cfg);
  std::vector<std::uint64_t> idx;
  for (const auto& p : r.trajectory) idx.push_back(p.query_index);
  EXPECT_EQ(idx, (std::vector<std::uint64_t>{0, 50, 100, 150, 200, 230}));
  for (std::size_t i = 1; i < r.trajectory.size(); ++i) EXPECT_GE(r.trajectory[i].confidence, r.trajectory[i - 1].confidence);
  EXPECT_EQ(r.trajectory.back().confidence, r.final_confidence);
}

TEST(Attack, MonotoneOverManySeeds) {
  auto [spec, w] = tiny_mlp({1, 5, 5}, 6, 3, 11);
  BuiltinOracle oracle(spec, w);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto cfg = config(seed % 3, 200, seed, static_cast<InitMode>(seed % 3));
    cfg.checkpoint_stride = 1;
    const auto r = spoof_attack(oracle, cfg);
    for (std::size_t i = 1; i < r.trajectory.size(); ++i) ASSERT_GE(r.trajectory[i].confidence, r.trajectory[i - 1].confidence);
  }
}

TEST(Attack, ReplayReproducesFinalImage) {
  auto [spec, w] = tiny_mlp({2, 4, 4}, 8, 3, 1);
  BuiltinOracle oracle(spec, w);
  const auto r = spoof_attack(oracle, config(0, 400, 4, InitMode::UniformRandom));
  EXPECT_EQ(replay_accepted(r), r.final_image);
  EXPECT_EQ(r.accepted.size(), r.pixel_changes_accepted);
}

TEST(Attack, BudgetIsExactAndBaselineSeparate) {
  auto oracle = make_uniform_oracle(3, {1, 3, 3});
  const auto r = spoof_attack(*oracle, config(0, 500, 0));
  EXPECT_EQ(r.queries_used, 500u);
  EXPECT_EQ(r.baseline_queries, 1u);
  EXPECT_EQ(oracle->queries(), 501u);
}

TEST(Attack, BatchQueryCount) {
  auto [spec, w] = tiny_mlp({1, 4, 4}, 6, 10, 2);
  BuiltinOracle oracle(spec, w);
  std::vector<std::size_t> targets{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto results = spoof_batch(oracle, configs_for_targets(targets, config(0, 500, 7)));
  EXPECT_EQ(oracle.queries(), 10u * 500u + 10u);
  for (const auto& r : results) EXPECT_EQ(r.queries_used, 500u);
}

TEST(Attack, BatchEqualsSerial) {
  auto [spec, w] = tiny_mlp({1, 5, 5}, 8, 3, 3);
  BuiltinOracle oracle(spec, w);
  std::vector<std::size_t> targets{0, 1, 2};
  for (InitMode mode : {InitMode::Black, InitMode::White, InitMode::UniformRandom}) {
    const auto configs = configs_for_targets(targets, config(0, 50, 21, mode));
    const auto batched = spoof_batch(oracle, configs);
    for (std::size_t k = 0; k < 3; ++k) expect_same(batched[k], spoof_attack(oracle, configs[k]));
  }
}

TEST(Attack, TargetStreamsAreIsolated) {
  auto [spec, w] = tiny_mlp({1, 4, 4}, 6, 4, 8);
  BuiltinOracle oracle(spec, w);
  const auto base = config(0, 120, 5);
  std::vector<std::size_t> all{0, 1, 2, 3}, one{2}, reordered{3, 2};
  const auto a = spoof_batch(oracle, configs_for_targets(all, base));
  const auto b = spoof_batch(oracle, configs_for_targets(one, base));
  const auto c = spoof_batch(oracle, configs_for_targets(reordered, base));
  expect_same(a[2], b[0]);
  expect_same(a[2], c[1]);
}

TEST(Attack, DeterministicAcrossRuns) {
  auto [spec, w] = tiny_mlp({1, 4, 4}, 6, 3, 8);
  BuiltinOracle oracle(spec, w);
  expect_same(spoof_attack(oracle, config(1, 300, 13)), spoof_attack(oracle, config(1, 300, 13)));
  EXPECT_NE(spoof_attack(oracle, config(1, 300, 13)).accepted, spoof_attack(oracle, config(1, 300, 14)).accepted);
}

TEST(Attack, ConfigurationErrors) {
  auto oracle = make_uniform_oracle(3, {1, 2, 2});
  EXPECT_SPOOF_ERROR(spoof_attack(*oracle, config(0, 0, 0)), ErrorKind::Configuration);
  EXPECT_SPOOF_ERROR(spoof_attack(*oracle, config(3, 10, 0)), ErrorKind::Configuration);
  auto bad_stride = config(0, 10, 0);
  bad_stride.checkpoint_stride = 0;
  EXPECT_SPOOF_ERROR(spoof_attack(*oracle, bad_stride), ErrorKind::Configuration);
  auto bad_stop = config(0, 10, 0);
  bad_stop.early_stop_confidence = 1.5;
  EXPECT_SPOOF_ERROR(spoof_attack(*oracle, bad_stop), ErrorKind::Configuration);
  std::vector<std::size_t> dup{1, 1};
  EXPECT_SPOOF_ERROR(spoof_batch(*oracle, configs_for_targets(dup, config(0, 10, 0))), ErrorKind::Configuration);
  EXPECT_EQ(oracle->queries(), 0u);
}

TEST(Attack, EarlyStop) {
  auto oracle = channel0_oracle({1, 4, 4});
  auto cfg = config(0, 5000, 2);
  cfg.early_stop_confidence = 0.5;
  const auto r = spoof_attack(*oracle, cfg);
  EXPECT_GE(r.final_confidence, 0.5);
  EXPECT_LT(r.queries_used, 5000u);
  EXPECT_EQ(oracle->queries(), r.queries_used + 1);
  EXPECT_EQ(r.trajectory.back().query_index, r.queries_used);
}

TEST(Attack, OracleFailureReturnsPartialResult) {
  std::uint64_t calls = 0;
  FunctionOracle oracle(2, {1, 3, 3}, [&calls](const Image& img) {
    if (++calls > 40) fail(ErrorKind::Transport, "link down");
    return ProbVector{{img.data()[0], 1.0 - img.data()[0]}};
  });
  const auto r = spoof_attack(oracle, config(0, 100, 1));
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(r.queries_used, 39u);
  EXPECT_EQ(replay_accepted(r), r.final_image);
}

TEST(Attack, BlackStartPcrIsNonzeroFraction) {
  const ImageShape shape{2, 6, 6};
  auto [spec, w] = tiny_mlp(shape, 8, 3, 17);
  BuiltinOracle oracle(spec, w);
  const auto r = spoof_attack(oracle, config(2, 300, 6));
  std::size_t nonzero = 0;
  for (std::size_t row = 0; row < 6; ++row)
    for (std::size_t col = 0; col < 6; ++col)
      if (r.final_image.at(0, row, col) != 0.0f || r.final_image.at(1, row, col) != 0.0f) ++nonzero;
  EXPECT_GT(nonzero, 0u);
  EXPECT_DOUBLE_EQ(r.pcr, static_cast<double>(nonzero) / 36.0);
}

TEST(Attack, ProposalStreamIndependentOfInitMode) {
  const ImageShape shape{3, 8, 8};
  const auto cfg = config(4, 100, 99);
  auto white = cfg;
  white.init = InitMode::White;
  auto random = cfg;
  random.init = InitMode::UniformRandom;
  HillClimber a(cfg, shape), b(white, shape), c(random, shape);
  for (int i = 0; i < 200; ++i) {
    const auto p = a.propose();
    EXPECT_EQ(p, b.propose());
    EXPECT_EQ(p, c.propose());
    EXPECT_LT(p.row, 8u);
    EXPECT_LT(p.channel, 3u);
    EXPECT_GE(p.value, 0.0f);
    EXPECT_LE(p.value, 1.0f);
  }
}

TEST(Attack, InitAblationRunsAllModes) {
  auto [spec, w] = tiny_mlp({1, 4, 4}, 6, 3, 4);
  BuiltinOracle oracle(spec, w);
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto out = init_ablation(oracle, 60, seeds, 20);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].mode, InitMode::Black);
  EXPECT_EQ(out[1].mode, InitMode::White);
  EXPECT_EQ(out[2].mode, InitMode::UniformRandom);
  for (const auto& s : out) {
    ASSERT_EQ(s.results.size(), 2u);
    EXPECT_EQ(s.results[0].size(), 3u);
    ASSERT_EQ(s.median_trajectory.size(), 4u);
    EXPECT_EQ(s.median_trajectory.back().query_index, 60u);
  }
  EXPECT_EQ(oracle.queries(), 3u * 2u * (3u * 60u + 3u));
}

TEST(Attack, ConfidenceAtIsStepFunction) {
  const std::vector<TrajectoryPoint> t{{0, 0.1}, {50, 0.3}, {100, 0.7}};
  EXPECT_EQ(confidence_at(t, 0), 0.1);
  EXPECT_EQ(confidence_at(t, 49), 0.1);
  EXPECT_EQ(confidence_at(t, 50), 0.3);
  EXPECT_EQ(confidence_at(t, 1000), 0.7);
  EXPECT_SPOOF_ERROR(confidence_at(std::span<const TrajectoryPoint>{}, 1), ErrorKind::EmptyInput);
}
