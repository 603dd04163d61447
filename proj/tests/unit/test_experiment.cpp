#include <fstream>

#include "helpers.hpp"

using namespace spoof;
using namespace spoof::testing;

namespace {

struct Victim {
  std::filesystem::path spec_path;
  std::filesystem::path weights_path;
};

/// Writes a small 10-class builtin victim to disk.
Victim write_victim(const std::filesystem::path& dir) {
  auto [spec, w] = tiny_mlp({1, 6, 6}, 12, 10, 31);
  Victim v{dir / "victim.json", dir / "victim.spwt"};
  std::ofstream(v.spec_path) << to_json(spec).dump(2);
  save_weights(w, v.weights_path);
  return v;
}

ExperimentConfig spoof_config(const Victim& v, const std::filesystem::path& out, std::vector<std::uint64_t> seeds, std::uint64_t budget) {
  ExperimentConfig c;
  c.attack = AttackKind::Spoof;
  c.oracle.spec = v.spec_path.string();
  c.oracle.weights = v.weights_path.string();
  c.seeds = std::move(seeds);
  c.output_dir = out;
  c.budget = budget;
  return c;
}

std::string slurp(const std::filesystem::path& p) { return experiment_detail::read_text(p); }

std::size_t count_files(const std::filesystem::path& dir) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
  return n;
}

}  // namespace

TEST(Experiment, ConfigJsonRoundTrip) {
  ExperimentConfig c;
  c.attack = AttackKind::Cppn;
  c.oracle.address = "127.0.0.1:9000";
  c.oracle.timeout_ms = 1234;
  c.seeds = {3, 1, 2};
  c.targets = {0, 5};
  c.output_dir = "runs/x";
  c.population_size = 17;
  c.generations = 33;
  c.mutation.add_node_prob = 0.2;
  c.direct.mutation_rate = 0.3;
  c.success.min_confidence = 0.9;
  const auto j = to_json(c);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["generation0_counted_in_budget"], true);
  EXPECT_EQ(to_json(experiment_config_from_json(nlohmann::json::parse(j.dump()))), j);

  ExperimentConfig s;
  s.oracle.spec = "mlp";
  s.oracle.weights = "w.spwt";
  s.seeds = {0};
  s.output_dir = "o";
  s.early_stop_confidence = 0.99;
  s.init = InitMode::UniformRandom;
  const auto js = to_json(s);
  EXPECT_EQ(js["baseline_query_counted_in_budget"], false);
  EXPECT_EQ(to_json(experiment_config_from_json(js)), js);
}

TEST(Experiment, ConfigValidation) {
  ExperimentConfig c;
  c.oracle.spec = "mlp";
  c.oracle.weights = "w";
  c.output_dir = "o";
  EXPECT_SPOOF_ERROR(c.validate(), ErrorKind::Configuration);
  c.seeds = {1, 1};
  EXPECT_SPOOF_ERROR(c.validate(), ErrorKind::Configuration);
  c.seeds = {1};
  c.oracle.address = "h:1";
  EXPECT_SPOOF_ERROR(c.validate(), ErrorKind::Configuration);
  c.oracle.address.reset();
  c.budget = 0;
  EXPECT_SPOOF_ERROR(c.validate(), ErrorKind::Configuration);
  c.budget = 10;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.classifier_id(), "builtin:mlp");
  EXPECT_SPOOF_ERROR(experiment_config_from_json({{"schema_version", 2}}), ErrorKind::Configuration);
  EXPECT_SPOOF_ERROR(load_experiment_config("/nonexistent/config.json"), ErrorKind::Configuration);
}

TEST(Experiment, SpoofRunWritesArtifacts) {
  const auto dir = temp_dir("exp_artifacts");
  const auto v = write_victim(dir);
  const auto res = run_experiment(spoof_config(v, dir / "run", {4, 5}, 100));
  EXPECT_EQ(res.aborted(), 0u);
  ASSERT_TRUE(res.aggregate.has_value());
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "config.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "aggregate.csv"));
  for (std::uint64_t s : {4, 5}) {
    const auto sd = seed_dir(dir / "run", s);
    for (const char* f : {"records.json", "timing.json", "trajectory.csv"}) EXPECT_TRUE(std::filesystem::exists(sd / f)) << f;
    for (int c = 0; c < 10; ++c) EXPECT_TRUE(std::filesystem::exists(sd / ("class_" + std::to_string(c) + ".png")));
    const auto rec = run_record_from_json(nlohmann::json::parse(slurp(sd / "records.json")));
    EXPECT_EQ(rec.total_queries, 1000u);
    EXPECT_EQ(rec.baseline_queries, 10u);
    EXPECT_FALSE(nlohmann::json::parse(slurp(sd / "records.json")).contains("runtime_seconds"));
  }
  EXPECT_EQ(count_files(dir / "run"), 2u + 2u * 13u);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, DeterministicRecordsAndImages) {
  const auto dir = temp_dir("exp_determinism");
  const auto v = write_victim(dir);
  auto a = spoof_config(v, dir / "a", {1, 2}, 150);
  auto b = spoof_config(v, dir / "b", {1, 2}, 150);
  b.parallel_seeds = true;
  run_experiment(a);
  run_experiment(b);
  for (std::uint64_t s : {1, 2}) {
    EXPECT_EQ(slurp(seed_dir(dir / "a", s) / "records.json"), slurp(seed_dir(dir / "b", s) / "records.json"));
    EXPECT_EQ(slurp(seed_dir(dir / "a", s) / "trajectory.csv"), slurp(seed_dir(dir / "b", s) / "trajectory.csv"));
    for (int c = 0; c < 10; ++c) {
      const auto name = "class_" + std::to_string(c) + ".png";
      EXPECT_EQ(slurp(seed_dir(dir / "a", s) / name), slurp(seed_dir(dir / "b", s) / name));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Experiment, AggregateMatchesRecomputation) {
  const auto dir = temp_dir("exp_aggregate");
  const auto v = write_victim(dir);
  auto cfg = spoof_config(v, dir / "run", {7, 8, 9}, 80);
  cfg.success.min_confidence = 0.3;
  const auto res = run_experiment(cfg);
  const auto records = load_run_records(dir / "run");
  ASSERT_EQ(records.size(), 3u);
  for (const auto& r : records) EXPECT_TRUE(r.runtime_seconds.has_value());
  const auto again = aggregate(records, cfg.success);
  EXPECT_EQ(aggregate_csv_row(again), aggregate_csv_row(*res.aggregate));
  const auto csv = slurp(dir / "run" / "aggregate.csv");
  EXPECT_EQ(csv, std::string(kAggregateCsvHeader) + "\n" + aggregate_csv_row(again) + "\n");
  std::filesystem::remove_all(dir);
}

TEST(Experiment, HeatmapSingleSeedCopiesTrajectory) {
  const auto dir = temp_dir("exp_heatmap");
  const auto v = write_victim(dir);
  run_experiment(spoof_config(v, dir / "run", {0}, 500));
  const auto heat = export_heatmap_csv(dir / "run");
  std::istringstream in(heat);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "class,checkpoint_query,confidence");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  EXPECT_EQ(rows.size(), 110u);
  // same rows, same text, as the per-seed trajectory
  std::istringstream traj(slurp(seed_dir(dir / "run", 0) / "trajectory.csv"));
  std::getline(traj, line);
  std::vector<std::string> source;
  while (std::getline(traj, line)) source.push_back(line);
  EXPECT_EQ(rows, source);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, HeatmapMultiSeedTakesMedian) {
  const auto dir = temp_dir("exp_heatmap_multi");
  std::filesystem::create_directories(dir / "seed_0");
  std::filesystem::create_directories(dir / "seed_1");
  std::filesystem::create_directories(dir / "seed_2");
  experiment_detail::write_text(dir / "seed_0" / "trajectory.csv", "class,query_index,confidence\n0,0,0.1\n0,50,0.5\n");
  experiment_detail::write_text(dir / "seed_1" / "trajectory.csv", "class,query_index,confidence\n0,0,0.2\n0,50,0.9\n");
  experiment_detail::write_text(dir / "seed_2" / "trajectory.csv", "class,query_index,confidence\n0,0,0.3\n0,50,0.6\n");
  EXPECT_EQ(export_heatmap_csv(dir), "class,checkpoint_query,confidence\n0,0,0.20000000000000001\n0,50,0.59999999999999998\n");
  std::filesystem::remove_all(dir);
}

TEST(Experiment, HeatmapMissingInputs) {
  const auto dir = temp_dir("exp_heatmap_empty");
  EXPECT_SPOOF_ERROR(export_heatmap_csv(dir), ErrorKind::NotFound);
  EXPECT_SPOOF_ERROR(export_heatmap_csv(dir / "absent"), ErrorKind::NotFound);
  EXPECT_SPOOF_ERROR(load_run_records(dir), ErrorKind::NotFound);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, EvolveRunWritesArchive) {
  const auto dir = temp_dir("exp_evolve");
  const auto v = write_victim(dir);
  auto cfg = spoof_config(v, dir / "run", {1}, 1);
  cfg.attack = AttackKind::Direct;
  cfg.population_size = 8;
  cfg.generations = 20;
  cfg.targets = {2, 3};
  const auto res = run_experiment(cfg);
  ASSERT_EQ(res.aborted(), 0u);
  const auto sd = seed_dir(dir / "run", 1);
  const auto archive = archive_from_json(nlohmann::json::parse(slurp(sd / "archive.json")));
  EXPECT_EQ(archive.size(), 10u);
  const auto rec = res.seeds[0].record;
  EXPECT_EQ(rec.total_queries, 160u);
  ASSERT_EQ(rec.classes.size(), 2u);
  EXPECT_EQ(rec.classes[0].queries, 16.0);
  EXPECT_EQ(rec.classes[1].final_confidence, archive.bin(3)->fitness);
  EXPECT_EQ(read_png(sd / "class_3.png"), quantize(replay_elite(archive, 3, {1, 6, 6})));
  EXPECT_FALSE(std::filesystem::exists(sd / "class_0.png"));
  std::filesystem::remove_all(dir);
}

TEST(Experiment, OracleFailureMarksSeedAborted) {
  const auto dir = temp_dir("exp_abort");
  std::uint64_t calls = 0;
  FunctionOracle flaky(3, {1, 2, 2}, [&calls](const Image&) {
    if (++calls > 20) fail(ErrorKind::Transport, "gone");
    return ProbVector{{0.2, 0.3, 0.5}};
  });
  ExperimentConfig cfg;
  cfg.oracle.address = "unused:1";
  cfg.seeds = {0, 1};
  cfg.output_dir = dir / "run";
  cfg.budget = 50;
  const auto res = run_experiment(cfg, &flaky);
  EXPECT_EQ(res.aborted(), 2u);
  EXPECT_TRUE(res.seeds[0].error.has_value());
  EXPECT_TRUE(std::filesystem::exists(seed_dir(dir / "run", 0) / "trajectory.csv"));
  std::filesystem::remove_all(dir);
}

TEST(Experiment, BadTargetRejectedBeforeQueries) {
  const auto dir = temp_dir("exp_badtarget");
  auto oracle = make_uniform_oracle(3, {1, 2, 2});
  ExperimentConfig cfg;
  cfg.oracle.address = "unused:1";
  cfg.seeds = {0};
  cfg.targets = {3};
  cfg.output_dir = dir / "run";
  EXPECT_SPOOF_ERROR(run_experiment(cfg, oracle.get()), ErrorKind::Configuration);
  EXPECT_EQ(oracle->queries(), 0u);
  EXPECT_FALSE(std::filesystem::exists(dir / "run" / "config.json"));
  std::filesystem::remove_all(dir);
}
