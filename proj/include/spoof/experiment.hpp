#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "spoof/attack.hpp"
#include "spoof/encodings.hpp"
#include "spoof/error.hpp"
#include "spoof/mapelites.hpp"
#include "spoof/metrics.hpp"
#include "spoof/network.hpp"
#include "spoof/oracle.hpp"
#include "spoof/png.hpp"
#include "spoof/weights.hpp"
#include "spoof/wire.hpp"

namespace spoof {

inline constexpr int kConfigSchemaVersion = 1;

enum class AttackKind { Spoof, Direct, Cppn };

inline std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Spoof: return "spoof";
    case AttackKind::Direct: return "direct";
    case AttackKind::Cppn: return "cppn";
  }
  return "spoof";
}

inline AttackKind parse_attack_kind(std::string_view s) {
  if (s == "spoof") return AttackKind::Spoof;
  if (s == "direct") return AttackKind::Direct;
  if (s == "cppn") return AttackKind::Cppn;
  fail(ErrorKind::Configuration, "unknown attack '" + std::string(s) + "' (expected spoof, direct or cppn)");
}

/// Exactly one of builtin (spec + weights) or remote (address).
struct OracleConfig {
  std::optional<std::string> spec;
  std::optional<std::string> weights;
  std::optional<std::string> address;
  int timeout_ms = 60000;

  void validate() const {
    const bool builtin = spec || weights;
    if (builtin == address.has_value()) fail(ErrorKind::Configuration, "oracle must be exactly one of builtin {spec, weights} or remote {address}");
    if (builtin && !(spec && weights)) fail(ErrorKind::Configuration, "builtin oracle needs both spec and weights");
  }

  std::string id() const { return address ? "remote:" + *address : "builtin:" + std::filesystem::path(*spec).stem().string(); }
};

struct ExperimentConfig {
  AttackKind attack = AttackKind::Spoof;
  OracleConfig oracle;
  std::string classifier;  // defaults to oracle.id()
  std::vector<std::uint64_t> seeds;
  /// Target classes; empty means every class the oracle exposes.
  std::vector<std::size_t> targets;
  std::filesystem::path output_dir;

  // spoof
  std::uint64_t budget = 500;
  InitMode init = InitMode::Black;
  std::optional<double> early_stop_confidence;
  std::uint64_t checkpoint_stride = 50;

  // direct / cppn
  std::size_t population_size = 400;
  std::uint64_t generations = 5000;
  MutationParams mutation;
  DirectParams direct;

  SuccessPolicy success;
  bool parallel_seeds = false;

  void validate() const {
    oracle.validate();
    if (seeds.empty()) fail(ErrorKind::Configuration, "at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail(ErrorKind::Configuration, "seeds must be distinct");
    if (std::set<std::size_t>(targets.begin(), targets.end()).size() != targets.size()) fail(ErrorKind::Configuration, "targets must be distinct");
    if (output_dir.empty()) fail(ErrorKind::Configuration, "output directory is required");
    if (attack == AttackKind::Spoof) {
      if (budget == 0) fail(ErrorKind::Configuration, "query budget must be >= 1");
      if (checkpoint_stride == 0) fail(ErrorKind::Configuration, "checkpoint stride must be >= 1");
    } else {
      if (population_size == 0) fail(ErrorKind::Configuration, "population size must be >= 1");
      if (generations == 0) fail(ErrorKind::Configuration, "generations must be >= 1");
      mutation.validate();
    }
    if (success.min_confidence && !(*success.min_confidence >= 0.0 && *success.min_confidence <= 1.0)) {
      fail(ErrorKind::Configuration, "ASR threshold must lie in [0,1]");
    }
  }

  std::string classifier_id() const { return classifier.empty() ? oracle.id() : classifier; }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json oracle;
  if (c.oracle.address) {
    oracle["remote"] = {{"address", *c.oracle.address}, {"timeout_ms", c.oracle.timeout_ms}};
  } else {
    oracle["builtin"] = {{"spec", c.oracle.spec.value_or("")}, {"weights", c.oracle.weights.value_or("")}};
  }
  nlohmann::json j = {{"schema_version", kConfigSchemaVersion},
                      {"attack", to_string(c.attack)},
                      {"oracle", oracle},
                      {"classifier", c.classifier_id()},
                      {"seeds", c.seeds},
                      {"targets", c.targets},
                      {"output_dir", c.output_dir.string()},
                      {"parallel_seeds", c.parallel_seeds},
                      {"asr_threshold", c.success.min_confidence ? nlohmann::json(*c.success.min_confidence) : nlohmann::json(nullptr)}};
  if (c.attack == AttackKind::Spoof) {
    j["budget"] = c.budget;
    j["init"] = to_string(c.init);
    j["checkpoint_stride"] = c.checkpoint_stride;
    j["early_stop_confidence"] = c.early_stop_confidence ? nlohmann::json(*c.early_stop_confidence) : nlohmann::json(nullptr);
    j["baseline_query_counted_in_budget"] = false;
  } else {
    j["population_size"] = c.population_size;
    j["generations"] = c.generations;
    j["generation0_counted_in_budget"] = true;
    j["mutation"] = {{"weight_perturb_prob", c.mutation.weight_perturb_prob}, {"weight_sigma", c.mutation.weight_sigma},
                     {"add_connection_prob", c.mutation.add_connection_prob}, {"add_node_prob", c.mutation.add_node_prob},
                     {"toggle_enable_prob", c.mutation.toggle_enable_prob},
                     {"activation_swap_prob", c.mutation.activation_swap_prob}};
    j["direct"] = {{"mutation_rate", c.direct.mutation_rate}, {"rate_halving_period", c.direct.rate_halving_period}};
  }
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  try {
    const auto version = j.at("schema_version").get<int>();
    if (version != kConfigSchemaVersion) fail(ErrorKind::Configuration, "unsupported schema_version " + std::to_string(version));
    ExperimentConfig c;
    c.attack = parse_attack_kind(j.at("attack").get<std::string>());
    const auto& o = j.at("oracle");
    if (o.contains("builtin") && o.contains("remote")) fail(ErrorKind::Configuration, "oracle must name exactly one backend");
    if (o.contains("builtin")) {
      c.oracle.spec = o["builtin"].at("spec").get<std::string>();
      c.oracle.weights = o["builtin"].at("weights").get<std::string>();
    } else if (o.contains("remote")) {
      c.oracle.address = o["remote"].at("address").get<std::string>();
      c.oracle.timeout_ms = o["remote"].value("timeout_ms", 60000);
    } else {
      fail(ErrorKind::Configuration, "oracle must be builtin or remote");
    }
    c.classifier = j.value("classifier", std::string{});
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.targets = j.value("targets", std::vector<std::size_t>{});
    c.output_dir = j.at("output_dir").get<std::string>();
    c.parallel_seeds = j.value("parallel_seeds", false);
    if (j.contains("asr_threshold") && !j["asr_threshold"].is_null()) c.success.min_confidence = j["asr_threshold"].get<double>();
    c.budget = j.value("budget", c.budget);
    if (j.contains("init")) c.init = parse_init_mode(j["init"].get<std::string>());
    c.checkpoint_stride = j.value("checkpoint_stride", c.checkpoint_stride);
    if (j.contains("early_stop_confidence") && !j["early_stop_confidence"].is_null()) {
      c.early_stop_confidence = j["early_stop_confidence"].get<double>();
    }
    c.population_size = j.value("population_size", c.population_size);
    c.generations = j.value("generations", c.generations);
    if (j.contains("mutation")) {
      const auto& m = j["mutation"];
      c.mutation.weight_perturb_prob = m.value("weight_perturb_prob", c.mutation.weight_perturb_prob);
      c.mutation.weight_sigma = m.value("weight_sigma", c.mutation.weight_sigma);
      c.mutation.add_connection_prob = m.value("add_connection_prob", c.mutation.add_connection_prob);
      c.mutation.add_node_prob = m.value("add_node_prob", c.mutation.add_node_prob);
      c.mutation.toggle_enable_prob = m.value("toggle_enable_prob", c.mutation.toggle_enable_prob);
      c.mutation.activation_swap_prob = m.value("activation_swap_prob", c.mutation.activation_swap_prob);
    }
    if (j.contains("direct")) {
      c.direct.mutation_rate = j["direct"].value("mutation_rate", c.direct.mutation_rate);
      c.direct.rate_halving_period = j["direct"].value("rate_halving_period", c.direct.rate_halving_period);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Configuration, std::string("malformed experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Configuration, "cannot read config " + path.string());
  try {
    return experiment_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Configuration, path.string() + ": " + e.what());
  }
}

inline std::unique_ptr<Oracle> open_oracle(const OracleConfig& cfg) {
  cfg.validate();
  if (cfg.address) return std::make_unique<RemoteOracle>(*cfg.address, cfg.timeout_ms);
  return std::make_unique<BuiltinOracle>(resolve_network_spec(*cfg.spec), load_weights(*cfg.weights));
}

namespace experiment_detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::NotFound, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// %.17g keeps doubles exact in CSV.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) fail(ErrorKind::Io, "output directory " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace experiment_detail

struct SeedOutcome {
  std::uint64_t seed = 0;
  RunRecord record;
  std::optional<std::string> error;
};

struct ExperimentResult {
  std::filesystem::path run_dir;
  std::vector<SeedOutcome> seeds;
  std::optional<Aggregate> aggregate;

  std::size_t aborted() const {
    std::size_t n = 0;
    for (const auto& s : seeds) n += s.error ? 1 : 0;
    return n;
  }
};

inline std::filesystem::path seed_dir(const std::filesystem::path& run_dir, std::uint64_t seed) {
  return run_dir / ("seed_" + std::to_string(seed));
}

namespace experiment_detail {

inline SeedOutcome run_spoof_seed(Oracle& oracle, const ExperimentConfig& cfg, const std::vector<std::size_t>& targets,
                                  std::uint64_t seed, const std::filesystem::path& dir) {
  AttackConfig base;
  base.budget = cfg.budget;
  base.seed = seed;
  base.init = cfg.init;
  base.early_stop_confidence = cfg.early_stop_confidence;
  base.checkpoint_stride = cfg.checkpoint_stride;
  const auto configs = configs_for_targets(targets, base);

  const auto t0 = std::chrono::steady_clock::now();
  const auto results = spoof_batch(oracle, configs);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  SeedOutcome out;
  out.seed = seed;
  RunRecord& r = out.record;
  r.attack = std::string(to_string(cfg.attack));
  r.classifier = cfg.classifier_id();
  r.seed = seed;
  r.runtime_seconds = seconds;
  std::string csv = "class,query_index,confidence\n";
  for (const auto& res : results) {
    if (res.error && !out.error) out.error = "class " + std::to_string(res.target_class) + ": " + *res.error;
    ClassOutcome o{res.target_class, res.final_confidence, res.final_top1, res.final_top1 == res.target_class, res.pcr,
                   static_cast<double>(res.queries_used)};
    r.classes.push_back(o);
    r.total_queries += res.queries_used;
    r.baseline_queries += res.baseline_queries;
    for (const auto& p : res.trajectory) csv += std::to_string(res.target_class) + "," + std::to_string(p.query_index) + "," + num(p.confidence) + "\n";
    write_png(dir / ("class_" + std::to_string(res.target_class) + ".png"), res.final_image);
  }
  write_text(dir / "trajectory.csv", csv);
  return out;
}

inline SeedOutcome run_evolve_seed(Oracle& oracle, const ExperimentConfig& cfg, const std::vector<std::size_t>& targets,
                                   std::uint64_t seed, const std::filesystem::path& dir) {
  EvolutionConfig ec;
  ec.encoding = cfg.attack == AttackKind::Direct ? Encoding::Direct : Encoding::Cppn;
  ec.population_size = cfg.population_size;
  ec.generations = cfg.generations;
  ec.seed = seed;
  ec.shape = oracle.input_shape();
  ec.mutation = cfg.mutation;
  ec.direct = cfg.direct;

  const auto t0 = std::chrono::steady_clock::now();
  const auto res = evolve(oracle, ec);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  SeedOutcome out;
  out.seed = seed;
  out.error = res.error;
  RunRecord& r = out.record;
  r.attack = std::string(to_string(cfg.attack));
  r.classifier = cfg.classifier_id();
  r.seed = seed;
  r.runtime_seconds = seconds;
  r.total_queries = res.evaluations;
  const double per_class = queries_per_target(res.evaluations, oracle.num_classes());
  for (auto c : targets) {
    const auto& b = res.archive.bin(c);
    if (!b) {
      r.classes.push_back({c, 0.0, 0, false, 0.0, per_class});
      continue;
    }
    r.classes.push_back({c, b->fitness, b->top1, b->top1 == c, elite_pcr(res.archive, c, ec), per_class});
    write_png(dir / ("class_" + std::to_string(c) + ".png"), replay_elite(res.archive, c, ec.shape));
  }
  std::string csv = "class,generation,queries_so_far,fitness\n";
  const std::set<std::size_t> wanted(targets.begin(), targets.end());
  for (const auto& p : res.trajectory) {
    if (!wanted.count(p.class_index)) continue;
    csv += std::to_string(p.class_index) + "," + std::to_string(p.generation) + "," + std::to_string(p.queries_so_far) + "," + num(p.fitness) + "\n";
  }
  write_text(dir / "trajectory.csv", csv);
  write_text(dir / "archive.json", to_json(res.archive).dump(1));
  return out;
}

}  // namespace experiment_detail

/// Runs the configured attack once per seed and writes
///   config.json, seed_<k>/{records.json, timing.json, trajectory.csv, class_<c>.png[, archive.json]}, aggregate.csv
/// Configuration, oracle and directory problems are raised before any
/// attack query. Seeds that abort keep their partial outputs.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Oracle* oracle_override = nullptr) {
  cfg.validate();
  std::unique_ptr<Oracle> owned;
  Oracle* oracle = oracle_override;
  if (!oracle) {
    owned = open_oracle(cfg.oracle);
    oracle = owned.get();
  }
  std::vector<std::size_t> targets = cfg.targets;
  if (targets.empty()) {
    for (std::size_t c = 0; c < oracle->num_classes(); ++c) targets.push_back(c);
  }
  for (auto t : targets) {
    if (t >= oracle->num_classes()) fail(ErrorKind::Configuration, "target " + std::to_string(t) + " outside the oracle's classes");
  }

  ExperimentResult result;
  result.run_dir = cfg.output_dir;
  experiment_detail::check_writable(cfg.output_dir);
  for (auto seed : cfg.seeds) experiment_detail::check_writable(seed_dir(cfg.output_dir, seed));
  experiment_detail::write_text(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");

  result.seeds.resize(cfg.seeds.size());
  const auto run_one = [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    const auto dir = seed_dir(cfg.output_dir, seed);
    try {
      result.seeds[i] = cfg.attack == AttackKind::Spoof ? experiment_detail::run_spoof_seed(*oracle, cfg, targets, seed, dir)
                                                        : experiment_detail::run_evolve_seed(*oracle, cfg, targets, seed, dir);
      experiment_detail::write_text(dir / "records.json", to_json(result.seeds[i].record).dump(2) + "\n");
      experiment_detail::write_text(dir / "timing.json",
                                    nlohmann::json{{"runtime_seconds", result.seeds[i].record.runtime_seconds.value_or(0.0)}}.dump(2) + "\n");
    } catch (const Error& e) {
      result.seeds[i].seed = seed;
      result.seeds[i].error = e.what();
    }
  };
  if (cfg.parallel_seeds && cfg.seeds.size() > 1) {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) threads.emplace_back(run_one, i);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_one(i);
  }

  std::vector<RunRecord> records;
  for (const auto& s : result.seeds)
    if (!s.record.classes.empty()) records.push_back(s.record);
  std::string csv = std::string(kAggregateCsvHeader) + "\n";
  if (!records.empty()) {
    result.aggregate = aggregate(records, cfg.success);
    csv += aggregate_csv_row(*result.aggregate) + "\n";
  }
  experiment_detail::write_text(cfg.output_dir / "aggregate.csv", csv);
  return result;
}

/// Loads seed_<k>/records.json, merging seed_<k>/timing.json when present.
inline std::vector<RunRecord> load_run_records(const std::filesystem::path& run_dir) {
  std::vector<RunRecord> out;
  if (!std::filesystem::is_directory(run_dir)) fail(ErrorKind::NotFound, "run directory " + run_dir.string() + " not found");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 && std::filesystem::exists(e.path() / "records.json")) {
      dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    auto r = run_record_from_json(nlohmann::json::parse(experiment_detail::read_text(d / "records.json")));
    if (std::filesystem::exists(d / "timing.json")) {
      r.runtime_seconds = nlohmann::json::parse(experiment_detail::read_text(d / "timing.json")).at("runtime_seconds").get<double>();
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) fail(ErrorKind::NotFound, "no seed_*/records.json under " + run_dir.string());
  return out;
}

namespace experiment_detail {

struct CsvTrajectory {
  // class -> (checkpoint query -> confidence)
  std::map<std::size_t, std::map<std::uint64_t, std::string>> rows;
};

/// Reads either trajectory layout into (class, checkpoint_query, value).
/// Values are kept as text so single-seed exports copy them verbatim.
inline CsvTrajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  const bool evolve = line == "class,generation,queries_so_far,fitness";
  if (!evolve && line != "class,query_index,confidence") fail(ErrorKind::Format, path.string() + ": unknown trajectory header");
  CsvTrajectory t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != (evolve ? 4u : 3u)) fail(ErrorKind::Format, path.string() + ": bad row '" + line + "'");
    t.rows[std::stoull(f[0])][std::stoull(evolve ? f[2] : f[1])] = evolve ? f[3] : f[2];
  }
  return t;
}

}  // namespace experiment_detail

/// Long-format (class, checkpoint_query, confidence) CSV, classes ascending.
/// A single-seed run is copied verbatim; with several seeds each cell is
/// the median over seeds.
inline std::string export_heatmap_csv(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir)) fail(ErrorKind::NotFound, "run directory " + run_dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "trajectory.csv")) files.push_back(e.path() / "trajectory.csv");
  }
  if (files.empty()) fail(ErrorKind::NotFound, "no trajectories under " + run_dir.string());
  std::sort(files.begin(), files.end());

  std::string out = "class,checkpoint_query,confidence\n";
  if (files.size() == 1) {
    const auto t = experiment_detail::read_trajectory_csv(files.front());
    for (const auto& [c, points] : t.rows)
      for (const auto& [q, v] : points) out += std::to_string(c) + "," + std::to_string(q) + "," + v + "\n";
    return out;
  }
  std::map<std::size_t, std::map<std::uint64_t, std::vector<double>>> cells;
  for (const auto& f : files) {
    const auto t = experiment_detail::read_trajectory_csv(f);
    for (const auto& [c, points] : t.rows)
      for (const auto& [q, v] : points) cells[c][q].push_back(std::stod(v));
  }
  for (const auto& [c, points] : cells)
    for (const auto& [q, values] : points) out += std::to_string(c) + "," + std::to_string(q) + "," + experiment_detail::num(median(values)) + "\n";
  return out;
}

}  // namespace spoof
