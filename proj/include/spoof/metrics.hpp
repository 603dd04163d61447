#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spoof/error.hpp"
#include "spoof/stats.hpp"

namespace spoof {

struct ClassOutcome {
  std::size_t target_class = 0;
  double final_confidence = 0.0;
  std::size_t top1 = 0;
  /// Top-1 match, as recorded at run time.
  bool success = false;
  double pcr = 0.0;
  double queries = 0.0;

  bool operator==(const ClassOutcome&) const = default;
};

/// One attack run (one seed) against one classifier.
struct RunRecord {
  std::string attack;
  std::string classifier;
  std::uint64_t seed = 0;
  std::vector<ClassOutcome> classes;
  /// Oracle counter delta for the whole run, baseline queries excluded.
  std::uint64_t total_queries = 0;
  std::uint64_t baseline_queries = 0;
  /// Wall-clock seconds for the run; kept out of records.json.
  std::optional<double> runtime_seconds;

  bool operator==(const RunRecord&) const = default;
};

/// Success = top-1 equals the target and, when set, confidence >= threshold.
struct SuccessPolicy {
  std::optional<double> min_confidence;

  bool success(const ClassOutcome& o) const {
    if (o.top1 != o.target_class) return false;
    return !min_confidence || o.final_confidence >= *min_confidence;
  }
};

inline double queries_per_target(std::uint64_t oracle_counter_delta, std::size_t num_classes) {
  if (num_classes == 0) fail(ErrorKind::Configuration, "num_classes must be >= 1");
  return static_cast<double>(oracle_counter_delta) / static_cast<double>(num_classes);
}

/// Fraction of (class, seed) outcomes that succeed.
inline double fooling_asr(std::span<const ClassOutcome> outcomes, const SuccessPolicy& policy = {}) {
  if (outcomes.empty()) fail(ErrorKind::EmptyInput, "fooling_asr needs at least one outcome");
  std::size_t hits = 0;
  for (const auto& o : outcomes) hits += policy.success(o) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

inline double fooling_asr(std::span<const RunRecord> records, const SuccessPolicy& policy = {}) {
  std::vector<ClassOutcome> all;
  for (const auto& r : records) all.insert(all.end(), r.classes.begin(), r.classes.end());
  return fooling_asr(std::span<const ClassOutcome>(all), policy);
}

struct Summary {
  double median = 0.0;
  double mean = 0.0;
};

struct Aggregate {
  std::string attack;
  std::string classifier;
  std::size_t seeds = 0;
  std::size_t classes = 0;
  Summary confidence;
  Summary pcr;
  Summary queries;
  double fooling_asr = 0.0;
  /// Median and mean of per-seed runtimes; absent when no record has timing.
  std::optional<Summary> runtime_seconds;
};

namespace metrics_detail {

inline Summary summarize(const std::vector<std::vector<double>>& per_class) {
  std::vector<double> class_means;
  class_means.reserve(per_class.size());
  for (const auto& v : per_class) class_means.push_back(mean(v));
  return {median(class_means), mean(class_means)};
}

}  // namespace metrics_detail

/// Per-class mean over seeds, then median and mean over classes.
inline Aggregate aggregate(std::span<const RunRecord> records, const SuccessPolicy& policy = {}) {
  if (records.empty()) fail(ErrorKind::EmptyInput, "aggregate needs at least one record");
  const auto& first = records.front();
  if (first.classes.empty()) fail(ErrorKind::EmptyInput, "record has no class outcomes");
  std::vector<std::size_t> class_set;
  for (const auto& o : first.classes) class_set.push_back(o.target_class);

  const std::size_t k = class_set.size();
  std::vector<std::vector<double>> conf(k), pcr(k), queries(k);
  std::vector<double> runtimes;
  for (const auto& r : records) {
    if (r.attack != first.attack || r.classifier != first.classifier) {
      fail(ErrorKind::Validation, "records mix attacks or classifiers");
    }
    if (r.classes.size() != k) fail(ErrorKind::Validation, "records cover different class sets");
    for (std::size_t i = 0; i < k; ++i) {
      const auto& o = r.classes[i];
      if (o.target_class != class_set[i]) fail(ErrorKind::Validation, "records cover different class sets");
      conf[i].push_back(o.final_confidence);
      pcr[i].push_back(o.pcr);
      queries[i].push_back(o.queries);
    }
    if (r.runtime_seconds) runtimes.push_back(*r.runtime_seconds);
  }

  Aggregate a;
  a.attack = first.attack;
  a.classifier = first.classifier;
  a.seeds = records.size();
  a.classes = k;
  a.confidence = metrics_detail::summarize(conf);
  a.pcr = metrics_detail::summarize(pcr);
  a.queries = metrics_detail::summarize(queries);
  a.fooling_asr = fooling_asr(records, policy);
  if (!runtimes.empty()) a.runtime_seconds = Summary{median(runtimes), mean(runtimes)};
  return a;
}

inline constexpr const char* kAggregateCsvHeader =
    "attack,classifier,seeds,classes,runtime_hours,confidence_pct,fooling_asr_pct,pcr_pct,queries_per_target,"
    "confidence_mean_pct,pcr_mean_pct";

namespace metrics_detail {
inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}
}  // namespace metrics_detail

/// One CSV row; headline columns use medians, the *_mean_* columns means.
inline std::string aggregate_csv_row(const Aggregate& a) {
  using metrics_detail::csv_field;
  using metrics_detail::fmt;
  std::ostringstream os;
  os << csv_field(a.attack) << ',' << csv_field(a.classifier) << ',' << a.seeds << ',' << a.classes << ','
     << (a.runtime_seconds ? fmt(a.runtime_seconds->median / 3600.0) : std::string{}) << ',' << fmt(100.0 * a.confidence.median)
     << ',' << fmt(100.0 * a.fooling_asr) << ',' << fmt(100.0 * a.pcr.median) << ',' << fmt(a.queries.median) << ','
     << fmt(100.0 * a.confidence.mean) << ',' << fmt(100.0 * a.pcr.mean);
  return os.str();
}

inline nlohmann::json to_json(const ClassOutcome& o) {
  return {{"class", o.target_class}, {"final_confidence", o.final_confidence}, {"top1", o.top1}, {"success", o.success},
          {"pcr", o.pcr}, {"queries", o.queries}};
}

/// Runtime is left out so that the record is a pure function of the config.
inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& o : r.classes) classes.push_back(to_json(o));
  return {{"attack", r.attack},
          {"classifier", r.classifier},
          {"seed", r.seed},
          {"total_queries", r.total_queries},
          {"baseline_queries", r.baseline_queries},
          {"classes", classes}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.attack = j.at("attack").get<std::string>();
    r.classifier = j.at("classifier").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.total_queries = j.at("total_queries").get<std::uint64_t>();
    r.baseline_queries = j.value("baseline_queries", std::uint64_t{0});
    for (const auto& c : j.at("classes")) {
      r.classes.push_back({c.at("class").get<std::size_t>(), c.at("final_confidence").get<double>(), c.at("top1").get<std::size_t>(),
                           c.at("success").get<bool>(), c.at("pcr").get<double>(), c.at("queries").get<double>()});
    }
    if (j.contains("runtime_seconds")) r.runtime_seconds = j.at("runtime_seconds").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed run record: ") + e.what());
  }
}

}  // namespace spoof
