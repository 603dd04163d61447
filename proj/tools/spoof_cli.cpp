// Command-line front end: train, attack, evolve, retrain, metrics, export,
// serve-stub.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spoof/spoof.hpp"

namespace fs = std::filesystem;
using namespace spoof;

namespace {

enum Exit { kOk = 0, kConfig = 1, kOracle = 2, kPartial = 3 };

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Transport:
    case ErrorKind::Protocol:
      return kOracle;
    default:
      return kConfig;
  }
}

fs::path default_run_dir(const std::string& attack) {
  const char* root = std::getenv("SPOOF_OUTPUT_ROOT");
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  return fs::path(root && *root ? root : "runs") / (attack + "-" + stamp);
}

ImageShape parse_shape(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, ',');) dims.push_back(std::stoul(cell));
  if (dims.size() != 3) fail(ErrorKind::Configuration, "shape must be C,H,W");
  return {dims[0], dims[1], dims[2]};
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

// Flags shared by attack and evolve.
struct RunFlags {
  std::string config;
  std::string spec = "mlp";
  std::string weights;
  std::string remote;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> targets;
  std::string out;
  std::string classifier;
  double asr_threshold = -1.0;
  bool parallel_seeds = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Experiment config JSON (other flags override it)");
    app->add_option("--spec", spec, "Builtin network: mlp, lenet, or a spec JSON path");
    app->add_option("--weights", weights, "SPWT weights for the builtin network");
    app->add_option("--remote", remote, "Remote oracle: host:port or stdio:<command>");
    app->add_option("--seeds", seeds, "Seeds")->delimiter(',');
    app->add_option("--targets", targets, "Target classes (default: all)")->delimiter(',');
    app->add_option("--out", out, "Run directory (default: $SPOOF_OUTPUT_ROOT/<attack>-<time>)");
    app->add_option("--classifier", classifier, "Classifier id recorded in results");
    app->add_option("--asr-threshold", asr_threshold, "Confidence threshold for Fooling-ASR (default: top-1 only)");
    app->add_flag("--parallel-seeds", parallel_seeds, "Run seeds concurrently");
  }

  ExperimentConfig base(CLI::App* app, AttackKind kind) const {
    ExperimentConfig cfg;
    if (!config.empty()) cfg = load_experiment_config(config);
    cfg.attack = kind;
    if (!config.empty() && app->count("--remote") == 0 && app->count("--weights") == 0 && app->count("--spec") == 0) {
      // keep the config's oracle
    } else if (!remote.empty()) {
      cfg.oracle = OracleConfig{};
      cfg.oracle.address = remote;
    } else {
      cfg.oracle = OracleConfig{};
      cfg.oracle.spec = spec;
      if (!weights.empty()) cfg.oracle.weights = weights;
    }
    if (!seeds.empty()) cfg.seeds = seeds;
    if (cfg.seeds.empty() && config.empty()) cfg.seeds = {0};
    if (!targets.empty()) cfg.targets = targets;
    if (!out.empty()) cfg.output_dir = out;
    if (cfg.output_dir.empty()) cfg.output_dir = default_run_dir(std::string(to_string(kind)));
    if (!classifier.empty()) cfg.classifier = classifier;
    if (asr_threshold >= 0.0) cfg.success.min_confidence = asr_threshold;
    if (parallel_seeds) cfg.parallel_seeds = true;
    return cfg;
  }
};

int report(const ExperimentResult& r) {
  if (r.aggregate) {
    std::cout << kAggregateCsvHeader << "\n" << aggregate_csv_row(*r.aggregate) << "\n";
  }
  std::cout << "run directory: " << r.run_dir.string() << "\n";
  for (const auto& s : r.seeds) {
    if (s.error) std::cerr << "seed " << s.seed << " aborted: " << *s.error << "\n";
  }
  if (r.aborted() == 0) return kOk;
  return r.aborted() == r.seeds.size() ? kOracle : kPartial;
}

int run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  auto oracle = open_oracle(cfg.oracle);
  fs::create_directories(cfg.output_dir);
  write_file(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");
  const auto summaries = init_ablation(*oracle, cfg.budget, cfg.seeds, cfg.checkpoint_stride);
  std::string csv = "mode,query_index,median_confidence\n";
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : summaries) {
    for (const auto& p : s.median_trajectory) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", p.confidence);
      csv += std::string(to_string(s.mode)) + "," + std::to_string(p.query_index) + "," + buf + "\n";
    }
    std::vector<double> conf, pcr;
    for (const auto& per_seed : s.results)
      for (const auto& r : per_seed) {
        conf.push_back(r.final_confidence);
        pcr.push_back(r.pcr);
      }
    summary.push_back({{"mode", to_string(s.mode)}, {"median_confidence", median(conf)}, {"median_pcr", median(pcr)}});
  }
  write_file(cfg.output_dir / "ablation.csv", csv);
  write_file(cfg.output_dir / "ablation.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return kOk;
}

// Gathers class_<c>.png from every seed directory of the given runs.
std::vector<std::vector<Image>> gather_fooling_images(const std::vector<std::string>& runs, std::size_t num_classes) {
  std::vector<std::vector<Image>> by_target(num_classes);
  const std::regex name("class_([0-9]+)\\.png");
  for (const auto& run : runs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(run)) {
      if (e.is_regular_file() && std::regex_match(e.path().filename().string(), name)) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::smatch m;
      const auto fname = f.filename().string();
      std::regex_match(fname, m, name);
      const auto c = std::stoul(m[1]);
      if (c < num_classes) by_target[c].push_back(read_png(f));
    }
  }
  return by_target;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box fooling attacks: SPOOF hill climbing and MAP-Elites baselines"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train the builtin dense victim on MNIST IDX files");
  std::string data_dir = "data/mnist", train_spec = "mlp", train_out;
  TrainConfig tcfg;
  train->add_option("--data", data_dir, "Directory with MNIST IDX files");
  train->add_option("--spec", train_spec, "Dense network spec (mlp or JSON path)");
  train->add_option("--epochs", tcfg.epochs);
  train->add_option("--lr", tcfg.learning_rate);
  train->add_option("--momentum", tcfg.momentum);
  train->add_option("--batch", tcfg.batch_size);
  train->add_option("--seed", tcfg.seed);
  train->add_option("--out", train_out, "Output SPWT file")->required();

  // attack
  auto* attack = app.add_subcommand("attack", "Run SPOOF against every target class");
  RunFlags aflags;
  aflags.add_to(attack);
  std::uint64_t budget = 500, stride = 50;
  std::string init = "black";
  double early_stop = -1.0;
  bool ablation = false;
  attack->add_option("--budget", budget, "Queries per target (T)");
  attack->add_option("--init", init, "Canvas: black, white or random");
  attack->add_option("--stride", stride, "Trajectory checkpoint stride");
  attack->add_option("--early-stop", early_stop, "Stop a target once its confidence reaches this value");
  attack->add_flag("--ablation", ablation, "Run the black/white/random initialization ablation instead");

  // evolve
  auto* evolve_cmd = app.add_subcommand("evolve", "Run Direct-Fool or CPPN-Fool (MAP-Elites)");
  RunFlags eflags;
  eflags.add_to(evolve_cmd);
  std::string encoding = "cppn";
  std::size_t pop = 400;
  std::uint64_t generations = 5000;
  evolve_cmd->add_option("--encoding", encoding, "direct or cppn");
  evolve_cmd->add_option("--pop", pop, "Population size");
  evolve_cmd->add_option("--generations", generations, "Generations, including generation 0");

  // retrain
  auto* retrain = app.add_subcommand("retrain", "Fine-tune the final layer with fooling images as an extra class");
  std::string r_data = "data/mnist", r_spec = "mlp", r_weights, r_out, r_spec_out;
  std::vector<std::string> r_runs;
  std::size_t per_class = 120;
  double train_fraction = 5.0 / 6.0;
  TrainConfig rcfg;
  retrain->add_option("--data", r_data);
  retrain->add_option("--spec", r_spec);
  retrain->add_option("--weights", r_weights)->required();
  retrain->add_option("--fooling", r_runs, "Attack run directories holding class_<c>.png files")->required();
  retrain->add_option("--per-class", per_class);
  retrain->add_option("--train-fraction", train_fraction);
  retrain->add_option("--epochs", rcfg.epochs);
  retrain->add_option("--lr", rcfg.learning_rate);
  retrain->add_option("--momentum", rcfg.momentum);
  retrain->add_option("--batch", rcfg.batch_size);
  retrain->add_option("--seed", rcfg.seed);
  retrain->add_option("--out", r_out, "Output SPWT file")->required();
  retrain->add_option("--spec-out", r_spec_out, "Output spec JSON (default: <out>.spec.json)");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Recompute the aggregate row from a run directory");
  std::string m_run;
  double m_threshold = -1.0;
  metrics->add_option("run", m_run)->required();
  metrics->add_option("--asr-threshold", m_threshold);

  // export
  auto* exp = app.add_subcommand("export", "Write the heatmap CSV for a run directory");
  std::string x_run, x_out;
  exp->add_option("run", x_run)->required();
  exp->add_option("--out", x_out, "Output CSV (default: stdout)");

  // serve-stub
  auto* serve = app.add_subcommand("serve-stub", "Serve an oracle over the line protocol");
  int port = -1;
  bool use_stdio = false;
  std::size_t uniform = 0;
  std::string s_shape = "1,28,28", s_spec, s_weights;
  serve->add_option("--port", port, "TCP port on 127.0.0.1 (0 picks one)");
  serve->add_flag("--stdio", use_stdio, "Serve on stdin/stdout");
  serve->add_option("--uniform", uniform, "Answer every image with the uniform N-class vector");
  serve->add_option("--shape", s_shape, "Input shape C,H,W for --uniform");
  serve->add_option("--spec", s_spec);
  serve->add_option("--weights", s_weights);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) {
      const auto spec = resolve_network_spec(train_spec);
      const auto mnist = load_mnist(data_dir);
      DatasetSplit data{{mnist.train.images, mnist.train.labels}, {mnist.test.images, mnist.test.labels}};
      const auto result = train_dense(spec, data, tcfg);
      save_weights(result.weights, train_out);
      for (std::size_t e = 0; e < result.history.val_accuracy.size(); ++e) {
        std::printf("epoch %zu train_acc %.4f test_acc %.4f\n", e + 1, result.history.train_accuracy[e], result.history.val_accuracy[e]);
      }
      return kOk;
    }

    if (*attack) {
      auto cfg = aflags.base(attack, AttackKind::Spoof);
      if (attack->count("--budget") || aflags.config.empty()) cfg.budget = budget;
      if (attack->count("--init") || aflags.config.empty()) cfg.init = parse_init_mode(init);
      if (attack->count("--stride") || aflags.config.empty()) cfg.checkpoint_stride = stride;
      if (early_stop > 0.0) cfg.early_stop_confidence = early_stop;
      if (ablation) return run_ablation(cfg);
      return report(run_experiment(cfg));
    }

    if (*evolve_cmd) {
      auto cfg = eflags.base(evolve_cmd, parse_encoding(encoding) == Encoding::Direct ? AttackKind::Direct : AttackKind::Cppn);
      if (evolve_cmd->count("--pop") || eflags.config.empty()) cfg.population_size = pop;
      if (evolve_cmd->count("--generations") || eflags.config.empty()) cfg.generations = generations;
      return report(run_experiment(cfg));
    }

    if (*retrain) {
      const auto spec = resolve_network_spec(r_spec);
      const auto weights = load_weights(r_weights);
      const auto n = spec.num_classes();
      const auto mnist = load_mnist(r_data);
      const auto pool = gather_fooling_images(r_runs, n);
      const auto fooling = build_fooling_class_dataset(pool, per_class, train_fraction, n, rcfg.seed);
      DatasetSplit merged{concat({mnist.train.images, mnist.train.labels}, fooling.train),
                          concat({mnist.test.images, mnist.test.labels}, fooling.val)};
      const double baseline = accuracy(Network(spec, weights), {mnist.test.images, mnist.test.labels});
      const auto result = fine_tune_final_layer(weights, spec, merged, rcfg);
      save_weights(result.weights, r_out);
      const fs::path spec_out = r_spec_out.empty() ? fs::path(r_out + ".spec.json") : fs::path(r_spec_out);
      write_file(spec_out, to_json(result.spec).dump(2) + "\n");
      const Network retrained(result.spec, result.weights);
      std::printf("baseline original-class accuracy %.4f\n", baseline);
      for (std::size_t e = 0; e < result.history.val_accuracy.size(); ++e) {
        std::printf("epoch %zu merged_val_acc %.4f\n", e + 1, result.history.val_accuracy[e]);
      }
      std::printf("retrained original-class accuracy %.4f\n", accuracy(retrained, {mnist.test.images, mnist.test.labels}));
      std::printf("retrained fooling-val accuracy %.4f\n", accuracy(retrained, fooling.val));
      std::printf("spec written to %s\n", spec_out.string().c_str());
      return kOk;
    }

    if (*metrics) {
      const auto records = load_run_records(m_run);
      SuccessPolicy policy;
      if (m_threshold >= 0.0) policy.min_confidence = m_threshold;
      std::cout << kAggregateCsvHeader << "\n" << aggregate_csv_row(aggregate(records, policy)) << "\n";
      return kOk;
    }

    if (*exp) {
      const auto csv = export_heatmap_csv(x_run);
      if (x_out.empty()) {
        std::cout << csv;
      } else {
        write_file(x_out, csv);
      }
      return kOk;
    }

    if (*serve) {
      if ((port >= 0) == use_stdio) fail(ErrorKind::Configuration, "serve-stub needs exactly one of --port or --stdio");
      std::unique_ptr<Oracle> model;
      if (uniform > 0) {
        model = make_uniform_oracle(uniform, parse_shape(s_shape));
      } else if (!s_spec.empty() && !s_weights.empty()) {
        model = std::make_unique<BuiltinOracle>(resolve_network_spec(s_spec), load_weights(s_weights));
      } else {
        fail(ErrorKind::Configuration, "serve-stub needs --uniform N or --spec with --weights");
      }
      if (use_stdio) {
        FdChannel channel(STDIN_FILENO, STDOUT_FILENO, false);
        wire::serve_channel(channel, *model);
        return kOk;
      }
      TcpServer server(*model, static_cast<std::uint16_t>(port));
      std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
      server.wait();
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
