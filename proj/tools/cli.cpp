#include "cli.hpp"

#include "CLI11.hpp"
#include "config.hpp"
#include "kt/evaluation.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace kt::cli {

using nlohmann::json;

namespace {

constexpr const char* kThreadsVariable = "KT_THREADS";

unsigned thread_count() {
  if (const char* v = std::getenv(kThreadsVariable)) {
    try {
      const long n = std::stol(v);
      if (n >= 1) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string(kThreadsVariable) + " must be a positive integer");
  }
  return 0;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return hex64(num::hash_name(bytes.str()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

std::filesystem::path with_suffix(const std::filesystem::path& base, const std::string& suffix) {
  return base.string() + suffix;
}

ToolkitConfig resolve(const std::string& path) {
  if (path.empty()) {
    ToolkitConfig c;
    c.validate();
    return c;
  }
  return load_config(path);
}

// The setup hash the dataset must carry for this configuration.
std::string expected_setup_hash(const ToolkitConfig& cfg, const data::LoadedDataset& ld) {
  data::GeneratorOptions g = cfg.generator;
  if (!ld.episodes.empty()) g.steps = static_cast<int>(ld.episodes.front().steps.size());
  return data::setup_hash(cfg.sim, g);
}

std::vector<data::Episode> select(const std::vector<data::Episode>& episodes, const json& seeds) {
  std::set<std::uint64_t> wanted;
  for (const auto& s : seeds) wanted.insert(s.get<std::uint64_t>());
  std::vector<data::Episode> out;
  for (const auto& e : episodes)
    if (wanted.count(e.seed)) out.push_back(e);
  if (out.size() != wanted.size()) throw ConfigError("dataset lacks test episodes recorded in the checkpoint");
  return out;
}

struct GenerateArgs {
  std::size_t episodes = 0;
  int steps = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

int cmd_generate(const std::string& config_path, const GenerateArgs& a) {
  ToolkitConfig cfg = resolve(config_path);
  if (a.episodes) cfg.episodes = a.episodes;
  if (a.steps) cfg.generator.steps = a.steps;
  if (a.seed_set) cfg.seed = a.seed;
  cfg.validate();
  const std::string hash = config_hash(cfg);

  data::GenerationStats stats;
  std::vector<data::Episode> episodes;
  try {
    episodes = data::generate_dataset(cfg.sim, cfg.generator, cfg.episodes, num::Rng(cfg.seed).derive("dataset").seed(),
                                      thread_count(), &stats);
  } catch (const data::GenerationError& e) {
    std::cerr << "generation failed at step " << e.step() << " with forces [" << e.forces()[0] << ", "
              << e.forces()[1] << ", " << e.forces()[2] << ", " << e.forces()[3] << "] N: " << e.what() << "\n";
    return kSolverFailure;
  }
  if (stats.failure_rate() > 0.01) {
    std::cerr << "solver failed on " << stats.failures << " of " << stats.solves << " solves ("
              << 100.0 * stats.failure_rate() << "%), above the 1% limit\n";
    return kSolverFailure;
  }

  data::DatasetHeader header;
  header.setup_hash = data::setup_hash(cfg.sim, cfg.generator);
  header.config_hash = hash;
  header.episodes = episodes.size();
  data::write_dataset(a.out, header, episodes);

  const data::DatasetSummary summary = data::summarize(episodes, cfg.sim.rest_tip());
  const std::string text = data::format_summary(summary);
  write_text(with_suffix(a.out, ".summary.txt"), text);
  json j = data::summary_to_json(summary);
  j["config_hash"] = hash;
  j["dataset_hash"] = file_hash(a.out);
  j["solves"] = stats.solves;
  j["solver_failures"] = stats.failures;
  write_text(with_suffix(a.out, ".summary.json"), j.dump(2) + "\n");
  std::cout << text << "episodes " << episodes.size() << ", solves " << stats.solves << ", redrawn "
            << stats.failures << "\n";
  return kSuccess;
}

struct TrainArgs {
  std::string model;
  std::string data;
  std::string out;
};

int cmd_train(const std::string& config_path, const TrainArgs& a) {
  const ToolkitConfig cfg = resolve(config_path);
  const data::LoadedDataset ld = data::read_dataset(a.data);
  if (ld.header.setup_hash != expected_setup_hash(cfg, ld))
    throw ConfigError("dataset " + a.data + " was generated with a different limb, solver or generator setup");
  const Partition p = partition_episodes(cfg, ld.episodes);
  const data::Normalizer norm = data::Normalizer::fit(p.fit);

  json test_seeds = json::array();
  for (const auto& e : p.test) test_seeds.push_back(e.seed);
  json meta = {{"config_hash", config_hash(cfg)}, {"setup_hash", ld.header.setup_hash},
               {"dataset_hash", file_hash(a.data)}, {"test_episodes", test_seeds},
               {"config", config_to_json(cfg)}};
  auto progress = [](const train::LossRecord& r) {
    char line[96];
    std::snprintf(line, sizeof line, "epoch %4zu  train %.6f  val %.6f\n", r.epoch, r.train_loss, r.val_loss);
    std::cout << line << std::flush;
  };

  train::TrainResult result;
  if (a.model == "kt") {
    const data::SequenceSet fit = data::to_sequences(p.fit, cfg.kt.sequence_length, norm, cfg.window_stride);
    const data::SequenceSet val = data::to_sequences(p.validation, cfg.kt.sequence_length, norm);
    if (fit.sequences.empty() || val.sequences.empty())
      throw ConfigError("episodes are shorter than the KT window");
    model::KtModel m(cfg.kt, norm, cfg.seed);
    result = train::train_kt(m, fit, val, cfg.kt_training, progress);
    meta["training"] = train::to_json(cfg.kt_training);
    meta["best_epoch"] = result.best_epoch;
    meta["best_val_loss"] = result.best_val_loss;
    m.save(a.out, meta);
  } else {
    const train::StepPairs fit = train::step_pairs(p.fit, norm), val = train::step_pairs(p.validation, norm);
    model::FfnnModel m(norm, cfg.seed, cfg.ffnn_hidden);
    result = train::train_ffnn(m, fit, val, cfg.ffnn_training, progress);
    meta["training"] = train::to_json(cfg.ffnn_training);
    meta["best_epoch"] = result.best_epoch;
    meta["best_val_loss"] = result.best_val_loss;
    m.save(a.out, meta);
  }
  std::ofstream log(with_suffix(a.out, ".loss.csv"));
  log << "# config " << config_hash(cfg) << "\n";
  train::write_loss_log(log, result.history);
  if (!log) throw std::runtime_error("cannot write the loss log");
  std::cout << "best epoch " << result.best_epoch << ", validation loss " << result.best_val_loss << " N^2\n";
  return kSuccess;
}

struct EvalArgs {
  std::string model_path;
  std::string data;
  std::string report;
};

int cmd_eval(const std::string& config_path, const EvalArgs& a) {
  const ToolkitConfig cfg = resolve(config_path);
  const nn::Checkpoint ck = nn::read_checkpoint(a.model_path);
  const data::LoadedDataset ld = data::read_dataset(a.data);
  const std::string kind = ck.header.value("kind", "");
  const json meta = ck.header.value("metadata", json::object());
  const std::string dataset_hash = file_hash(a.data);
  if (meta.contains("dataset_hash") && meta.at("dataset_hash") != dataset_hash)
    throw ConfigError("dataset " + a.data + " is not the one the checkpoint was trained on");
  const std::string setup = expected_setup_hash(cfg, ld);
  if (ld.header.setup_hash != setup || (meta.contains("setup_hash") && meta.at("setup_hash") != setup))
    throw ConfigError("forward solver settings differ from those used to generate the data");

  const std::vector<data::Episode> test = meta.contains("test_episodes") ? select(ld.episodes, meta.at("test_episodes"))
                                                                        : partition_episodes(cfg, ld.episodes).test;

  eval::Predictions predictions;
  if (kind == "kt")
    predictions = eval::predict_kt(model::KtModel::from_checkpoint(ck), test);
  else if (kind == "ffnn")
    predictions = eval::predict_ffnn(model::FfnnModel::from_checkpoint(ck), test);
  else if (kind == "oracle")
    predictions = eval::echo_labels(test);
  else
    throw ConfigError("unknown model kind '" + kind + "' in " + a.model_path);

  eval::BenchmarkReport report;
  report.model = kind;
  report.dataset_hash = dataset_hash;
  report.force = eval::force_error_benchmark(predictions, test);
  std::vector<eval::ScatterPoint> scatter;
  report.position = eval::position_error_benchmark(predictions, test, cfg.sim, thread_count(), &scatter);

  const std::string text = eval::format_report(report);
  write_text(with_suffix(a.report, ".txt"), text);
  json j = eval::report_to_json(report);
  j["config_hash"] = config_hash(cfg);
  j["test_episodes"] = test.size();
  write_text(with_suffix(a.report, ".json"), j.dump(2) + "\n");
  eval::write_scatter_csv(with_suffix(a.report, ".scatter.csv"), scatter);
  std::cout << text;
  return kSuccess;
}

struct BenchArgs {
  std::string model_path;
  std::size_t iterations = 1000;
  std::size_t warmup = 100;
  std::string out;
};

int cmd_bench(const std::string& config_path, const BenchArgs& a) {
  const ToolkitConfig cfg = resolve(config_path);
  const nn::Checkpoint ck = nn::read_checkpoint(a.model_path);
  const std::string kind = ck.header.value("kind", "");
  eval::Timing t;
  if (kind == "kt")
    t = eval::time_kt(model::KtModel::from_checkpoint(ck), a.iterations, a.warmup);
  else if (kind == "ffnn")
    t = eval::time_ffnn(model::FfnnModel::from_checkpoint(ck), a.iterations, a.warmup);
  else
    throw ConfigError("cannot time model kind '" + kind + "'");
  char line[128];
  std::snprintf(line, sizeof line, "%s inference: %.2f +- %.2f us over %zu calls\n", kind.c_str(), t.mean_us, t.std_us,
                t.iterations);
  std::cout << line;
  if (!a.out.empty()) {
    const json j = {{"model", kind},         {"mean_us", t.mean_us},          {"std_us", t.std_us},
                    {"iterations", t.iterations}, {"config_hash", config_hash(cfg)}};
    write_text(a.out, j.dump(2) + "\n");
  }
  return kSuccess;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Tendon-driven limb inverse kinematics toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Simulate episodes and write a dataset");
  generate->add_option("--episodes", gen.episodes, "Number of episodes");
  generate->add_option("--steps", gen.steps, "Steps per episode");
  generate->add_option("--seed", gen.seed, "Root seed");
  generate->add_option("--out", gen.out, "Dataset path")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  train_cmd->add_option("--model", tr.model, "kt or ffnn")->required()->check(CLI::IsMember({"kt", "ffnn"}));
  train_cmd->add_option("--data", tr.data, "Dataset path")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Force and position benchmarks on the test episodes");
  eval_cmd->add_option("--model-path", ev.model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset path")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", ev.report, "Report path prefix")->required();

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "Time single-input inference");
  bench->add_option("--model-path", be.model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--iterations", be.iterations, "Timed calls")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", be.warmup, "Untimed calls before measuring");
  bench->add_option("--out", be.out, "JSON output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kConfigError;
  }
  gen.seed_set = generate->count("--seed") > 0;

  try {
    if (*generate) return cmd_generate(config_path, gen);
    if (*train_cmd) return cmd_train(config_path, tr);
    if (*eval_cmd) return cmd_eval(config_path, ev);
    return cmd_bench(config_path, be);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const cosserat::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolverFailure;
  } catch (const train::DivergenceError& e) {
    std::cerr << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace kt::cli
