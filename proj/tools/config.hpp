#pragma once

#include "kt/training.hpp"

#include <filesystem>
#include <stdexcept>

namespace kt::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ToolkitConfig {
  std::uint64_t seed = 0;
  data::Simulation sim;
  data::GeneratorOptions generator;
  std::size_t episodes = 200;
  double train_fraction = 0.8;
  // Share of the training episodes held out for checkpoint selection.
  double validation_fraction = 0.1;
  model::KtConfig kt;
  // Step between consecutive training windows; 0 means non-overlapping.
  std::size_t window_stride = 0;
  std::size_t ffnn_hidden = model::FfnnModel::kHidden;
  train::TrainConfig kt_training = train::TrainConfig::kt_defaults();
  train::TrainConfig ffnn_training = train::TrainConfig::ffnn_defaults();
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys and bad values raise ConfigError.
ToolkitConfig config_from_json(const nlohmann::json& j);
ToolkitConfig load_config(const std::filesystem::path& path);
// Every field, with the same key names the loader accepts.
nlohmann::json config_to_json(const ToolkitConfig& c);
std::string config_hash(const ToolkitConfig& c);

struct Partition {
  std::vector<data::Episode> fit, validation, test;
};

// Test episodes first, then a validation share of the rest; a single remaining episode
// serves as both fit and validation set.
Partition partition_episodes(const ToolkitConfig& c, const std::vector<data::Episode>& episodes);

}  // namespace kt::cli
