#pragma once

#include "kt/ffnn_model.hpp"
#include "kt/kt_model.hpp"
#include "kt/optim.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>

namespace kt::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  // Epochs between snapshots in `checkpoint_dir`; no snapshots when the directory is empty.
  std::size_t checkpoint_interval = 10;
  std::filesystem::path checkpoint_dir;
  bool shuffle = true;

  static TrainConfig kt_defaults();
  static TrainConfig ffnn_defaults();
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

// Epoch 0 holds the losses of the initial weights.
struct LossRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, double loss);
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// Mean over steps and tendons of the squared force error, in N^2.
num::Var mse_loss(num::Var predicted, num::Var actual);
double mse_loss(const num::Tensor& predicted, const num::Tensor& actual);

// Per-step training pairs for the baseline: normalized desired tips and raw labels.
struct StepPairs {
  num::Tensor goals;   // n x 3
  num::Tensor labels;  // n x 4
};
StepPairs step_pairs(const std::vector<data::Episode>& episodes, const data::Normalizer& normalizer);

using EpochCallback = std::function<void(const LossRecord&)>;

// Both trainers leave the best-validation weights in the model.
TrainResult train_kt(model::KtModel& model, const data::SequenceSet& train, const data::SequenceSet& validation,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train_ffnn(model::FfnnModel& model, const StepPairs& train, const StepPairs& validation,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

// Mean loss without dropout.
double evaluate_kt_loss(const model::KtModel& model, const data::SequenceSet& set, std::size_t batch_size = 64);
double evaluate_ffnn_loss(const model::FfnnModel& model, const StepPairs& set, std::size_t batch_size = 256);

// Comma-separated table with an `epoch,train_loss,val_loss` header line.
void write_loss_log(std::ostream& out, const std::vector<LossRecord>& history);
void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& history);

}  // namespace kt::train
