#include "kt/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace kt::train {

using nlohmann::json;
using num::Tape;
using num::Tensor;
using num::Var;

TrainConfig TrainConfig::kt_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::ffnn_defaults() {
  TrainConfig c;
  c.epochs = 50;
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be positive");
  if (checkpoint_interval == 0) throw std::invalid_argument("checkpoint interval must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},   {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"seed", c.seed},       {"shuffle", c.shuffle},       {"checkpoint_interval", c.checkpoint_interval}};
}

DivergenceError::DivergenceError(std::size_t epoch, double loss)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + " (loss " + std::to_string(loss) +
                         ")"),
      epoch_(epoch) {}

Var mse_loss(Var predicted, Var actual) {
  if (predicted.value().rank() != 2 || predicted.value().cols() != data::kActionDim)
    throw num::DimensionError("loss expects rows of 4 tendon forces");
  return num::mse(predicted, actual);
}

double mse_loss(const Tensor& predicted, const Tensor& actual) {
  Tape tape(false);
  return mse_loss(tape.constant(predicted), tape.constant(actual)).value()[0];
}

StepPairs step_pairs(const std::vector<data::Episode>& episodes, const data::Normalizer& normalizer) {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  StepPairs out{Tensor::matrix(n, data::kGoalDim), Tensor::matrix(n, data::kActionDim)};
  std::size_t r = 0;
  for (const auto& e : episodes) {
    for (const auto& s : e.steps) {
      for (std::size_t c = 0; c < data::kGoalDim; ++c)
        out.goals(r, c) = normalizer.goal.normalize(c, s.desired_tip[static_cast<Eigen::Index>(c)]);
      for (std::size_t c = 0; c < data::kActionDim; ++c) out.labels(r, c) = s.label[c];
      ++r;
    }
  }
  return out;
}

namespace {

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(rows.size(), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(t.data() + rows[i] * t.cols(), t.data() + (rows[i] + 1) * t.cols(), out.data() + i * t.cols());
  return out;
}

std::vector<const data::Sequence*> pick(const data::SequenceSet& set, std::span<const std::size_t> idx) {
  std::vector<const data::Sequence*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&set.sequences[i]);
  return out;
}

// Model-agnostic pieces of one training run.
struct Problem {
  std::vector<num::Parameter*> parameters;
  std::size_t examples = 0;
  std::function<Var(Tape&, std::span<const std::size_t>, num::Rng&)> batch_loss;
  std::function<double()> train_loss;
  std::function<double()> val_loss;
  std::function<void(const std::filesystem::path&, const json&)> save;
};

TrainResult run(Problem& p, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (p.examples == 0) throw num::ContractError("empty training set");
  const num::Rng root(config.seed);
  num::Rng shuffle_rng = root.derive("shuffle");
  num::Rng dropout_rng = root.derive("dropout");
  num::Adam adam(p.parameters, num::AdamOptions{.learning_rate = config.learning_rate});

  auto checked = [](double loss, std::size_t epoch) {
    if (!std::isfinite(loss)) throw DivergenceError(epoch, loss);
    return loss;
  };
  auto snapshot = [&] {
    std::vector<Tensor> values;
    for (const auto* q : p.parameters) values.push_back(q->value);
    return values;
  };

  TrainResult result;
  result.history.push_back({0, checked(p.train_loss(), 0), checked(p.val_loss(), 0)});
  if (on_epoch) on_epoch(result.history.back());
  result.best_val_loss = result.history.back().val_loss;
  std::vector<Tensor> best = snapshot();

  std::vector<std::size_t> order(p.examples);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle)
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    double total = 0.0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      const std::span<const std::size_t> idx(order.data() + first, count);
      adam.zero_grad();
      Tape tape;
      const Var loss = p.batch_loss(tape, idx, dropout_rng);
      total += checked(loss.value()[0], epoch) * static_cast<double>(count);
      tape.backward(loss);
      adam.step();
    }
    const LossRecord record{epoch, total / static_cast<double>(order.size()), checked(p.val_loss(), epoch)};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (record.val_loss < result.best_val_loss) {
      result.best_val_loss = record.val_loss;
      result.best_epoch = epoch;
      best = snapshot();
    }
    if (!config.checkpoint_dir.empty() && epoch % config.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
      p.save(config.checkpoint_dir / name, {{"epoch", epoch},
                                            {"train_loss", record.train_loss},
                                            {"val_loss", record.val_loss},
                                            {"training", to_json(config)}});
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) p.parameters[i]->value = std::move(best[i]);
  return result;
}

}  // namespace

double evaluate_kt_loss(const model::KtModel& model, const data::SequenceSet& set, std::size_t batch_size) {
  const std::size_t n = set.sequences.size();
  if (n == 0) throw num::ContractError("empty evaluation set");
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  double total = 0.0;
  for (std::size_t first = 0; first < n; first += batch_size) {
    const std::size_t count = std::min(batch_size, n - first);
    const auto seqs = pick(set, std::span<const std::size_t>(all.data() + first, count));
    Tape tape(false);
    const Var pred = model.forward(tape, model::make_batch(seqs));
    total += mse_loss(pred, tape.constant(model::stack_labels(seqs))).value()[0] * static_cast<double>(count);
  }
  return total / static_cast<double>(n);
}

double evaluate_ffnn_loss(const model::FfnnModel& model, const StepPairs& set, std::size_t batch_size) {
  const std::size_t n = set.goals.rows();
  if (n == 0) throw num::ContractError("empty evaluation set");
  double total = 0.0;
  for (std::size_t first = 0; first < n; first += batch_size) {
    const std::size_t count = std::min(batch_size, n - first);
    Tape tape(false);
    const Var pred = model.forward(tape, num::slice_rows(tape.constant(set.goals), first, count).value());
    total += mse_loss(pred, num::slice_rows(tape.constant(set.labels), first, count)).value()[0] *
             static_cast<double>(count);
  }
  return total / static_cast<double>(n);
}

TrainResult train_kt(model::KtModel& model, const data::SequenceSet& train, const data::SequenceSet& validation,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  if (validation.sequences.empty()) throw num::ContractError("empty validation set");
  Problem p;
  p.parameters = model.parameters().all();
  p.examples = train.sequences.size();
  p.batch_loss = [&](Tape& tape, std::span<const std::size_t> idx, num::Rng& rng) {
    const auto seqs = pick(train, idx);
    const Var pred = model.forward(tape, model::make_batch(seqs), &rng);
    return mse_loss(pred, tape.constant(model::stack_labels(seqs)));
  };
  p.train_loss = [&] { return evaluate_kt_loss(model, train); };
  p.val_loss = [&] { return evaluate_kt_loss(model, validation); };
  p.save = [&](const std::filesystem::path& path, const json& meta) { model.save(path, meta); };
  return run(p, config, on_epoch);
}

TrainResult train_ffnn(model::FfnnModel& model, const StepPairs& train, const StepPairs& validation,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  if (validation.goals.rows() == 0) throw num::ContractError("empty validation set");
  if (train.goals.rows() != train.labels.rows()) throw num::DimensionError("one label per goal is required");
  Problem p;
  p.parameters = model.parameters().all();
  p.examples = train.goals.rows();
  p.batch_loss = [&](Tape& tape, std::span<const std::size_t> idx, num::Rng&) {
    const Var pred = model.forward(tape, gather_rows(train.goals, idx));
    return mse_loss(pred, tape.constant(gather_rows(train.labels, idx)));
  };
  p.train_loss = [&] { return evaluate_ffnn_loss(model, train); };
  p.val_loss = [&] { return evaluate_ffnn_loss(model, validation); };
  p.save = [&](const std::filesystem::path& path, const json& meta) { model.save(path, meta); };
  return run(p, config, on_epoch);
}

void write_loss_log(std::ostream& out, const std::vector<LossRecord>& history) {
  out << "epoch,train_loss,val_loss\n";
  char line[96];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g\n", r.epoch, r.train_loss, r.val_loss);
    out << line;
  }
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_loss_log(out, history);
}

}  // namespace kt::train
