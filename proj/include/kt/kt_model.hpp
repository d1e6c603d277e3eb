#pragma once

#include "kt/checkpoint.hpp"
#include "kt/dataset.hpp"
#include "kt/layers.hpp"

#include <filesystem>
#include <span>
#include <stdexcept>

namespace kt::model {

using data::kActionDim;
using data::kGoalDim;
using data::kStateDim;
using num::Tape;
using num::Tensor;
using num::Var;

struct KtConfig {
  std::size_t sequence_length = 25;
  std::size_t embedding_dim = 128;
  std::size_t layer_count = 12;
  std::size_t head_count = 8;
  double dropout_rate = 0.1;

  // 4 layers, width 64, 4 heads.
  static KtConfig desk();
  void validate() const;
  // Closed form of the number of trainable scalars.
  std::size_t parameter_count() const;
  bool operator==(const KtConfig&) const = default;
};

nlohmann::json to_json(const KtConfig& c);
KtConfig kt_config_from_json(const nlohmann::json& j);

// `batch` stacked sequences of `length` tokens; inputs already normalized.
struct TokenBatch {
  Tensor states;   // (batch*length) x 7
  Tensor goals;    // (batch*length) x 3
  Tensor actions;  // (batch*length) x 4, zero where masked
  std::size_t batch = 0;
  std::size_t length = 0;

  void validate() const;
};

// Training batch from windows; action slots are all masked.
TokenBatch make_batch(std::span<const data::Sequence* const> sequences);
// Labels of the same windows stacked to (batch*length) x 4.
Tensor stack_labels(std::span<const data::Sequence* const> sequences);

// Single-sequence batch from raw (unnormalized) state vectors and goals.
TokenBatch make_tokens(std::span<const std::array<double, kStateDim>> states, std::span<const data::Vec3> goals,
                       const data::Normalizer& normalizer);

// Causal multi-head attention over stacked sequences.
Var masked_attention(Var q, Var k, Var v, std::size_t batch, std::size_t length, std::size_t heads);

class KtModel {
 public:
  KtModel(const KtConfig& config, data::Normalizer normalizer, std::uint64_t seed);

  const KtConfig& config() const { return config_; }
  const data::Normalizer& normalizer() const { return normalizer_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  // Per token: state, goal and action embeddings plus the positional row.
  Var embed(Tape& tape, const TokenBatch& batch) const;
  // De-normalized, unclamped forces, (batch*length) x 4. Dropout is applied when `dropout`
  // is non-null and the configured rate is positive.
  Var forward(Tape& tape, const TokenBatch& batch, num::Rng* dropout = nullptr) const;
  // Inference: no dropout, clamped to [0, max_force]. Requires the action slot of each
  // sequence's last token to be zero.
  Tensor predict_forces(const TokenBatch& batch, double max_force = data::TendonForces::kMax) const;
  // Attention probabilities of every layer for inspection, each (batch*heads*length) x length.
  std::vector<Tensor> attention_maps(const TokenBatch& batch) const;

  nn::Checkpoint to_checkpoint(const nlohmann::json& metadata = nlohmann::json::object()) const;
  static KtModel from_checkpoint(const nn::Checkpoint& checkpoint);
  void save(const std::filesystem::path& path, const nlohmann::json& metadata = nlohmann::json::object()) const;
  static KtModel load(const std::filesystem::path& path);

 private:
  struct Block {
    nn::LayerNorm ln_attention;
    nn::Linear query, key, value, projection;
    nn::LayerNorm ln_feed_forward;
    nn::Linear expand, contract;
  };

  Var run(Tape& tape, const TokenBatch& batch, num::Rng* dropout, std::vector<Tensor>* maps) const;

  KtConfig config_;
  data::Normalizer normalizer_;
  nn::ParameterStore store_;
  nn::Linear state_embedding_, goal_embedding_, action_embedding_;
  num::Parameter* positional_ = nullptr;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

struct Rollout {
  std::vector<data::TendonForces> forces;
  std::vector<data::Vec3> tips;
  std::size_t context_tokens = 0;
};

class RolloutError : public std::runtime_error {
 public:
  RolloutError(const std::string& what, Rollout partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const Rollout& partial() const { return partial_; }

 private:
  Rollout partial_;
};

// Closed loop: predict forces for each waypoint from the recent context, apply them with
// the forward solver and feed the realized state back.
Rollout autoregressive_rollout(const KtModel& model, const data::Simulation& sim, const data::Vec3& initial_tip,
                               const data::TendonForces& initial_forces, std::span<const data::Vec3> waypoints);

}  // namespace kt::model
