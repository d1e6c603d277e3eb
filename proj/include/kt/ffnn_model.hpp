#pragma once

#include "kt/checkpoint.hpp"
#include "kt/dataset.hpp"
#include "kt/layers.hpp"

#include <filesystem>

namespace kt::model {

// Desired tip -> tendon forces through two hidden rectifier layers.
class FfnnModel {
 public:
  static constexpr std::size_t kHidden = 256;

  FfnnModel(data::Normalizer normalizer, std::uint64_t seed, std::size_t hidden = kHidden);

  const data::Normalizer& normalizer() const { return normalizer_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  std::size_t hidden() const { return hidden_; }

  // Rows of normalized goals -> de-normalized, unclamped forces.
  num::Var forward(num::Tape& tape, const num::Tensor& goals) const;
  // Raw desired tip in metres -> clamped forces.
  data::TendonForces predict(const data::Vec3& desired_tip, double max_force = data::TendonForces::kMax) const;
  // Rows of raw desired tips -> clamped forces, rows x 4.
  num::Tensor predict_batch(const std::vector<data::Vec3>& desired_tips,
                            double max_force = data::TendonForces::kMax) const;

  nn::Checkpoint to_checkpoint(const nlohmann::json& metadata = nlohmann::json::object()) const;
  static FfnnModel from_checkpoint(const nn::Checkpoint& checkpoint);
  void save(const std::filesystem::path& path, const nlohmann::json& metadata = nlohmann::json::object()) const;
  static FfnnModel load(const std::filesystem::path& path);

 private:
  data::Normalizer normalizer_;
  std::size_t hidden_;
  nn::ParameterStore store_;
  nn::Linear hidden1_, hidden2_, output_;
};

// Normalized goal rows for a list of raw tips.
num::Tensor normalized_goals(const std::vector<data::Vec3>& tips, const data::Normalizer& normalizer);

}  // namespace kt::model
