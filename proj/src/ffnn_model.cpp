#include "kt/ffnn_model.hpp"

#include <algorithm>

namespace kt::model {

using nlohmann::json;
using num::Tensor;
using num::Var;

FfnnModel::FfnnModel(data::Normalizer normalizer, std::uint64_t seed, std::size_t hidden)
    : normalizer_(std::move(normalizer)), hidden_(hidden) {
  if (hidden_ == 0) throw std::invalid_argument("hidden width must be positive");
  num::Rng rng = num::Rng(seed).derive("ffnn-init");
  hidden1_ = nn::Linear::create(store_, "hidden1", data::kGoalDim, hidden_, rng);
  hidden2_ = nn::Linear::create(store_, "hidden2", hidden_, hidden_, rng);
  output_ = nn::Linear::create(store_, "output", hidden_, data::kActionDim, rng);
}

Var FfnnModel::forward(num::Tape& tape, const Tensor& goals) const {
  if (goals.rank() != 2 || goals.cols() != data::kGoalDim) throw num::DimensionError("FFNN expects rows of 3 goals");
  Var h = num::relu(hidden1_(tape, tape.constant(goals)));
  h = num::relu(hidden2_(tape, h));
  Var normalized = output_(tape, h);
  const Tensor scale({data::kActionDim}, normalizer_.force.std);
  const Tensor shift({data::kActionDim}, normalizer_.force.mean);
  return num::add_row(num::mul_row(normalized, tape.constant(scale)), tape.constant(shift));
}

Tensor normalized_goals(const std::vector<data::Vec3>& tips, const data::Normalizer& normalizer) {
  Tensor out = Tensor::matrix(tips.size(), data::kGoalDim);
  for (std::size_t r = 0; r < tips.size(); ++r)
    for (std::size_t c = 0; c < data::kGoalDim; ++c)
      out(r, c) = normalizer.goal.normalize(c, tips[r][static_cast<Eigen::Index>(c)]);
  return out;
}

Tensor FfnnModel::predict_batch(const std::vector<data::Vec3>& desired_tips, double max_force) const {
  num::Tape tape(false);
  Tensor out = forward(tape, normalized_goals(desired_tips, normalizer_)).value();
  for (double& v : out.values()) v = std::clamp(v, 0.0, max_force);
  return out;
}

data::TendonForces FfnnModel::predict(const data::Vec3& desired_tip, double max_force) const {
  const Tensor out = predict_batch({desired_tip}, max_force);
  data::TendonForces f;
  for (std::size_t c = 0; c < data::kActionDim; ++c) f[c] = out[c];
  return f;
}

nn::Checkpoint FfnnModel::to_checkpoint(const json& metadata) const {
  json header = {{"format_version", nn::kCheckpointVersion},
                 {"kind", "ffnn"},
                 {"config", {{"hidden", hidden_}}},
                 {"normalizer", data::normalizer_to_json(normalizer_)},
                 {"parameter_count", store_.scalar_count()},
                 {"metadata", metadata}};
  return nn::Checkpoint{std::move(header), nn::parameter_blocks(store_)};
}

FfnnModel FfnnModel::from_checkpoint(const nn::Checkpoint& checkpoint) {
  const json& h = checkpoint.header;
  if (h.value("kind", "") != "ffnn") throw std::runtime_error("checkpoint does not hold an FFNN model");
  if (h.value("format_version", 0) != nn::kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  FfnnModel model(data::normalizer_from_json(h.at("normalizer")), 0, h.at("config").at("hidden").get<std::size_t>());
  nn::load_parameters(model.store_, checkpoint);
  return model;
}

void FfnnModel::save(const std::filesystem::path& path, const json& metadata) const {
  nn::write_checkpoint(path, to_checkpoint(metadata));
}

FfnnModel FfnnModel::load(const std::filesystem::path& path) { return from_checkpoint(nn::read_checkpoint(path)); }

}  // namespace kt::model
