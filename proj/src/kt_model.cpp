#include "kt/kt_model.hpp"

#include <algorithm>
#include <deque>

namespace kt::model {

using nlohmann::json;

KtConfig KtConfig::desk() {
  KtConfig c;
  c.embedding_dim = 64;
  c.layer_count = 4;
  c.head_count = 4;
  return c;
}

void KtConfig::validate() const {
  if (sequence_length < 1 || embedding_dim < 1 || layer_count < 1 || head_count < 1)
    throw std::invalid_argument("KT dimensions must be at least 1");
  if (embedding_dim % head_count != 0) throw std::invalid_argument("embedding_dim must be divisible by head_count");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must be in [0, 1)");
}

std::size_t KtConfig::parameter_count() const {
  const std::size_t d = embedding_dim;
  const std::size_t embeddings = (kStateDim + kGoalDim + kActionDim) * d + 3 * d + sequence_length * d;
  const std::size_t block = 12 * d * d + 13 * d;
  const std::size_t tail = 2 * d + kActionDim * d + kActionDim;
  return embeddings + layer_count * block + tail;
}

json to_json(const KtConfig& c) {
  return {{"sequence_length", c.sequence_length},
          {"embedding_dim", c.embedding_dim},
          {"layer_count", c.layer_count},
          {"head_count", c.head_count},
          {"dropout_rate", c.dropout_rate}};
}

KtConfig kt_config_from_json(const json& j) {
  KtConfig c;
  c.sequence_length = j.at("sequence_length").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.layer_count = j.at("layer_count").get<std::size_t>();
  c.head_count = j.at("head_count").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.validate();
  return c;
}

void TokenBatch::validate() const {
  const std::size_t rows = batch * length;
  if (batch == 0 || length == 0) throw num::ContractError("token batch is empty");
  if (states.rows() != rows || states.cols() != kStateDim || goals.rows() != rows || goals.cols() != kGoalDim ||
      actions.rows() != rows || actions.cols() != kActionDim)
    throw num::DimensionError("token batch tensors do not match batch x length");
}

TokenBatch make_batch(std::span<const data::Sequence* const> sequences) {
  if (sequences.empty()) throw num::ContractError("cannot batch zero sequences");
  const std::size_t length = sequences.front()->states.rows();
  TokenBatch b{Tensor::matrix(sequences.size() * length, kStateDim), Tensor::matrix(sequences.size() * length, kGoalDim),
               Tensor::matrix(sequences.size() * length, kActionDim), sequences.size(), length};
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const data::Sequence& seq = *sequences[s];
    if (seq.states.rows() != length) throw num::DimensionError("sequences in a batch must share a length");
    std::copy(seq.states.values().begin(), seq.states.values().end(), b.states.data() + s * length * kStateDim);
    std::copy(seq.goals.values().begin(), seq.goals.values().end(), b.goals.data() + s * length * kGoalDim);
  }
  return b;
}

Tensor stack_labels(std::span<const data::Sequence* const> sequences) {
  if (sequences.empty()) throw num::ContractError("cannot batch zero sequences");
  const std::size_t length = sequences.front()->labels.rows();
  Tensor out = Tensor::matrix(sequences.size() * length, kActionDim);
  for (std::size_t s = 0; s < sequences.size(); ++s)
    std::copy(sequences[s]->labels.values().begin(), sequences[s]->labels.values().end(),
              out.data() + s * length * kActionDim);
  return out;
}

TokenBatch make_tokens(std::span<const std::array<double, kStateDim>> states, std::span<const data::Vec3> goals,
                       const data::Normalizer& normalizer) {
  if (states.size() != goals.size()) throw num::DimensionError("one goal per state is required");
  const std::size_t n = states.size();
  TokenBatch b{Tensor::matrix(n, kStateDim), Tensor::matrix(n, kGoalDim), Tensor::matrix(n, kActionDim), 1, n};
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < kStateDim; ++c) b.states(t, c) = normalizer.state.normalize(c, states[t][c]);
    for (std::size_t c = 0; c < kGoalDim; ++c)
      b.goals(t, c) = normalizer.goal.normalize(c, goals[t][static_cast<Eigen::Index>(c)]);
  }
  return b;
}

Var masked_attention(Var q, Var k, Var v, std::size_t batch, std::size_t length, std::size_t heads) {
  return num::multi_head_attention(q, k, v, batch, length, heads, true);
}

KtModel::KtModel(const KtConfig& config, data::Normalizer normalizer, std::uint64_t seed)
    : config_(config), normalizer_(std::move(normalizer)) {
  config_.validate();
  const std::size_t d = config_.embedding_dim;
  num::Rng rng = num::Rng(seed).derive("kt-init");

  state_embedding_ = nn::Linear::create(store_, "embed.state", kStateDim, d, rng);
  goal_embedding_ = nn::Linear::create(store_, "embed.goal", kGoalDim, d, rng);
  action_embedding_ = nn::Linear::create(store_, "embed.action", kActionDim, d, rng);
  // A learned table is a linear layer over one-hot positions, so its fan-in is N.
  positional_ = &store_.add("embed.position",
                            nn::uniform_init({config_.sequence_length, d}, config_.sequence_length, rng));
  for (std::size_t l = 0; l < config_.layer_count; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln_attention = nn::LayerNorm::create(store_, p + "ln_attention", d);
    b.query = nn::Linear::create(store_, p + "attention.query", d, d, rng);
    b.key = nn::Linear::create(store_, p + "attention.key", d, d, rng);
    b.value = nn::Linear::create(store_, p + "attention.value", d, d, rng);
    b.projection = nn::Linear::create(store_, p + "attention.projection", d, d, rng);
    b.ln_feed_forward = nn::LayerNorm::create(store_, p + "ln_feed_forward", d);
    b.expand = nn::Linear::create(store_, p + "feed_forward.expand", d, 4 * d, rng);
    b.contract = nn::Linear::create(store_, p + "feed_forward.contract", 4 * d, d, rng);
    blocks_.push_back(b);
  }
  final_norm_ = nn::LayerNorm::create(store_, "final_norm", d);
  head_ = nn::Linear::create(store_, "head", d, kActionDim, rng);

  if (store_.scalar_count() != config_.parameter_count())
    throw std::logic_error("KT parameter count disagrees with its closed form");
}

Var KtModel::embed(Tape& tape, const TokenBatch& batch) const {
  batch.validate();
  if (batch.length > config_.sequence_length)
    throw num::ContractError("token sequence of " + std::to_string(batch.length) + " exceeds the window of " +
                             std::to_string(config_.sequence_length));
  Var e = state_embedding_(tape, tape.constant(batch.states)) + goal_embedding_(tape, tape.constant(batch.goals)) +
          action_embedding_(tape, tape.constant(batch.actions));
  Var positions = num::slice_rows(tape.leaf(*positional_), 0, batch.length);
  return e + (batch.batch == 1 ? positions : num::tile_rows(positions, batch.batch));
}

Var KtModel::run(Tape& tape, const TokenBatch& batch, num::Rng* dropout, std::vector<Tensor>* maps) const {
  const double rate = dropout ? config_.dropout_rate : 0.0;
  auto drop = [&](Var x) { return rate > 0.0 ? num::dropout(x, rate, *dropout) : x; };

  Var x = drop(embed(tape, batch));
  for (const Block& b : blocks_) {
    Var h = b.ln_attention(tape, x);
    Var q = b.query(tape, h), k = b.key(tape, h), v = b.value(tape, h);
    if (maps)
      maps->push_back(num::attention_weights(q.value(), k.value(), batch.batch, batch.length, config_.head_count, true));
    Var context = masked_attention(q, k, v, batch.batch, batch.length, config_.head_count);
    x = x + drop(b.projection(tape, context));
    Var f = b.contract(tape, num::gelu(b.expand(tape, b.ln_feed_forward(tape, x))));
    x = x + drop(f);
  }
  Var normalized = head_(tape, final_norm_(tape, x));
  const Tensor scale({kActionDim}, normalizer_.force.std);
  const Tensor shift({kActionDim}, normalizer_.force.mean);
  return num::add_row(num::mul_row(normalized, tape.constant(scale)), tape.constant(shift));
}

Var KtModel::forward(Tape& tape, const TokenBatch& batch, num::Rng* dropout) const {
  return run(tape, batch, dropout, nullptr);
}

Tensor KtModel::predict_forces(const TokenBatch& batch, double max_force) const {
  batch.validate();
  for (std::size_t s = 0; s < batch.batch; ++s) {
    const std::size_t last = (s + 1) * batch.length - 1;
    for (std::size_t c = 0; c < kActionDim; ++c)
      if (batch.actions(last, c) != 0.0) throw num::ContractError("the action slot being predicted must be zero");
  }
  Tape tape(false);
  Tensor out = forward(tape, batch).value();
  for (double& v : out.values()) v = std::clamp(v, 0.0, max_force);
  return out;
}

std::vector<Tensor> KtModel::attention_maps(const TokenBatch& batch) const {
  std::vector<Tensor> maps;
  Tape tape(false);
  run(tape, batch, nullptr, &maps);
  return maps;
}

nn::Checkpoint KtModel::to_checkpoint(const json& metadata) const {
  json header = {{"format_version", nn::kCheckpointVersion},
                 {"kind", "kt"},
                 {"config", to_json(config_)},
                 {"normalizer", data::normalizer_to_json(normalizer_)},
                 {"parameter_count", store_.scalar_count()},
                 {"metadata", metadata}};
  return nn::Checkpoint{std::move(header), nn::parameter_blocks(store_)};
}

KtModel KtModel::from_checkpoint(const nn::Checkpoint& checkpoint) {
  const json& h = checkpoint.header;
  if (h.value("kind", "") != "kt") throw std::runtime_error("checkpoint does not hold a KT model");
  if (h.value("format_version", 0) != nn::kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const KtConfig config = kt_config_from_json(h.at("config"));
  if (h.at("parameter_count").get<std::size_t>() != config.parameter_count())
    throw std::runtime_error("checkpoint parameter count disagrees with its config");
  KtModel model(config, data::normalizer_from_json(h.at("normalizer")), 0);
  nn::load_parameters(model.store_, checkpoint);
  return model;
}

void KtModel::save(const std::filesystem::path& path, const json& metadata) const {
  nn::write_checkpoint(path, to_checkpoint(metadata));
}

KtModel KtModel::load(const std::filesystem::path& path) { return from_checkpoint(nn::read_checkpoint(path)); }

Rollout autoregressive_rollout(const KtModel& model, const data::Simulation& sim, const data::Vec3& initial_tip,
                               const data::TendonForces& initial_forces, std::span<const data::Vec3> waypoints) {
  const std::size_t window = model.config().sequence_length;
  std::deque<std::array<double, kStateDim>> states;
  std::deque<data::Vec3> goals;
  Rollout out;
  data::Vec3 tip = initial_tip;
  data::TendonForces forces = initial_forces;

  for (const data::Vec3& waypoint : waypoints) {
    data::Step current;
    current.tip = tip;
    current.forces = forces;
    states.push_back(data::state_vector(current));
    goals.push_back(waypoint);
    if (states.size() > window) {
      states.pop_front();
      goals.pop_front();
    }
    const std::vector<std::array<double, kStateDim>> s(states.begin(), states.end());
    const std::vector<data::Vec3> g(goals.begin(), goals.end());
    const Tensor predicted = model.predict_forces(make_tokens(s, g, model.normalizer()));
    data::TendonForces next;
    for (std::size_t c = 0; c < kActionDim; ++c) next[c] = predicted(predicted.rows() - 1, c);

    try {
      tip = sim.solve(next).tip();
    } catch (const cosserat::SolverError& e) {
      out.context_tokens = states.size();
      throw RolloutError(std::string("forward solve failed during rollout: ") + e.what(), std::move(out));
    }
    forces = next;
    out.forces.push_back(next);
    out.tips.push_back(tip);
    out.context_tokens = states.size();
  }
  return out;
}

}  // namespace kt::model
