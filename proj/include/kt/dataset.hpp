#pragma once

#include "kt/cosserat.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kt::data {

using cosserat::TendonForces;
using cosserat::Vec3;

inline constexpr int kGeneratorVersion = 1;

// One transition: state (tip, applied forces), goal tip and the forces that reach it.
struct Step {
  Vec3 tip = Vec3::Zero();
  TendonForces forces;
  Vec3 desired_tip = Vec3::Zero();
  TendonForces label;

  bool operator==(const Step&) const = default;
};

struct Episode {
  std::uint64_t seed = 0;
  std::vector<Step> steps;

  bool operator==(const Episode&) const = default;
};

// How consecutive label forces relate within an episode.
//   RandomWalk:  T_a(0) ~ U[0, max]^4, then each tendon moves by U[-walk, walk] and is
//                reflected at the bounds. The marginal of every step stays U[0, max].
//   Independent: every T_a(n) is a fresh U[0, max]^4 draw.
enum class ForceProcess { RandomWalk, Independent };

struct GeneratorOptions {
  int steps = 200;
  ForceProcess process = ForceProcess::RandomWalk;
  double walk_step_n = 2.5;
  double max_force_n = TendonForces::kMax;
  int max_redraws = 10;
};

// Everything the forward model needs; shared by generation and evaluation.
struct Simulation {
  cosserat::LimbGeometry geometry;
  cosserat::MaterialProperties material;
  cosserat::SolverOptions solver;

  cosserat::RodConfiguration solve(const TendonForces& forces) const {
    return cosserat::solve_statics(geometry, material, forces, solver);
  }
  Vec3 rest_tip() const { return Vec3(geometry.length_m, 0.0, 0.0); }
};

// Draws the label force sequence of one episode.
class ForceSampler {
 public:
  ForceSampler(const GeneratorOptions& options, num::Rng& rng) : options_(options), rng_(rng) {}

  // Next label given the forces currently applied (ignored for independent draws
  // and for the first step of a walk).
  TendonForces next(const TendonForces& current, bool first);

 private:
  double reflect(double value) const;

  const GeneratorOptions& options_;
  num::Rng& rng_;
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& what, TendonForces forces, std::size_t step)
      : std::runtime_error(what), forces_(forces), step_(step) {}
  const TendonForces& forces() const { return forces_; }
  std::size_t step() const { return step_; }

 private:
  TendonForces forces_;
  std::size_t step_;
};

struct GenerationStats {
  std::size_t solves = 0;
  std::size_t failures = 0;
  double failure_rate() const { return solves == 0 ? 0.0 : static_cast<double>(failures) / solves; }
};

// Episode whose rng stream is Rng(seed).
Episode generate_episode(const Simulation& sim, const GeneratorOptions& options, std::uint64_t seed,
                         GenerationStats* stats = nullptr);

// Episodes with seeds derived from `seed`, generated on `threads` workers (0 = hardware).
std::vector<Episode> generate_dataset(const Simulation& sim, const GeneratorOptions& options,
                                      std::size_t episodes, std::uint64_t seed, unsigned threads = 1,
                                      GenerationStats* stats = nullptr);

// Persistence: one JSON object per line, preceded by a header line.
struct DatasetHeader {
  int generator_version = kGeneratorVersion;
  std::string setup_hash;
  std::string config_hash;
  std::size_t episodes = 0;
};

std::string setup_hash(const Simulation& sim, const GeneratorOptions& options);

void write_dataset(std::ostream& out, const DatasetHeader& header, const std::vector<Episode>& episodes);
void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<Episode>& episodes);

struct LoadedDataset {
  DatasetHeader header;
  std::vector<Episode> episodes;
};

// Throws std::runtime_error on malformed input.
LoadedDataset read_dataset(std::istream& in);
LoadedDataset read_dataset(const std::filesystem::path& path);

nlohmann::json episode_to_json(const Episode& episode);
Episode episode_from_json(const nlohmann::json& j);

// Tip position statistics in millimetres.
struct ColumnStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

struct DatasetSummary {
  ColumnStats x, y, z;
  ColumnStats distance_from_base;
  ColumnStats distance_from_rest;
  std::size_t samples = 0;
};

// Over the state tip r(n) of every step. Throws num::ContractError on empty input.
DatasetSummary summarize(const std::vector<Episode>& episodes, const Vec3& rest_tip);
std::string format_summary(const DatasetSummary& summary);
nlohmann::json summary_to_json(const DatasetSummary& summary);

// Per-channel standardization fitted on training data.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;

  double normalize(std::size_t c, double v) const { return (v - mean[c]) / std[c]; }
  double denormalize(std::size_t c, double v) const { return v * std[c] + mean[c]; }
  bool operator==(const ChannelStats&) const = default;
};

struct Normalizer {
  ChannelStats state;  // r (3) then T (4)
  ChannelStats goal;   // r_d (3)
  ChannelStats force;  // T_a (4), used to de-normalize model outputs

  static Normalizer fit(const std::vector<Episode>& episodes);
  static Normalizer identity();
  bool operator==(const Normalizer&) const = default;
};

nlohmann::json normalizer_to_json(const Normalizer& normalizer);
Normalizer normalizer_from_json(const nlohmann::json& j);

inline constexpr std::size_t kStateDim = 7;
inline constexpr std::size_t kGoalDim = 3;
inline constexpr std::size_t kActionDim = 4;

std::array<double, kStateDim> state_vector(const Step& step);

// One training window: normalized inputs, raw labels in newtons.
struct Sequence {
  num::Tensor states;  // N x 7
  num::Tensor goals;   // N x 3
  num::Tensor labels;  // N x 4
  std::size_t episode = 0;
  std::size_t first_step = 0;
};

struct SequenceSet {
  std::vector<Sequence> sequences;
  std::size_t skipped_episodes = 0;
};

// Consecutive windows of `length` steps; `stride` 0 means non-overlapping.
SequenceSet to_sequences(const std::vector<Episode>& episodes, std::size_t length, const Normalizer& normalizer,
                         std::size_t stride = 0);

struct Split {
  std::vector<Episode> train;
  std::vector<Episode> test;
};

// Episode-level split; the test share is floored. Throws num::ContractError for < 2 episodes.
Split split(const std::vector<Episode>& episodes, double train_fraction, num::Rng& rng);

// One-sample Kolmogorov-Smirnov test against Uniform[lo, hi].
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
KsResult ks_uniform(std::vector<double> samples, double lo, double hi);

}  // namespace kt::data
