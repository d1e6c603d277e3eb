#pragma once

#include "kt/ffnn_model.hpp"
#include "kt/kt_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>

namespace kt::eval {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Population mean and std; throws num::ContractError when empty.
MeanStd mean_std(std::span<const double> values);

// predictions[e][n] is the force predicted for step n of episode e.
using Predictions = std::vector<std::vector<data::TendonForces>>;

// Teacher-forced: step n sees the recorded states of the (at most N) steps ending at n.
Predictions predict_kt(const model::KtModel& model, const std::vector<data::Episode>& episodes);
Predictions predict_ffnn(const model::FfnnModel& model, const std::vector<data::Episode>& episodes);
// Oracle that returns the recorded labels.
Predictions echo_labels(const std::vector<data::Episode>& episodes);

struct ForceErrors {
  std::array<MeanStd, 4> tendon{};  // N
  std::size_t samples = 0;
};

struct ScatterPoint {
  data::Vec3 desired = data::Vec3::Zero();
  data::Vec3 achieved = data::Vec3::Zero();
};

struct PositionErrors {
  std::array<MeanStd, 3> axis{};  // mm
  std::size_t samples = 0;
  std::size_t failures = 0;
};

struct Timing {
  double mean_us = 0.0;
  double std_us = 0.0;
  std::size_t iterations = 0;
};

ForceErrors force_error_benchmark(const Predictions& predictions, const std::vector<data::Episode>& episodes);

// Applies each prediction through the forward solver and compares the tip to the waypoint.
// Failed solves are counted and left out of the statistics.
PositionErrors position_error_benchmark(const Predictions& predictions, const std::vector<data::Episode>& episodes,
                                        const data::Simulation& sim, unsigned threads = 1,
                                        std::vector<ScatterPoint>* scatter = nullptr);

// Wall-clock time of one single-input prediction; KT runs a full window of context.
Timing time_kt(const model::KtModel& model, std::size_t iterations = 1000, std::size_t warmup = 100);
Timing time_ffnn(const model::FfnnModel& model, std::size_t iterations = 1000, std::size_t warmup = 100);

struct BenchmarkReport {
  std::string model;
  std::string dataset_hash;
  ForceErrors force;
  PositionErrors position;
  std::optional<Timing> timing;
};

std::string format_report(const BenchmarkReport& report);
nlohmann::json report_to_json(const BenchmarkReport& report);
void write_scatter_csv(std::ostream& out, const std::vector<ScatterPoint>& points);
void write_scatter_csv(const std::filesystem::path& path, const std::vector<ScatterPoint>& points);

}  // namespace kt::eval
