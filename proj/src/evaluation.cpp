#include "kt/evaluation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace kt::eval {

using nlohmann::json;
using num::Tensor;

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw num::ContractError("statistics of an empty sample");
  double total = 0.0;
  for (double v : values) total += v;
  const double mean = total / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

namespace {

data::TendonForces row_forces(const Tensor& t, std::size_t row) {
  data::TendonForces f;
  for (std::size_t c = 0; c < data::kActionDim; ++c) f[c] = t(row, c);
  return f;
}

// Normalized state and goal rows of a whole episode.
std::pair<Tensor, Tensor> episode_inputs(const data::Episode& e, const data::Normalizer& normalizer) {
  std::vector<std::array<double, data::kStateDim>> states;
  std::vector<data::Vec3> goals;
  for (const auto& s : e.steps) {
    states.push_back(data::state_vector(s));
    goals.push_back(s.desired_tip);
  }
  model::TokenBatch b = model::make_tokens(states, goals, normalizer);
  return {std::move(b.states), std::move(b.goals)};
}

void copy_rows(const Tensor& from, std::size_t first, std::size_t count, Tensor& to, std::size_t at) {
  const std::size_t w = from.cols();
  std::copy(from.data() + first * w, from.data() + (first + count) * w, to.data() + at * w);
}

}  // namespace

Predictions predict_kt(const model::KtModel& model, const std::vector<data::Episode>& episodes) {
  const std::size_t window = model.config().sequence_length;
  constexpr std::size_t kBatch = 64;
  Predictions out;
  for (const auto& e : episodes) {
    const std::size_t n = e.steps.size();
    std::vector<data::TendonForces> pred(n);
    if (n == 0) {
      out.push_back(pred);
      continue;
    }
    const auto [states, goals] = episode_inputs(e, model.normalizer());

    // Steps before a full window: one causal pass over the prefix.
    const std::size_t head = std::min(n, window);
    model::TokenBatch prefix{Tensor::matrix(head, data::kStateDim), Tensor::matrix(head, data::kGoalDim),
                             Tensor::matrix(head, data::kActionDim), 1, head};
    copy_rows(states, 0, head, prefix.states, 0);
    copy_rows(goals, 0, head, prefix.goals, 0);
    const Tensor first = model.predict_forces(prefix);
    for (std::size_t i = 0; i < head; ++i) pred[i] = row_forces(first, i);

    // Later steps: the window ending at each step, read at its last position.
    for (std::size_t end = window; end < n; end += kBatch) {
      const std::size_t count = std::min(kBatch, n - end);
      model::TokenBatch b{Tensor::matrix(count * window, data::kStateDim), Tensor::matrix(count * window, data::kGoalDim),
                          Tensor::matrix(count * window, data::kActionDim), count, window};
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t start = end + k + 1 - window;
        copy_rows(states, start, window, b.states, k * window);
        copy_rows(goals, start, window, b.goals, k * window);
      }
      const Tensor p = model.predict_forces(b);
      for (std::size_t k = 0; k < count; ++k) pred[end + k] = row_forces(p, (k + 1) * window - 1);
    }
    out.push_back(std::move(pred));
  }
  return out;
}

Predictions predict_ffnn(const model::FfnnModel& model, const std::vector<data::Episode>& episodes) {
  Predictions out;
  for (const auto& e : episodes) {
    std::vector<data::Vec3> goals;
    for (const auto& s : e.steps) goals.push_back(s.desired_tip);
    std::vector<data::TendonForces> pred;
    if (!goals.empty()) {
      const Tensor p = model.predict_batch(goals);
      for (std::size_t i = 0; i < goals.size(); ++i) pred.push_back(row_forces(p, i));
    }
    out.push_back(std::move(pred));
  }
  return out;
}

Predictions echo_labels(const std::vector<data::Episode>& episodes) {
  Predictions out;
  for (const auto& e : episodes) {
    std::vector<data::TendonForces> pred;
    for (const auto& s : e.steps) pred.push_back(s.label);
    out.push_back(std::move(pred));
  }
  return out;
}

namespace {

void check_alignment(const Predictions& predictions, const std::vector<data::Episode>& episodes) {
  if (predictions.size() != episodes.size()) throw num::DimensionError("one prediction list per episode is required");
  for (std::size_t e = 0; e < episodes.size(); ++e)
    if (predictions[e].size() != episodes[e].steps.size())
      throw num::DimensionError("one prediction per step is required");
}

}  // namespace

ForceErrors force_error_benchmark(const Predictions& predictions, const std::vector<data::Episode>& episodes) {
  check_alignment(predictions, episodes);
  std::array<std::vector<double>, 4> errors;
  for (std::size_t e = 0; e < episodes.size(); ++e)
    for (std::size_t n = 0; n < episodes[e].steps.size(); ++n)
      for (std::size_t i = 0; i < 4; ++i) errors[i].push_back(std::abs(predictions[e][n][i] - episodes[e].steps[n].label[i]));
  if (errors[0].empty()) throw num::ContractError("empty test set");
  ForceErrors out;
  out.samples = errors[0].size();
  for (std::size_t i = 0; i < 4; ++i) out.tendon[i] = mean_std(errors[i]);
  return out;
}

PositionErrors position_error_benchmark(const Predictions& predictions, const std::vector<data::Episode>& episodes,
                                        const data::Simulation& sim, unsigned threads,
                                        std::vector<ScatterPoint>* scatter) {
  check_alignment(predictions, episodes);
  std::vector<std::pair<const data::TendonForces*, const data::Step*>> jobs;
  for (std::size_t e = 0; e < episodes.size(); ++e)
    for (std::size_t n = 0; n < episodes[e].steps.size(); ++n) jobs.emplace_back(&predictions[e][n], &episodes[e].steps[n]);
  if (jobs.empty()) throw num::ContractError("empty test set");

  std::vector<std::optional<data::Vec3>> achieved(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        achieved[i] = sim.solve(*jobs[i].first).tip();
      } catch (const cosserat::SolverError&) {
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  PositionErrors out;
  std::array<std::vector<double>, 3> errors;
  if (scatter) scatter->clear();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!achieved[i]) {
      ++out.failures;
      continue;
    }
    const data::Vec3& desired = jobs[i].second->desired_tip;
    for (Eigen::Index a = 0; a < 3; ++a) errors[a].push_back(1000.0 * std::abs((*achieved[i])[a] - desired[a]));
    if (scatter) scatter->push_back({desired, *achieved[i]});
  }
  out.samples = errors[0].size();
  if (out.samples > 0)
    for (std::size_t a = 0; a < 3; ++a) out.axis[a] = mean_std(errors[a]);
  return out;
}

namespace {

template <class F>
Timing time_calls(F&& call, std::size_t iterations, std::size_t warmup) {
  if (iterations == 0) throw num::ContractError("timing needs at least one iteration");
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) call();
  std::vector<double> us(iterations);
  for (auto& t : us) {
    const auto start = clock::now();
    call();
    t = std::chrono::duration<double, std::micro>(clock::now() - start).count();
  }
  const MeanStd s = mean_std(us);
  return {s.mean, s.std, iterations};
}

}  // namespace

Timing time_kt(const model::KtModel& model, std::size_t iterations, std::size_t warmup) {
  const std::size_t n = model.config().sequence_length;
  num::Rng rng(7);
  model::TokenBatch b{Tensor::matrix(n, data::kStateDim), Tensor::matrix(n, data::kGoalDim),
                      Tensor::matrix(n, data::kActionDim), 1, n};
  for (double& v : b.states.values()) v = rng.uniform(-1, 1);
  for (double& v : b.goals.values()) v = rng.uniform(-1, 1);
  volatile double sink = 0.0;
  return time_calls([&] { sink = sink + model.predict_forces(b)(n - 1, 0); }, iterations, warmup);
}

Timing time_ffnn(const model::FfnnModel& model, std::size_t iterations, std::size_t warmup) {
  const data::Vec3 goal(0.55, 0.05, -0.05);
  volatile double sink = 0.0;
  return time_calls([&] { sink = sink + model.predict(goal)[0]; }, iterations, warmup);
}

std::string format_report(const BenchmarkReport& r) {
  std::ostringstream out;
  char line[160];
  out << "model: " << r.model << "\n";
  if (!r.dataset_hash.empty()) out << "dataset: " << r.dataset_hash << "\n";
  out << "\nTendon force error (N), " << r.force.samples << " samples\n";
  out << "tendon      MAE      std\n";
  for (std::size_t i = 0; i < 4; ++i) {
    std::snprintf(line, sizeof line, "T%zu     %8.4f %8.4f\n", i + 1, r.force.tendon[i].mean, r.force.tendon[i].std);
    out << line;
  }
  out << "\nTip position error (mm), " << r.position.samples << " samples, " << r.position.failures
      << " solver failures\n";
  out << "axis        MAE      std\n";
  const char* axes = "xyz";
  for (std::size_t a = 0; a < 3; ++a) {
    std::snprintf(line, sizeof line, "%c      %8.3f %8.3f\n", axes[a], r.position.axis[a].mean, r.position.axis[a].std);
    out << line;
  }
  if (r.timing) {
    std::snprintf(line, sizeof line, "\nInference time: %.2f +- %.2f us over %zu calls\n", r.timing->mean_us,
                  r.timing->std_us, r.timing->iterations);
    out << line;
  }
  return out.str();
}

json report_to_json(const BenchmarkReport& r) {
  json force = json::array(), position = json::array();
  for (const auto& t : r.force.tendon) force.push_back({{"mae_n", t.mean}, {"std_n", t.std}});
  for (const auto& a : r.position.axis) position.push_back({{"mae_mm", a.mean}, {"std_mm", a.std}});
  json j = {{"model", r.model},
            {"dataset_hash", r.dataset_hash},
            {"force", {{"samples", r.force.samples}, {"tendons", force}}},
            {"position", {{"samples", r.position.samples}, {"failures", r.position.failures}, {"axes", position}}}};
  if (r.timing)
    j["timing"] = {{"mean_us", r.timing->mean_us}, {"std_us", r.timing->std_us}, {"iterations", r.timing->iterations}};
  return j;
}

void write_scatter_csv(std::ostream& out, const std::vector<ScatterPoint>& points) {
  out << "x_d,y_d,z_d,x_a,y_a,z_a\n";
  char line[160];
  for (const auto& p : points) {
    std::snprintf(line, sizeof line, "%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", p.desired.x(), p.desired.y(), p.desired.z(),
                  p.achieved.x(), p.achieved.y(), p.achieved.z());
    out << line;
  }
}

void write_scatter_csv(const std::filesystem::path& path, const std::vector<ScatterPoint>& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_scatter_csv(out, points);
}

}  // namespace kt::eval
