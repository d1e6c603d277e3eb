#include "kt/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace kt::data {

using nlohmann::json;

TendonForces ForceSampler::next(const TendonForces& current, bool first) {
  TendonForces out;
  const bool fresh = first || options_.process == ForceProcess::Independent;
  for (std::size_t i = 0; i < out.tension_n.size(); ++i) {
    out[i] = fresh ? rng_.uniform(0.0, options_.max_force_n)
                   : reflect(current[i] + rng_.uniform(-options_.walk_step_n, options_.walk_step_n));
  }
  return out;
}

double ForceSampler::reflect(double value) const {
  const double hi = options_.max_force_n;
  if (value < 0.0) value = -value;
  if (value > hi) value = 2.0 * hi - value;
  return std::clamp(value, 0.0, hi);
}

Episode generate_episode(const Simulation& sim, const GeneratorOptions& options, std::uint64_t seed,
                         GenerationStats* stats) {
  if (options.steps < 1) throw num::ContractError("an episode needs at least one step");
  if (options.walk_step_n < 0.0 || options.walk_step_n > options.max_force_n)
    throw std::invalid_argument("walk step must lie in [0, max force]");

  num::Rng rng(seed);
  ForceSampler sampler(options, rng);
  GenerationStats local;

  Episode episode;
  episode.seed = seed;
  episode.steps.reserve(static_cast<std::size_t>(options.steps));

  TendonForces current;
  ++local.solves;
  Vec3 tip = sim.solve(current).tip();

  for (int n = 0; n < options.steps; ++n) {
    TendonForces label;
    Vec3 desired;
    bool solved = false;
    std::string last_error;
    for (int attempt = 0; attempt <= options.max_redraws && !solved; ++attempt) {
      label = sampler.next(current, n == 0);
      ++local.solves;
      try {
        desired = sim.solve(label).tip();
        solved = true;
      } catch (const cosserat::SolverError& e) {
        ++local.failures;
        last_error = e.what();
      }
    }
    if (!solved) {
      if (stats) {
        stats->solves += local.solves;
        stats->failures += local.failures;
      }
      std::ostringstream msg;
      msg << "step " << n << " of episode " << seed << " failed after " << options.max_redraws
          << " redraws: " << last_error;
      throw GenerationError(msg.str(), label, static_cast<std::size_t>(n));
    }
    episode.steps.push_back(Step{tip, current, desired, label});
    current = label;
    tip = desired;
  }

  if (stats) {
    stats->solves += local.solves;
    stats->failures += local.failures;
  }
  return episode;
}

std::vector<Episode> generate_dataset(const Simulation& sim, const GeneratorOptions& options,
                                      std::size_t episodes, std::uint64_t seed, unsigned threads,
                                      GenerationStats* stats) {
  const num::Rng root(seed);
  std::vector<Episode> out(episodes);
  std::vector<GenerationStats> per_episode(episodes);
  std::vector<std::exception_ptr> errors(episodes);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(episodes, 1)));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < episodes; i = next++) {
      try {
        out[i] = generate_episode(sim, options, root.derive(static_cast<std::uint64_t>(i)).seed(), &per_episode[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (stats) {
    for (const auto& s : per_episode) {
      stats->solves += s.solves;
      stats->failures += s.failures;
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json forces_json(const TendonForces& f) { return json(f.tension_n); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

TendonForces forces_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("expected 4 tendon forces");
  TendonForces f;
  for (std::size_t i = 0; i < 4; ++i) f[i] = j[i].get<double>();
  return f;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

const char* process_name(ForceProcess p) { return p == ForceProcess::RandomWalk ? "random_walk" : "independent"; }

}  // namespace

std::string setup_hash(const Simulation& sim, const GeneratorOptions& options) {
  const auto& g = sim.geometry;
  const auto& m = sim.material;
  const auto& s = sim.solver;
  const json j = {
      {"geometry",
       {g.length_m, g.base_radius_m, g.tip_radius_m, g.tendon_offset_base_m, g.tendon_offset_tip_m,
        g.tendon_angles_rad, g.node_count}},
      {"material", {m.youngs_modulus_pa, m.shear_modulus_pa, m.mass_density_kg_m3}},
      {"solver",
       {s.tolerance_m, s.max_iterations, s.relaxation, s.acceleration_depth, static_cast<int>(s.routing),
        static_cast<int>(s.axial_law), s.distributed_weight, s.water_density_kg_m3, s.gravity_m_s2}},
      {"generator",
       {options.steps, process_name(options.process), options.walk_step_n, options.max_force_n,
        options.max_redraws, kGeneratorVersion}},
  };
  return hex64(num::hash_name(j.dump()));
}

json episode_to_json(const Episode& episode) {
  json steps = json::array();
  for (const Step& s : episode.steps) {
    steps.push_back({{"r", vec_json(s.tip)},
                     {"T", forces_json(s.forces)},
                     {"r_d", vec_json(s.desired_tip)},
                     {"T_a", forces_json(s.label)}});
  }
  return {{"seed", episode.seed}, {"steps", std::move(steps)}};
}

Episode episode_from_json(const json& j) {
  Episode e;
  e.seed = j.at("seed").get<std::uint64_t>();
  for (const json& s : j.at("steps")) {
    e.steps.push_back(Step{vec_from(s.at("r")), forces_from(s.at("T")), vec_from(s.at("r_d")),
                           forces_from(s.at("T_a"))});
  }
  return e;
}

void write_dataset(std::ostream& out, const DatasetHeader& header, const std::vector<Episode>& episodes) {
  const json head = {{"format", "kt-episodes"},
                     {"generator_version", header.generator_version},
                     {"setup_hash", header.setup_hash},
                     {"config_hash", header.config_hash},
                     {"episodes", episodes.size()}};
  out << head.dump() << '\n';
  for (const Episode& e : episodes) out << episode_to_json(e).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing dataset");
}

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<Episode>& episodes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset(out, header, episodes);
}

LoadedDataset read_dataset(std::istream& in) {
  LoadedDataset data;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset is empty");
  try {
    const json head = json::parse(line);
    if (head.value("format", "") != "kt-episodes") throw std::runtime_error("not an episode dataset");
    data.header.generator_version = head.at("generator_version").get<int>();
    data.header.setup_hash = head.at("setup_hash").get<std::string>();
    data.header.config_hash = head.value("config_hash", "");
    data.header.episodes = head.at("episodes").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      data.episodes.push_back(episode_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed dataset: ") + e.what());
  }
  if (data.episodes.size() != data.header.episodes)
    throw std::runtime_error("dataset header announces " + std::to_string(data.header.episodes) +
                             " episodes, found " + std::to_string(data.episodes.size()));
  return data;
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_dataset(in);
}

namespace {

ColumnStats column_stats(const std::vector<double>& v) {
  ColumnStats s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(acc / static_cast<double>(v.size()));
  return s;
}

json column_json(const ColumnStats& c) {
  return {{"min", c.min}, {"max", c.max}, {"mean", c.mean}, {"std", c.std}};
}

}  // namespace

DatasetSummary summarize(const std::vector<Episode>& episodes, const Vec3& rest_tip) {
  std::vector<double> x, y, z, base, rest;
  for (const Episode& e : episodes) {
    for (const Step& s : e.steps) {
      const Vec3 mm = 1000.0 * s.tip;
      x.push_back(mm.x());
      y.push_back(mm.y());
      z.push_back(mm.z());
      base.push_back(1000.0 * s.tip.norm());
      rest.push_back(1000.0 * (s.tip - rest_tip).norm());
    }
  }
  if (x.empty()) throw num::ContractError("cannot summarize an empty dataset");
  DatasetSummary out;
  out.x = column_stats(x);
  out.y = column_stats(y);
  out.z = column_stats(z);
  out.distance_from_base = column_stats(base);
  out.distance_from_rest = column_stats(rest);
  out.samples = x.size();
  return out;
}

std::string format_summary(const DatasetSummary& summary) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << std::left << std::setw(22) << "tip position [mm]" << std::right << std::setw(10) << "min"
      << std::setw(10) << "max" << std::setw(10) << "mean" << std::setw(10) << "std" << '\n';
  auto row = [&](const char* name, const ColumnStats& c) {
    out << std::left << std::setw(22) << name << std::right << std::setw(10) << c.min << std::setw(10) << c.max
        << std::setw(10) << c.mean << std::setw(10) << c.std << '\n';
  };
  row("x", summary.x);
  row("y", summary.y);
  row("z", summary.z);
  row("dist. from base", summary.distance_from_base);
  row("dist. from rest", summary.distance_from_rest);
  out << "samples: " << summary.samples << '\n';
  return out.str();
}

json summary_to_json(const DatasetSummary& summary) {
  return {{"units", "mm"},
          {"samples", summary.samples},
          {"x", column_json(summary.x)},
          {"y", column_json(summary.y)},
          {"z", column_json(summary.z)},
          {"distance_from_base", column_json(summary.distance_from_base)},
          {"distance_from_rest", column_json(summary.distance_from_rest)}};
}

std::array<double, kStateDim> state_vector(const Step& step) {
  return {step.tip.x(), step.tip.y(), step.tip.z(), step.forces[0], step.forces[1], step.forces[2], step.forces[3]};
}

namespace {

ChannelStats fit_channels(const std::vector<std::vector<double>>& columns) {
  ChannelStats out;
  for (const auto& column : columns) {
    const ColumnStats s = column_stats(column);
    out.mean.push_back(s.mean);
    out.std.push_back(s.std > 1e-12 ? s.std : 1.0);
  }
  return out;
}

ChannelStats unit_channels(std::size_t n) { return ChannelStats{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

json channels_json(const ChannelStats& c) { return {{"mean", c.mean}, {"std", c.std}}; }

ChannelStats channels_from(const json& j, std::size_t n) {
  ChannelStats c{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (c.mean.size() != n || c.std.size() != n) throw std::runtime_error("normalizer has the wrong channel count");
  for (double s : c.std)
    if (!(s > 0.0)) throw std::runtime_error("normalizer std must be positive");
  return c;
}

}  // namespace

Normalizer Normalizer::fit(const std::vector<Episode>& episodes) {
  std::vector<std::vector<double>> state(kStateDim), goal(kGoalDim), force(kActionDim);
  for (const Episode& e : episodes) {
    for (const Step& s : e.steps) {
      const auto sv = state_vector(s);
      for (std::size_t c = 0; c < kStateDim; ++c) state[c].push_back(sv[c]);
      for (std::size_t c = 0; c < kGoalDim; ++c) goal[c].push_back(s.desired_tip[static_cast<Eigen::Index>(c)]);
      for (std::size_t c = 0; c < kActionDim; ++c) force[c].push_back(s.label[c]);
    }
  }
  if (state[0].empty()) throw num::ContractError("cannot fit a normalizer on no data");
  return Normalizer{fit_channels(state), fit_channels(goal), fit_channels(force)};
}

Normalizer Normalizer::identity() {
  return Normalizer{unit_channels(kStateDim), unit_channels(kGoalDim), unit_channels(kActionDim)};
}

json normalizer_to_json(const Normalizer& n) {
  return {{"state", channels_json(n.state)}, {"goal", channels_json(n.goal)}, {"force", channels_json(n.force)}};
}

Normalizer normalizer_from_json(const json& j) {
  return Normalizer{channels_from(j.at("state"), kStateDim), channels_from(j.at("goal"), kGoalDim),
                    channels_from(j.at("force"), kActionDim)};
}

SequenceSet to_sequences(const std::vector<Episode>& episodes, std::size_t length, const Normalizer& normalizer,
                         std::size_t stride) {
  if (length == 0) throw num::ContractError("sequence length must be positive");
  if (stride == 0) stride = length;
  SequenceSet out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& steps = episodes[e].steps;
    if (steps.size() < length) {
      ++out.skipped_episodes;
      continue;
    }
    for (std::size_t first = 0; first + length <= steps.size(); first += stride) {
      Sequence seq{num::Tensor::matrix(length, kStateDim), num::Tensor::matrix(length, kGoalDim),
                   num::Tensor::matrix(length, kActionDim), e, first};
      for (std::size_t n = 0; n < length; ++n) {
        const Step& s = steps[first + n];
        const auto sv = state_vector(s);
        for (std::size_t c = 0; c < kStateDim; ++c) seq.states(n, c) = normalizer.state.normalize(c, sv[c]);
        for (std::size_t c = 0; c < kGoalDim; ++c)
          seq.goals(n, c) = normalizer.goal.normalize(c, s.desired_tip[static_cast<Eigen::Index>(c)]);
        for (std::size_t c = 0; c < kActionDim; ++c) seq.labels(n, c) = s.label[c];
      }
      out.sequences.push_back(std::move(seq));
    }
  }
  return out;
}

Split split(const std::vector<Episode>& episodes, double train_fraction, num::Rng& rng) {
  const std::size_t n = episodes.size();
  if (n < 2) throw num::ContractError("splitting needs at least two episodes");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw num::ContractError("train fraction must be in (0, 1)");

  // Guard against 0.2 * 10 landing just under 2.
  auto test_count = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - train_fraction) + 1e-9));
  test_count = std::clamp<std::size_t>(test_count, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_count), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());

  Split out;
  for (std::size_t i : train) out.train.push_back(episodes[i]);
  for (std::size_t i : test) out.test.push_back(episodes[i]);
  return out;
}

KsResult ks_uniform(std::vector<double> samples, double lo, double hi) {
  if (samples.empty()) throw num::ContractError("KS test needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = std::clamp((samples[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
  }
  // Asymptotic Kolmogorov distribution with the small-sample correction of Stephens.
  const double sqrt_n = std::sqrt(n);
  const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
  double p = 0.0;
  if (lambda < 1e-3) {
    p = 1.0;
  } else {
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
      const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
      p += term;
      if (std::abs(term) < 1e-12) break;
      sign = -sign;
    }
    p = std::clamp(2.0 * p, 0.0, 1.0);
  }
  return KsResult{d, p};
}

}  // namespace kt::data
