#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <type_traits>

namespace kt::cli {

using nlohmann::json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const json& v = *it;
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>)
      ok = v.is_boolean();
    else if constexpr (std::is_unsigned_v<T>)
      ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    else if constexpr (std::is_integral_v<T>)
      ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>)
      ok = v.is_number();
    else if constexpr (std::is_same_v<T, std::string>)
      ok = v.is_string();
    else
      ok = true;
    if (!ok) throw ConfigError("wrong type for " + name(key));
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for " + name(key));
    }
  }

  template <class E>
  void read_enum(const std::string& key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    std::string text;
    for (const auto& [n, e] : names)
      if (e == out) text = n;
    read(key, text);
    for (const auto& [n, e] : names)
      if (text == n) {
        out = e;
        return;
      }
    throw ConfigError("unknown value '" + text + "' for " + name(key));
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return Section(it == j_.end() ? empty() : *it, name(key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + name(item.key()));
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr std::initializer_list<std::pair<const char*, cosserat::TendonRouting>> kRouting = {
    {"embedded", cosserat::TendonRouting::Embedded}, {"chord", cosserat::TendonRouting::Chord}};
constexpr std::initializer_list<std::pair<const char*, cosserat::AxialLaw>> kAxial = {
    {"logarithmic", cosserat::AxialLaw::Logarithmic}, {"linear", cosserat::AxialLaw::Linear}};
constexpr std::initializer_list<std::pair<const char*, data::ForceProcess>> kProcess = {
    {"random_walk", data::ForceProcess::RandomWalk}, {"independent", data::ForceProcess::Independent}};

template <class E>
const char* enum_name(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (e == value) return n;
  return "";
}

void read_training(Section s, train::TrainConfig& t) {
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("learning_rate", t.learning_rate);
  s.read("checkpoint_interval_epochs", t.checkpoint_interval);
  s.read("shuffle", t.shuffle);
  s.finish();
}

json training_json(const train::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"checkpoint_interval_epochs", t.checkpoint_interval},
          {"shuffle", t.shuffle}};
}

}  // namespace

void ToolkitConfig::validate() const {
  try {
    sim.geometry.validate();
    sim.material.validate();
    kt.validate();
    kt_training.validate();
    ffnn_training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (episodes == 0) throw ConfigError("dataset.episodes must be positive");
  if (generator.steps < 1) throw ConfigError("dataset.steps must be positive");
  if (!(generator.max_force_n > 0.0)) throw ConfigError("dataset.max_force_n must be positive");
  if (!(generator.walk_step_n > 0.0)) throw ConfigError("dataset.walk_step_n must be positive");
  if (generator.max_redraws < 0) throw ConfigError("dataset.max_redraws must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("dataset.train_fraction must be in (0, 1)");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("dataset.validation_fraction must be in (0, 1)");
  if (sim.solver.max_iterations < 1) throw ConfigError("solver.max_iterations must be positive");
  if (!(sim.solver.tolerance_m > 0.0)) throw ConfigError("solver.tolerance_m must be positive");
  if (!(sim.solver.relaxation > 0.0 && sim.solver.relaxation <= 1.0))
    throw ConfigError("solver.relaxation must be in (0, 1]");
  if (sim.solver.acceleration_depth < 0) throw ConfigError("solver.acceleration_depth must be non-negative");
  if (ffnn_hidden == 0) throw ConfigError("ffnn.hidden_units must be positive");
}

ToolkitConfig config_from_json(const json& j) {
  ToolkitConfig c;
  Section root(j, "");
  root.read("seed", c.seed);

  Section limb = root.child("limb");
  auto& g = c.sim.geometry;
  limb.read("length_m", g.length_m);
  limb.read("base_radius_m", g.base_radius_m);
  limb.read("tip_radius_m", g.tip_radius_m);
  limb.read("tendon_offset_base_m", g.tendon_offset_base_m);
  limb.read("tendon_offset_tip_m", g.tendon_offset_tip_m);
  limb.read("tendon_angles_rad", g.tendon_angles_rad);
  limb.read("nodes", g.node_count);
  limb.finish();

  Section material = root.child("material");
  material.read("youngs_modulus_pa", c.sim.material.youngs_modulus_pa);
  material.read("shear_modulus_pa", c.sim.material.shear_modulus_pa);
  material.read("density_kg_m3", c.sim.material.mass_density_kg_m3);
  material.finish();

  Section solver = root.child("solver");
  auto& s = c.sim.solver;
  solver.read("tolerance_m", s.tolerance_m);
  solver.read("max_iterations", s.max_iterations);
  solver.read("relaxation", s.relaxation);
  solver.read("acceleration_depth", s.acceleration_depth);
  solver.read_enum("tendon_routing", s.routing, kRouting);
  solver.read_enum("axial_law", s.axial_law, kAxial);
  solver.read("distributed_weight", s.distributed_weight);
  solver.read("water_density_kg_m3", s.water_density_kg_m3);
  solver.read("gravity_m_s2", s.gravity_m_s2);
  solver.finish();

  Section dataset = root.child("dataset");
  dataset.read("episodes", c.episodes);
  dataset.read("steps", c.generator.steps);
  dataset.read_enum("force_process", c.generator.process, kProcess);
  dataset.read("walk_step_n", c.generator.walk_step_n);
  dataset.read("max_force_n", c.generator.max_force_n);
  dataset.read("max_redraws", c.generator.max_redraws);
  dataset.read("train_fraction", c.train_fraction);
  dataset.read("validation_fraction", c.validation_fraction);
  dataset.finish();

  Section kt = root.child("kt");
  kt.read("sequence_length", c.kt.sequence_length);
  kt.read("embedding_dim", c.kt.embedding_dim);
  kt.read("layers", c.kt.layer_count);
  kt.read("heads", c.kt.head_count);
  kt.read("dropout_rate", c.kt.dropout_rate);
  kt.read("window_stride", c.window_stride);
  kt.finish();

  Section ffnn = root.child("ffnn");
  ffnn.read("hidden_units", c.ffnn_hidden);
  ffnn.finish();

  Section training = root.child("training");
  read_training(training.child("kt"), c.kt_training);
  read_training(training.child("ffnn"), c.ffnn_training);
  training.finish();

  Section paths = root.child("paths");
  std::string checkpoint_dir;
  paths.read("checkpoint_dir", checkpoint_dir);
  paths.finish();
  c.checkpoint_dir = checkpoint_dir;
  c.kt_training.checkpoint_dir = c.ffnn_training.checkpoint_dir = c.checkpoint_dir;
  c.kt_training.seed = c.ffnn_training.seed = c.seed;

  root.finish();
  c.validate();
  return c;
}

ToolkitConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ToolkitConfig& c) {
  const auto& g = c.sim.geometry;
  const auto& m = c.sim.material;
  const auto& s = c.sim.solver;
  return {
      {"seed", c.seed},
      {"limb",
       {{"length_m", g.length_m},
        {"base_radius_m", g.base_radius_m},
        {"tip_radius_m", g.tip_radius_m},
        {"tendon_offset_base_m", g.tendon_offset_base_m},
        {"tendon_offset_tip_m", g.tendon_offset_tip_m},
        {"tendon_angles_rad", g.tendon_angles_rad},
        {"nodes", g.node_count}}},
      {"material",
       {{"youngs_modulus_pa", m.youngs_modulus_pa},
        {"shear_modulus_pa", m.shear_modulus_pa},
        {"density_kg_m3", m.mass_density_kg_m3}}},
      {"solver",
       {{"tolerance_m", s.tolerance_m},
        {"max_iterations", s.max_iterations},
        {"relaxation", s.relaxation},
        {"acceleration_depth", s.acceleration_depth},
        {"tendon_routing", enum_name(s.routing, kRouting)},
        {"axial_law", enum_name(s.axial_law, kAxial)},
        {"distributed_weight", s.distributed_weight},
        {"water_density_kg_m3", s.water_density_kg_m3},
        {"gravity_m_s2", s.gravity_m_s2}}},
      {"dataset",
       {{"episodes", c.episodes},
        {"steps", c.generator.steps},
        {"force_process", enum_name(c.generator.process, kProcess)},
        {"walk_step_n", c.generator.walk_step_n},
        {"max_force_n", c.generator.max_force_n},
        {"max_redraws", c.generator.max_redraws},
        {"train_fraction", c.train_fraction},
        {"validation_fraction", c.validation_fraction}}},
      {"kt",
       {{"sequence_length", c.kt.sequence_length},
        {"embedding_dim", c.kt.embedding_dim},
        {"layers", c.kt.layer_count},
        {"heads", c.kt.head_count},
        {"dropout_rate", c.kt.dropout_rate},
        {"window_stride", c.window_stride}}},
      {"ffnn", {{"hidden_units", c.ffnn_hidden}}},
      {"training", {{"kt", training_json(c.kt_training)}, {"ffnn", training_json(c.ffnn_training)}}},
      {"paths", {{"checkpoint_dir", c.checkpoint_dir.string()}}},
  };
}

std::string config_hash(const ToolkitConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(num::hash_name(config_to_json(c).dump())));
  return buf;
}

Partition partition_episodes(const ToolkitConfig& c, const std::vector<data::Episode>& episodes) {
  num::Rng rng = num::Rng(c.seed).derive("split");
  data::Split outer = data::split(episodes, c.train_fraction, rng);
  Partition p;
  p.test = std::move(outer.test);
  if (outer.train.size() >= 2) {
    data::Split inner = data::split(outer.train, 1.0 - c.validation_fraction, rng);
    p.fit = std::move(inner.train);
    p.validation = std::move(inner.test);
  } else {
    p.fit = outer.train;
    p.validation = std::move(outer.train);
  }
  return p;
}

}  // namespace kt::cli
