#include "kt/cosserat.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace kt::cosserat {

double LimbGeometry::radius_at(double s) const {
  return base_radius_m + (tip_radius_m - base_radius_m) * s / length_m;
}

double LimbGeometry::area_at(double s) const {
  const double rho = radius_at(s);
  return std::numbers::pi * rho * rho;
}

double LimbGeometry::bending_inertia_at(double s) const {
  const double rho = radius_at(s);
  return std::numbers::pi * rho * rho * rho * rho / 4.0;
}

double LimbGeometry::polar_inertia_at(double s) const {
  return 2.0 * bending_inertia_at(s);
}

void LimbGeometry::validate() const {
  if (!(length_m > 0.0)) throw std::invalid_argument("limb length must be positive");
  if (!(base_radius_m > 0.0) || !(tip_radius_m > 0.0))
    throw std::invalid_argument("limb radii must be positive");
  if (tip_radius_m > base_radius_m)
    throw std::invalid_argument("tip radius must not exceed base radius");
  if (!(tendon_offset_base_m > 0.0) || !(tendon_offset_tip_m > 0.0))
    throw std::invalid_argument("tendon offsets must be positive");
  if (tendon_offset_base_m >= base_radius_m || tendon_offset_tip_m >= tip_radius_m)
    throw std::invalid_argument("tendon offsets must lie inside the cross-section");
  if (node_count < 2) throw std::invalid_argument("node count must be at least 2");
}

void MaterialProperties::validate() const {
  if (!(youngs_modulus_pa > 0.0) || !(shear_modulus_pa > 0.0) || !(mass_density_kg_m3 > 0.0))
    throw std::invalid_argument("material constants must be positive");
}

bool TendonForces::within_bounds(double max_n) const {
  for (double t : tension_n)
    if (!(t >= 0.0 && t <= max_n)) return false;
  return true;
}

double RodConfiguration::max_orthonormality_error() const {
  double worst = 0.0;
  for (const auto& R : orientation)
    worst = std::max(worst, (R.transpose() * R - Mat3::Identity()).norm());
  return worst;
}

Mat3 base_frame() {
  Mat3 P;
  P.col(0) = Vec3::UnitY();
  P.col(1) = Vec3::UnitZ();
  P.col(2) = Vec3::UnitX();
  return P;
}

Mat3 skew(const Vec3& w) {
  Mat3 K;
  K << 0.0, -w.z(), w.y(),  //
      w.z(), 0.0, -w.x(),   //
      -w.y(), w.x(), 0.0;
  return K;
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 K = skew(w);
  double a, b;
  if (theta < 1e-6) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Mat3::Identity() + a * K + b * K * K;
}

Mat3 exp_so3_integral(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 K = skew(w);
  double b, c;
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
    c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  } else {
    b = (1.0 - std::cos(theta)) / (theta * theta);
    c = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  return Mat3::Identity() + b * K + c * K * K;
}

namespace {

std::vector<double> arc_nodes(const LimbGeometry& geometry) {
  std::vector<double> arc(geometry.node_count);
  const double h = geometry.node_spacing();
  for (int k = 0; k < geometry.node_count; ++k) arc[k] = h * k;
  arc.back() = geometry.length_m;
  return arc;
}

struct SectionLoads {
  std::vector<Vec3> force;
  std::vector<Vec3> moment;
};

// Integrates the balance laws from the tip toward the base for a concentrated tip
// wrench plus the optional net weight of the body.
SectionLoads balance_loads(const LimbGeometry& geometry, const MaterialProperties& material,
                           const SolverOptions& options, const RodConfiguration& config,
                           const TipLoads& tip) {
  const std::size_t count = config.size();
  SectionLoads out{std::vector<Vec3>(count), std::vector<Vec3>(count)};
  const Vec3& tip_position = config.tip();

  if (!options.distributed_weight) {
    for (std::size_t k = 0; k < count; ++k) {
      out.force[k] = tip.force;
      out.moment[k] = tip.moment + (tip_position - config.position[k]).cross(tip.force);
    }
    return out;
  }

  // Net weight minus buoyancy per unit length acts along -z.
  const double specific = (material.mass_density_kg_m3 - options.water_density_kg_m3) *
                          options.gravity_m_s2;
  std::vector<Vec3> line_load(count);
  for (std::size_t k = 0; k < count; ++k)
    line_load[k] = Vec3(0.0, 0.0, -specific * geometry.area_at(config.arc[k]));

  out.force[count - 1] = tip.force;
  out.moment[count - 1] = tip.moment;
  for (std::size_t k = count - 1; k-- > 0;) {
    const double h = config.arc[k + 1] - config.arc[k];
    // n' = -f and m' = -r' x n, trapezoidal from s_{k+1} down to s_k.
    out.force[k] = out.force[k + 1] + 0.5 * h * (line_load[k] + line_load[k + 1]);
    const Vec3 dr = config.position[k + 1] - config.position[k];
    out.moment[k] = out.moment[k + 1] + dr.cross(0.5 * (out.force[k] + out.force[k + 1]));
  }
  return out;
}

SectionLoads section_loads(const LimbGeometry& geometry, const MaterialProperties& material,
                           const SolverOptions& options, const RodConfiguration& config,
                           const TendonForces& forces) {
  if (options.routing == TendonRouting::Chord)
    return balance_loads(geometry, material, options, config,
                         tendon_tip_loads(geometry, config, forces));

  SectionLoads out = balance_loads(geometry, material, options, config, TipLoads{});
  for (std::size_t k = 0; k < config.size(); ++k) {
    const Wrench tendon = embedded_tendon_loads(geometry, config, forces, k);
    out.force[k] += tendon.force;
    out.moment[k] += tendon.moment;
  }
  return out;
}

}  // namespace

RodConfiguration straight_configuration(const LimbGeometry& geometry) {
  const auto n = static_cast<std::size_t>(geometry.node_count);
  return integrate_frames(geometry, std::vector<double>(n, 0.0), std::vector<Vec3>(n, Vec3::Zero()));
}

RodConfiguration integrate_frames(const LimbGeometry& geometry, std::vector<double> axial_strain,
                                  std::vector<Vec3> curvature) {
  const auto n = static_cast<std::size_t>(geometry.node_count);
  if (axial_strain.size() != n || curvature.size() != n)
    throw std::invalid_argument("strain samples must match the node count");

  RodConfiguration config;
  config.arc = arc_nodes(geometry);
  config.axial_strain = std::move(axial_strain);
  config.curvature = std::move(curvature);
  config.position.resize(n);
  config.orientation.resize(n);
  config.internal_force.assign(n, Vec3::Zero());
  config.internal_moment.assign(n, Vec3::Zero());

  config.position[0] = Vec3::Zero();
  config.orientation[0] = base_frame();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double h = config.arc[k + 1] - config.arc[k];
    const double stretch = 1.0 + 0.5 * (config.axial_strain[k] + config.axial_strain[k + 1]);
    const Vec3 kappa = 0.5 * (config.curvature[k] + config.curvature[k + 1]);
    const Vec3 rotation = stretch * h * kappa;
    const Mat3& R = config.orientation[k];
    config.position[k + 1] =
        config.position[k] + stretch * h * (R * (exp_so3_integral(rotation) * Vec3::UnitZ()));
    config.orientation[k + 1] = R * exp_so3(rotation);
  }
  return config;
}

TipLoads tendon_tip_loads(const LimbGeometry& geometry, const RodConfiguration& configuration,
                          const TendonForces& forces) {
  TipLoads loads;
  const Vec3& tip = configuration.tip();
  const Mat3& tip_frame = configuration.tip_orientation();
  const Mat3 base = base_frame();
  for (int i = 0; i < kTendonCount; ++i) {
    const double theta = geometry.tendon_angles_rad[i];
    const Vec3 radial(std::cos(theta), std::sin(theta), 0.0);
    const Vec3 tip_anchor = tip + tip_frame * (geometry.tendon_offset_tip_m * radial);
    const Vec3 base_anchor = base * (geometry.tendon_offset_base_m * radial);
    const Vec3 chord = base_anchor - tip_anchor;
    const double length = chord.norm();
    if (length < 1e-9) {
      std::ostringstream msg;
      msg << "tendon " << i << " anchors coincide";
      throw SolverError(SolverError::Kind::DegenerateGeometry, msg.str(), configuration);
    }
    const Vec3 pull = forces[i] * (chord / length);
    loads.force += pull;
    loads.moment += (tip_anchor - tip).cross(pull);
  }
  return loads;
}

namespace {

// Packs (strain, curvature) samples into one vector for the accelerated fixed point.
Eigen::VectorXd pack(const std::vector<double>& strain, const std::vector<Vec3>& curvature) {
  const std::size_t n = strain.size();
  Eigen::VectorXd x(4 * n);
  for (std::size_t k = 0; k < n; ++k) {
    x[4 * k] = strain[k];
    x.segment<3>(4 * k + 1) = curvature[k];
  }
  return x;
}

void unpack(const Eigen::VectorXd& x, std::vector<double>& strain, std::vector<Vec3>& curvature) {
  const std::size_t n = strain.size();
  for (std::size_t k = 0; k < n; ++k) {
    strain[k] = x[4 * k];
    curvature[k] = x.segment<3>(4 * k + 1);
  }
}

// Type-II Anderson mixing over the last few Picard evaluations.
class AndersonMixer {
 public:
  explicit AndersonMixer(int depth) : depth_(depth) {}

  void reset() {
    dx_.clear();
    df_.clear();
    has_last_ = false;
  }

  Eigen::VectorXd next(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    const Eigen::VectorXd f = g - x;
    if (has_last_) {
      df_.push_back(f - last_f_);
      dx_.push_back(g - last_g_);
      if (static_cast<int>(df_.size()) > depth_) {
        df_.erase(df_.begin());
        dx_.erase(dx_.begin());
      }
    }
    last_f_ = f;
    last_g_ = g;
    has_last_ = true;
    if (df_.empty()) return g;

    const auto m = static_cast<Eigen::Index>(df_.size());
    Eigen::MatrixXd F(f.size(), m), G(f.size(), m);
    for (Eigen::Index j = 0; j < m; ++j) {
      F.col(j) = df_[j];
      G.col(j) = dx_[j];
    }
    const Eigen::VectorXd gamma = F.completeOrthogonalDecomposition().solve(f);
    return g - G * gamma;
  }

 private:
  int depth_;
  std::vector<Eigen::VectorXd> dx_, df_;
  Eigen::VectorXd last_f_, last_g_;
  bool has_last_ = false;
};

}  // namespace

Wrench embedded_tendon_loads(const LimbGeometry& geometry, const RodConfiguration& configuration,
                             const TendonForces& forces, std::size_t node) {
  const double s = configuration.arc[node];
  const double offset_slope =
      (geometry.tendon_offset_tip_m - geometry.tendon_offset_base_m) / geometry.length_m;
  const double offset = geometry.tendon_offset_base_m + offset_slope * s;
  const double stretch = 1.0 + configuration.axial_strain[node];
  const Vec3& kappa = configuration.curvature[node];

  Vec3 force = Vec3::Zero();
  Vec3 moment = Vec3::Zero();
  for (int i = 0; i < kTendonCount; ++i) {
    const double theta = geometry.tendon_angles_rad[i];
    const Vec3 radial(std::cos(theta), std::sin(theta), 0.0);
    const Vec3 p = offset * radial;
    // Tendon tangent in the section frame: d/ds (r + R p) expressed locally.
    const Vec3 tangent = (stretch * (Vec3::UnitZ() + kappa.cross(p)) + offset_slope * radial).normalized();
    force -= forces[i] * tangent;
    moment += forces[i] * tangent.cross(p);
  }
  const Mat3& R = configuration.orientation[node];
  return Wrench{R * force, R * moment};
}

RodConfiguration two_stage_update(const LimbGeometry& geometry, const MaterialProperties& material,
                                  const TendonForces& forces, const RodConfiguration& config,
                                  const SolverOptions& options) {
  const std::size_t n = config.size();
  std::vector<double> strain(n);
  std::vector<Vec3> curvature(n);

  // Stage one: loads from tip to base, then the constitutive update.
  const SectionLoads loads = section_loads(geometry, material, options, config, forces);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = config.arc[k];
    const double bending = material.youngs_modulus_pa * geometry.bending_inertia_at(s);
    const double torsional = material.shear_modulus_pa * geometry.polar_inertia_at(s);
    const Mat3& R = config.orientation[k];
    const Vec3 local_moment = R.transpose() * loads.moment[k];
    curvature[k] = Vec3(local_moment.x() / bending, local_moment.y() / bending, local_moment.z() / torsional);
    const double axial = R.col(2).dot(loads.force[k]) / (material.youngs_modulus_pa * geometry.area_at(s));
    strain[k] = options.axial_law == AxialLaw::Linear ? axial : std::expm1(axial);
    if (strain[k] <= -1.0) {
      std::ostringstream msg;
      msg << "axial strain " << strain[k] << " at s = " << s << " m inverts the cross-section";
      throw SolverError(SolverError::Kind::MaterialLimit, msg.str(), config);
    }
  }

  // Stage two: geometric reconstruction.
  return integrate_frames(geometry, std::move(strain), std::move(curvature));
}

RodConfiguration solve_statics(const LimbGeometry& geometry, const MaterialProperties& material,
                               const TendonForces& forces, const SolverOptions& options) {
  geometry.validate();
  material.validate();
  const auto n = static_cast<std::size_t>(geometry.node_count);

  std::vector<double> strain(n, 0.0);
  std::vector<Vec3> curvature(n, Vec3::Zero());
  RodConfiguration config = integrate_frames(geometry, strain, curvature);
  Eigen::VectorXd x = pack(strain, curvature);
  AndersonMixer mixer(options.acceleration_depth);

  double residual = std::numeric_limits<double>::infinity();
  double previous_residual = residual;
  int non_decreasing = 0;
  double weight = 1.0;

  for (int iteration = 1; iteration <= options.max_iterations; ++iteration) {
    RodConfiguration updated = two_stage_update(geometry, material, forces, config, options);
    residual = (updated.tip() - config.tip()).norm();
    if (residual < options.tolerance_m) {
      const SectionLoads final_loads = section_loads(geometry, material, options, updated, forces);
      updated.internal_force = final_loads.force;
      updated.internal_moment = final_loads.moment;
      updated.iterations = iteration;
      return updated;
    }

    non_decreasing = residual >= previous_residual ? non_decreasing + 1 : 0;
    previous_residual = residual;
    if (non_decreasing >= 2) {
      weight *= options.relaxation;
      non_decreasing = 0;
      mixer.reset();
    }

    const Eigen::VectorXd g = pack(updated.axial_strain, updated.curvature);
    const Eigen::VectorXd relaxed = x + weight * (g - x);
    x = options.acceleration_depth > 0 ? mixer.next(x, relaxed) : relaxed;
    unpack(x, strain, curvature);
    config = integrate_frames(geometry, strain, curvature);
  }

  std::ostringstream msg;
  msg << "statics did not converge in " << options.max_iterations
      << " iterations (last tip step " << residual << " m)";
  throw SolverError(SolverError::Kind::Convergence, msg.str(), config, residual);
}

}  // namespace kt::cosserat
