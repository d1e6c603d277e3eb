#pragma once

#include <Eigen/Dense>

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace kt::cosserat {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kTendonCount = 4;

// Frustum-shaped limb. The undeformed centerline runs along the inertial x-axis;
// the base cross-section frame is d1 = +y, d2 = +z, d3 = +x.
struct LimbGeometry {
  double length_m = 0.600;
  double base_radius_m = 0.030;
  double tip_radius_m = 0.010;
  double tendon_offset_base_m = 0.020;
  double tendon_offset_tip_m = 0.00325;
  std::array<double, kTendonCount> tendon_angles_rad{0.0, 1.5707963267948966, 3.141592653589793,
                                                     4.71238898038469};
  int node_count = 101;

  double radius_at(double s) const;
  double area_at(double s) const;
  // I1 = I2
  double bending_inertia_at(double s) const;
  // I3
  double polar_inertia_at(double s) const;
  double node_spacing() const { return length_m / (node_count - 1); }

  // Throws std::invalid_argument on violated invariants.
  void validate() const;
};

struct MaterialProperties {
  double youngs_modulus_pa = 70'000.0;
  double shear_modulus_pa = 70'000.0 / 3.0;
  double mass_density_kg_m3 = 1070.0;

  void validate() const;
};

struct TendonForces {
  std::array<double, kTendonCount> tension_n{};

  static constexpr double kMax = 10.0;

  double& operator[](std::size_t i) { return tension_n[i]; }
  double operator[](std::size_t i) const { return tension_n[i]; }
  bool operator==(const TendonForces&) const = default;
  bool within_bounds(double max_n = kMax) const;
};

// Force and moment resultant, inertial frame.
struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 moment = Vec3::Zero();
};
using TipLoads = Wrench;

// How tendon tension reaches the limb.
//   Embedded: the tendon runs inside the body along the tapered offset and ends at the
//             distal disc, so its compression is carried section by section.
//   Chord:    the tendon is a free straight chord from its base anchor to the disc and
//             acts only through concentrated tip loads.
enum class TendonRouting { Embedded, Chord };

// Axial constitutive law relating n3 to the longitudinal strain.
//   Linear:      E A eps = n3; fails once eps <= -1.
//   Logarithmic: E A ln(1 + eps) = n3; agrees to first order and keeps eps > -1.
enum class AxialLaw { Logarithmic, Linear };

// Configuration- and task-space fields sampled on the arc nodes.
struct RodConfiguration {
  std::vector<double> arc;
  std::vector<double> axial_strain;
  std::vector<Vec3> curvature;  // local frame
  std::vector<Vec3> position;
  std::vector<Mat3> orientation;  // columns d1, d2, d3 in inertial coordinates
  std::vector<Vec3> internal_force;
  std::vector<Vec3> internal_moment;
  int iterations = 0;

  std::size_t size() const { return arc.size(); }
  const Vec3& tip() const { return position.back(); }
  const Mat3& tip_orientation() const { return orientation.back(); }
  double max_orthonormality_error() const;
};

struct SolverOptions {
  double tolerance_m = 1e-6;
  int max_iterations = 100;
  double relaxation = 0.5;
  // Anderson mixing depth; 0 gives plain (relaxed) Picard iteration.
  int acceleration_depth = 5;
  TendonRouting routing = TendonRouting::Embedded;
  AxialLaw axial_law = AxialLaw::Logarithmic;
  bool distributed_weight = false;
  double water_density_kg_m3 = 1000.0;
  double gravity_m_s2 = 9.81;
};

class SolverError : public std::runtime_error {
 public:
  enum class Kind { Convergence, MaterialLimit, DegenerateGeometry };

  SolverError(Kind kind, const std::string& what, RodConfiguration last = {}, double residual = 0.0)
      : std::runtime_error(what), kind_(kind), last_(std::move(last)), residual_(residual) {}

  Kind kind() const { return kind_; }
  const RodConfiguration& last_iterate() const { return last_; }
  double residual() const { return residual_; }

 private:
  Kind kind_;
  RodConfiguration last_;
  double residual_;
};

// Orientation of the clamped base cross-section.
Mat3 base_frame();

Mat3 skew(const Vec3& w);
// exp([w]x) via Rodrigues.
Mat3 exp_so3(const Vec3& w);
// (1/|w|) integral_0^1 exp(t[w]x) dt, used for exact segment chords under constant strain.
Mat3 exp_so3_integral(const Vec3& w);

RodConfiguration straight_configuration(const LimbGeometry& geometry);

// Reconstructs r and R from strain and curvature samples (stage two of the scheme).
RodConfiguration integrate_frames(const LimbGeometry& geometry, std::vector<double> axial_strain,
                                  std::vector<Vec3> curvature);

TipLoads tendon_tip_loads(const LimbGeometry& geometry, const RodConfiguration& configuration,
                          const TendonForces& forces);

// Internal resultant at node `node` contributed by embedded tendons, i.e. the negated
// tension-weighted tendon tangent and its moment about the centerline.
Wrench embedded_tendon_loads(const LimbGeometry& geometry, const RodConfiguration& configuration,
                             const TendonForces& forces, std::size_t node);

// One load evaluation, constitutive update and reconstruction starting from `configuration`.
RodConfiguration two_stage_update(const LimbGeometry& geometry, const MaterialProperties& material,
                                  const TendonForces& forces, const RodConfiguration& configuration,
                                  const SolverOptions& options = {});

RodConfiguration solve_statics(const LimbGeometry& geometry, const MaterialProperties& material,
                               const TendonForces& forces, const SolverOptions& options = {});

}  // namespace kt::cosserat
