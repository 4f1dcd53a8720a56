#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fluvinv/dual.hpp"
#include "fluvinv/grid.hpp"
#include "fluvinv/tape.hpp"

namespace fluvinv {

struct Mineral {
  double rho;  // g/cm3
  double phi;  // end-member porosity
  double k;    // GPa
  double g;    // GPa
};

/// Unconsolidated sand/shale mixture saturated with water.
struct RockPhysicsParams {
  Mineral quartz{2.65, 0.27, 37.0, 44.0};
  Mineral clay{2.6, 0.14, 21.0, 7.0};
  double rho_water = 1.0;
  double k_water = 2.29;
  double phi_critical = 0.5;
  double pressure_gpa = 0.01;
  double coordination = 8.5;

  /// Throws std::invalid_argument on non-physical constants.
  void validate() const;
};

/// Every intermediate of the rock-physics chain at one coarse fraction.
template <class T>
struct RockState {
  T phi, quartz_solid, k_min, g_min, rho_min, k_hm, g_hm, k_dry, g_dry, k_sat, g_sat, rho, vp;
};

/// Saturated bulk modulus from Gassmann's relation.
template <class T>
T gassmann_k_sat(const T& k_dry, const T& k_min, double k_fluid, const T& phi) {
  const T a = 1.0 - k_dry / k_min;
  return k_dry + a * a / (phi / k_fluid + (1.0 - phi) / k_min - k_dry / (k_min * k_min));
}

/// Coarse fraction f (bulk volume fraction of sand) to elastic properties.
/// Works for double and Dual<N>.
template <class T>
RockState<T> rock_physics_chain(const T& f, const RockPhysicsParams& p) {
  using std::pow;
  using std::sqrt;
  constexpr double pi = 3.14159265358979323846;
  RockState<T> s;
  // Porosity mixes linearly between the end members; clamp away from the
  // Gassmann 0/0 limit and from the critical porosity.
  s.phi = f * p.quartz.phi + (1.0 - f) * p.clay.phi;
  if (value_of(s.phi) < 1e-6) s.phi = T(1e-6);
  if (value_of(s.phi) > p.phi_critical - 1e-6) s.phi = T(p.phi_critical - 1e-6);
  // Solid volume of sand is f * (1 - phi_sand); the rest of the solid is clay.
  s.quartz_solid = f * (1.0 - p.quartz.phi) / (1.0 - s.phi);
  const T q = s.quartz_solid;
  const T c = 1.0 - q;
  // Voigt-Reuss-Hill mineral moduli.
  s.k_min = 0.5 * (q * p.quartz.k + c * p.clay.k + 1.0 / (q / p.quartz.k + c / p.clay.k));
  s.g_min = 0.5 * (q * p.quartz.g + c * p.clay.g + 1.0 / (q / p.quartz.g + c / p.clay.g));
  s.rho_min = q * p.quartz.rho + c * p.clay.rho;
  // Hertz-Mindlin contact moduli at critical porosity (Mavko et al.).
  const T nu = (3.0 * s.k_min - 2.0 * s.g_min) / (2.0 * (3.0 * s.k_min + s.g_min));
  const double n2 = p.coordination * p.coordination;
  const double pc2 = (1.0 - p.phi_critical) * (1.0 - p.phi_critical);
  const T one_nu2 = (1.0 - nu) * (1.0 - nu);
  s.k_hm = pow(n2 * pc2 * s.g_min * s.g_min * p.pressure_gpa / (18.0 * pi * pi * one_nu2), 1.0 / 3.0);
  s.g_hm = (5.0 - 4.0 * nu) / (5.0 * (2.0 - nu)) *
           pow(3.0 * n2 * pc2 * s.g_min * s.g_min * p.pressure_gpa / (2.0 * pi * pi * one_nu2), 1.0 / 3.0);
  // Modified Hashin-Shtrikman lower bound between the contact pack and the mineral.
  const T r = s.phi / p.phi_critical;
  const T g43 = 4.0 / 3.0 * s.g_hm;
  s.k_dry = 1.0 / (r / (s.k_hm + g43) + (1.0 - r) / (s.k_min + g43)) - g43;
  const T zeta = s.g_hm / 6.0 * (9.0 * s.k_hm + 8.0 * s.g_hm) / (s.k_hm + 2.0 * s.g_hm);
  s.g_dry = 1.0 / (r / (s.g_hm + zeta) + (1.0 - r) / (s.g_min + zeta)) - zeta;
  s.k_sat = gassmann_k_sat(s.k_dry, s.k_min, p.k_water, s.phi);
  s.g_sat = s.g_dry;
  s.rho = (1.0 - s.phi) * s.rho_min + s.phi * p.rho_water;
  // GPa / (g/cm3) -> (km/s)^2
  s.vp = 1000.0 * sqrt((s.k_sat + 4.0 / 3.0 * s.g_sat) / s.rho);
  return s;
}

struct ElasticPoint {
  double rho, vp;
};

/// Throws std::domain_error when f is outside [0, 1] beyond 1e-9.
ElasticPoint rock_physics(double f, const RockPhysicsParams& params);
/// Value and derivative of the impedance rho * Vp with respect to f.
std::pair<double, double> impedance_and_slope(double f, const RockPhysicsParams& params);

/// Structureless over/underburden of constant coarse fraction.
struct BurdenConfig {
  double total_m = 18.0;   // split evenly above and below
  double fraction = 0.0;   // coarse fraction of the burden
  std::int64_t cells_each_side(double dz) const;
};

struct ElasticCube {
  Tensor rho;  // [nz + 2b, ny, nx]
  Tensor vp;
};

ElasticCube elastic_cube(const Tensor& coarse, double dz, const RockPhysicsParams& params,
                         const BurdenConfig& burden);

/// Normal-incidence reflectivity along axis 0 of an impedance cube.
Tensor reflectivity(const Tensor& impedance);

struct PsfConfig {
  double peak_hz = 60.0;
  double incident_deg = 0.0;
  double illumination_deg = 45.0;
  double v_avg = 0.0;  // m/s; 0 means: take it from the elastic cube
  /// Vertical half extent in cells; 0 picks the extent where the wavelet
  /// envelope falls below exp(-20).
  std::int64_t half_z = 0;
  /// Lateral half extent in cells; 0 picks ceil(3 sigma / dx).
  std::int64_t half_xy = 0;

  void validate() const;
};

/// Separable point-spread function: vertical Ricker times lateral Gaussian.
struct Psf {
  Tensor vertical;  // [kz]
  Tensor lateral;   // [ky, kx], sums to 1
  double v_avg = 0.0;
  double peak_wavenumber = 0.0;  // cycles per meter
  double sigma_xy = 0.0;         // meters, 0 for a delta
  std::vector<std::string> warnings;

  /// Full [kz, ky, kx] kernel (outer product).
  Tensor kernel() const;
};

double ricker_depth(double zeta, double peak_wavenumber);
Psf build_psf(const PsfConfig& config, double dz, double dx, double dy);

struct SeismicConfig {
  RockPhysicsParams rock;
  BurdenConfig burden;
  PsfConfig psf;
};

struct SeismicCube {
  GridGeometry geometry;  // lateral extents and cell sizes of the source grid
  Tensor amplitudes;      // [nz + 2b - 1, ny, nx]
  Psf psf;                // kernel used to make this cube, reused by inversion
};

/// Mean Vp over the padded elastic cube.
double average_velocity(const Tensor& coarse, double dz, const RockPhysicsParams& params,
                        const BurdenConfig& burden);

namespace ops {
/// coarse [nz, ny, nx] -> impedance of the padded column stack.
Var impedance(Tape& t, Var coarse, double dz, const RockPhysicsParams& params, const BurdenConfig& burden);
/// (I[i+1] - I[i]) / (I[i+1] + I[i]) along axis 0.
Var reflectivity(Tape& t, Var impedance);
/// Separable convolution of a [Z, Y, X] cube with the PSF ("same" zero padding).
Var apply_psf(Tape& t, Var cube, const Psf& psf);
}  // namespace ops

/// Differentiable forward model: coarse fraction -> seismic amplitudes.
Var seismic_forward(Tape& t, Var coarse, const GridGeometry& geometry, const SeismicConfig& config,
                    const Psf& psf);

/// Gradient-free forward model; v_avg comes from the grid unless configured.
SeismicCube seismic_forward(const ModelGrid& grid, const SeismicConfig& config);

}  // namespace fluvinv
