#include "fluvinv/geophysics.hpp"

#include <limits>
#include <numbers>
#include <stdexcept>

#include "fluvinv/ops.hpp"

namespace fluvinv {

namespace {

constexpr double kFractionTolerance = 1e-9;

double checked_fraction(double f) {
  if (!(f >= -kFractionTolerance && f <= 1.0 + kFractionTolerance))
    throw std::domain_error("rock_physics: coarse fraction " + std::to_string(f) + " outside [0, 1]");
  return std::clamp(f, 0.0, 1.0);
}

}  // namespace

void RockPhysicsParams::validate() const {
  for (const Mineral* m : {&quartz, &clay})
    if (!(m->rho > 0 && m->k > 0 && m->g > 0 && m->phi > 0 && m->phi < phi_critical))
      throw std::invalid_argument("rock physics: mineral constants must be positive with porosity below critical");
  if (!(rho_water > 0 && k_water > 0 && phi_critical < 1.0 && pressure_gpa > 0 && coordination > 0))
    throw std::invalid_argument("rock physics: fluid, pressure and coordination must be positive");
}

ElasticPoint rock_physics(double f, const RockPhysicsParams& params) {
  const auto s = rock_physics_chain<double>(checked_fraction(f), params);
  return {s.rho, s.vp};
}

std::pair<double, double> impedance_and_slope(double f, const RockPhysicsParams& params) {
  const auto s = rock_physics_chain(Dual<1>::variable(checked_fraction(f), 0), params);
  const Dual<1> imp = s.rho * s.vp;
  return {imp.v, imp.d[0]};
}

std::int64_t BurdenConfig::cells_each_side(double dz) const {
  if (!(total_m >= 0.0) || !(dz > 0.0)) throw std::invalid_argument("burden: thickness and dz must be >= 0");
  return static_cast<std::int64_t>(std::llround(0.5 * total_m / dz));
}

namespace {

Tensor padded_fraction(const Tensor& coarse, double dz, const BurdenConfig& burden) {
  if (coarse.rank() != 3) throw ShapeError("elastic: expected [nz,ny,nx], got " + shape_str(coarse.shape()));
  const std::int64_t b = burden.cells_each_side(dz);
  const std::int64_t nz = coarse.extent(0), layer = coarse.extent(1) * coarse.extent(2);
  Tensor out({nz + 2 * b, coarse.extent(1), coarse.extent(2)}, burden.fraction);
  std::copy(coarse.data().begin(), coarse.data().end(), out.data().begin() + b * layer);
  (void)nz;
  return out;
}

}  // namespace

ElasticCube elastic_cube(const Tensor& coarse, double dz, const RockPhysicsParams& params,
                         const BurdenConfig& burden) {
  const Tensor f = padded_fraction(coarse, dz, burden);
  ElasticCube e{Tensor(f.shape()), Tensor(f.shape())};
  for (std::size_t i = 0; i < f.size(); ++i) {
    const ElasticPoint p = rock_physics(f[i], params);
    e.rho[i] = p.rho;
    e.vp[i] = p.vp;
  }
  return e;
}

Tensor reflectivity(const Tensor& imp) {
  const std::int64_t n = imp.extent(0);
  if (n < 2) throw ShapeError("reflectivity: need at least two samples along z");
  const std::int64_t layer = static_cast<std::int64_t>(imp.size()) / n;
  Shape s = imp.shape();
  s[0] = n - 1;
  Tensor r(s);
  for (std::int64_t i = 0; i + 1 < n; ++i)
    for (std::int64_t j = 0; j < layer; ++j) {
      const double a = imp[i * layer + j], b = imp[(i + 1) * layer + j];
      if (!(a + b > 0.0)) throw std::domain_error("reflectivity: non-positive impedance sum");
      r[i * layer + j] = (b - a) / (b + a);
    }
  return r;
}

double average_velocity(const Tensor& coarse, double dz, const RockPhysicsParams& params,
                        const BurdenConfig& burden) {
  const ElasticCube e = elastic_cube(coarse, dz, params, burden);
  return sum(e.vp.data()) / static_cast<double>(e.vp.size());
}

void PsfConfig::validate() const {
  if (!(peak_hz > 0.0)) throw std::invalid_argument("psf: peak frequency must be > 0");
  if (!(illumination_deg > 0.0 && illumination_deg <= 90.0))
    throw std::invalid_argument("psf: illumination angle must be in (0, 90] degrees");
  if (v_avg < 0.0 || half_z < 0 || half_xy < 0)
    throw std::invalid_argument("psf: velocity and extents must be non-negative");
}

double ricker_depth(double zeta, double k) {
  const double a = std::numbers::pi * std::numbers::pi * k * k * zeta * zeta;
  return (1.0 - 2.0 * a) * std::exp(-a);
}

Psf build_psf(const PsfConfig& config, double dz, double dx, double dy) {
  config.validate();
  if (!(config.v_avg > 0.0)) throw std::invalid_argument("psf: average velocity not set");
  Psf psf;
  psf.v_avg = config.v_avg;
  psf.peak_wavenumber = 2.0 * config.peak_hz / config.v_avg;
  const double k = psf.peak_wavenumber;
  std::int64_t hz = config.half_z;
  if (hz == 0) {
    // pi^2 k^2 zeta^2 = 20 bounds the envelope at exp(-20).
    const double zeta_max = std::sqrt(20.0) / (std::numbers::pi * k);
    hz = static_cast<std::int64_t>(std::ceil(zeta_max / dz));
  }
  psf.vertical = Tensor({2 * hz + 1});
  for (std::int64_t i = -hz; i <= hz; ++i) psf.vertical[i + hz] = ricker_depth(i * dz, k);

  if (config.illumination_deg >= 90.0) {
    psf.sigma_xy = 0.0;
    psf.lateral = Tensor({1, 1}, 1.0);
    return psf;
  }
  const double theta = config.illumination_deg * std::numbers::pi / 180.0;
  psf.sigma_xy = config.v_avg / (4.0 * config.peak_hz * std::sin(theta));
  if (psf.sigma_xy < dx / 4.0 || psf.sigma_xy < dy / 4.0)
    psf.warnings.push_back("psf: lateral sigma " + std::to_string(psf.sigma_xy) +
                           " m is below a quarter cell; lateral blur is unresolved");
  std::int64_t hxy = config.half_xy;
  if (hxy == 0) hxy = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * psf.sigma_xy / std::min(dx, dy))));
  psf.lateral = Tensor({2 * hxy + 1, 2 * hxy + 1});
  double total = 0.0;
  for (std::int64_t iy = -hxy; iy <= hxy; ++iy)
    for (std::int64_t ix = -hxy; ix <= hxy; ++ix) {
      const double r2 = (ix * dx) * (ix * dx) + (iy * dy) * (iy * dy);
      const double v = std::exp(-r2 / (2.0 * psf.sigma_xy * psf.sigma_xy));
      psf.lateral[(iy + hxy) * (2 * hxy + 1) + (ix + hxy)] = v;
      total += v;
    }
  for (double& v : psf.lateral.storage()) v /= total;
  return psf;
}

Tensor Psf::kernel() const {
  const std::int64_t kz = vertical.extent(0), ky = lateral.extent(0), kx = lateral.extent(1);
  Tensor k({kz, ky, kx});
  for (std::int64_t a = 0; a < kz; ++a)
    for (std::int64_t j = 0; j < ky * kx; ++j) k[a * ky * kx + j] = vertical[a] * lateral[j];
  return k;
}

namespace ops {

Var impedance(Tape& t, Var coarse, double dz, const RockPhysicsParams& params, const BurdenConfig& burden) {
  const Tensor& c = t.value(coarse);
  if (c.rank() != 3) throw ShapeError("impedance: expected [nz,ny,nx], got " + shape_str(c.shape()));
  const std::int64_t b = burden.cells_each_side(dz);
  const Var padded = b > 0 ? pad(t, coarse, 0, b, b, burden.fraction) : coarse;
  // Burden cells repeat one value; reuse the previous evaluation.
  return map(t, padded, "impedance",
             [params, last_f = std::numeric_limits<double>::quiet_NaN(), last = std::pair<double, double>{}](
                 double f) mutable {
               if (!(f == last_f)) {
                 last = impedance_and_slope(f, params);
                 last_f = f;
               }
               return last;
             });
}

Var reflectivity(Tape& t, Var imp) {
  const std::int64_t n = t.value(imp).extent(0);
  if (n < 2) throw ShapeError("reflectivity: need at least two samples along z");
  const Var upper = slice(t, imp, 0, 0, n - 1);
  const Var lower = slice(t, imp, 0, 1, n);
  return div(t, sub(t, lower, upper), add(t, lower, upper));
}

Var apply_psf(Tape& t, Var cube, const Psf& psf) {
  const Shape s = t.value(cube).shape();
  if (s.size() != 3) throw ShapeError("apply_psf: expected [Z,Y,X], got " + shape_str(s));
  Var x = reshape(t, cube, {1, s[0], s[1], s[2]});
  const std::int64_t kz = psf.vertical.extent(0);
  x = conv3d(t, x, t.constant(psf.vertical.reshaped({1, 1, kz, 1, 1})));
  const std::int64_t ky = psf.lateral.extent(0), kx = psf.lateral.extent(1);
  if (ky * kx > 1) x = conv3d(t, x, t.constant(psf.lateral.reshaped({1, 1, 1, ky, kx})));
  return reshape(t, x, s);
}

}  // namespace ops

Var seismic_forward(Tape& t, Var coarse, const GridGeometry& geometry, const SeismicConfig& config,
                    const Psf& psf) {
  const Var imp = ops::impedance(t, coarse, geometry.dz, config.rock, config.burden);
  return ops::apply_psf(t, ops::reflectivity(t, imp), psf);
}

SeismicCube seismic_forward(const ModelGrid& grid, const SeismicConfig& config) {
  config.rock.validate();
  PsfConfig pc = config.psf;
  if (pc.v_avg == 0.0)
    pc.v_avg = average_velocity(grid.coarse_fraction, grid.geometry.dz, config.rock, config.burden);
  SeismicCube cube;
  cube.geometry = grid.geometry;
  cube.psf = build_psf(pc, grid.geometry.dz, grid.geometry.dx, grid.geometry.dy);
  Tape tape(Precision::f64);
  const Var out = seismic_forward(tape, tape.constant(grid.coarse_fraction), grid.geometry, config, cube.psf);
  cube.amplitudes = tape.value(out);
  return cube;
}

}  // namespace fluvinv
