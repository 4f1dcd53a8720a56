#include <array>
#include <cmath>
#include <numbers>

#include "fluvinv/dual.hpp"
#include "fluvinv/generator.hpp"
#include "fluvinv/ops.hpp"

namespace fluvinv {

namespace {

constexpr int P = ProceduralGenerator::kParamCount;
using D = Dual<P>;
// Smoothing of |y - yc| so the belt edge stays differentiable on the centerline.
constexpr double kEdgeEps2 = 0.25;

template <class T>
struct BeltCell {
  T coarse;
  T depo;
};

/// Channel-belt field at one cell. x, y are cell-center coordinates in cell
/// units, m the layer index.
template <class T>
BeltCell<T> belt_cell(const std::array<T, P>& p, double x, double y, double m, double nx, double nz) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  using PG = ProceduralGenerator;
  const T arg = (2.0 * std::numbers::pi * x) / p[PG::kWavelength] + p[PG::kPhaseShift] * m;
  const T yc = p[PG::kCenter] + p[PG::kDrift] * m + p[PG::kMeanderSin] * sin(arg) + p[PG::kMeanderCos] * cos(arg);
  const T off = y - yc;
  const T dist = sqrt(off * off + kEdgeEps2);
  const T cf = sigmoid((p[PG::kHalfWidth] - dist) / p[PG::kSharpness]);
  const T t = (m + 0.5 + p[PG::kTilt] * (x / nx - 0.5)) / nz;
  const T depo = t + p[PG::kRework] * cf * (1.0 - t) * 0.5;
  return {cf, depo};
}

/// Records the fused belt op: params [P] -> [2, nz, ny, nx].
Var belt_field(Tape& tape, Var params, const GridGeometry& g) {
  const Tensor& pv = tape.value(params);
  std::array<double, P> p{};
  for (int i = 0; i < P; ++i) p[i] = pv[i];
  const std::int64_t cells = g.cells();
  Tensor out({2, g.nz, g.ny, g.nx});
  const double nx = static_cast<double>(g.nx), nz = static_cast<double>(g.nz);
  for (std::int64_t m = 0; m < g.nz; ++m)
    for (std::int64_t iy = 0; iy < g.ny; ++iy)
      for (std::int64_t ix = 0; ix < g.nx; ++ix) {
        const auto c = belt_cell<double>(p, ix + 0.5, iy + 0.5, static_cast<double>(m), nx, nz);
        const std::int64_t i = g.index(ix, iy, m);
        out[i] = c.coarse;
        out[cells + i] = c.depo;
      }
  return tape.record("belt_field", std::move(out), {params}, [g, cells](const BackwardArgs& a) {
    if (!a.in_grad[0]) return;
    std::array<D, P> p;
    for (int i = 0; i < P; ++i) p[i] = D::variable((*a.in[0])[i], i);
    const double nx = static_cast<double>(g.nx), nz = static_cast<double>(g.nz);
    std::array<double, P> acc{};
    for (std::int64_t m = 0; m < g.nz; ++m)
      for (std::int64_t iy = 0; iy < g.ny; ++iy)
        for (std::int64_t ix = 0; ix < g.nx; ++ix) {
          const std::int64_t i = g.index(ix, iy, m);
          const double gc = a.out_grad[i], gd = a.out_grad[cells + i];
          if (gc == 0.0 && gd == 0.0) continue;
          const auto c = belt_cell<D>(p, ix + 0.5, iy + 0.5, static_cast<double>(m), nx, nz);
          for (int k = 0; k < P; ++k) acc[k] += gc * c.coarse.d[k] + gd * c.depo.d[k];
        }
    for (int k = 0; k < P; ++k) (*a.in_grad[0])[k] += acc[k];
  });
}

}  // namespace

std::pair<Tensor, Tensor> ProceduralGenerator::parameter_ranges(const GridGeometry& g) {
  const double nx = static_cast<double>(g.nx), ny = static_cast<double>(g.ny),
               nz = static_cast<double>(g.nz);
  // {low, high} per parameter, in cell units / radians.
  const std::array<std::pair<double, double>, P> r = {{
      {0.2 * ny, 0.8 * ny},                  // center
      {0.06 * ny, 0.2 * ny},                 // half-width
      {-0.12 * ny, 0.12 * ny},               // meander, sine component
      {0.6 * nx, 2.0 * nx},                  // wavelength
      {-0.12 * ny, 0.12 * ny},               // meander, cosine component
      {-0.2 * ny / nz, 0.2 * ny / nz},       // drift per layer
      {0.05 * ny, 0.12 * ny},                // core sharpness
      {-0.5, 0.5},                           // aggradation tilt
      {0.0, 0.6},                            // phase shift per layer
      {0.0, 1.0},                            // reworking blend
  }};
  Tensor lo({P}), span({P});
  for (int i = 0; i < P; ++i) {
    lo[i] = r[i].first;
    span[i] = r[i].second - r[i].first;
  }
  return {lo, span};
}

ProceduralGenerator::ProceduralGenerator(GeneratorWeights weights) : Generator(std::move(weights)) {
  const auto& g = geometry();
  if (g.nx < 8 || g.ny < 8 || g.nz < 4)
    throw DescriptorError("procedural generator: extents below 8x8x4 (got " + shape_str(g.shape()) + ")");
  if (latent_dim() < 8)
    throw DescriptorError("procedural generator: latent dimension must be at least 8");
  std::vector<std::pair<std::string, Shape>> expected = {{"latent_map", {P, latent_dim()}}};
  if (label_dim() > 0) expected.push_back({"label_map", {P, label_dim()}});
  expected.push_back({"offset", {P}});
  check_weights(expected);
}

GeneratorWeights ProceduralGenerator::default_weights(const GridGeometry& geometry, int latent_dim,
                                                      int label_dim) {
  GeneratorWeights w;
  w.arch.kind = "procedural";
  w.arch.latent_dim = latent_dim;
  w.arch.label_dim = label_dim;
  w.arch.base_channels = 0;
  w.arch.residual_blocks = 0;
  w.arch.output = geometry;
  const int d = latent_dim;
  Tensor lat({P, d});
  // One latent coordinate per parameter; the last two reuse early
  // coordinates at half strength when d < P.
  for (int i = 0; i < P; ++i) {
    if (i < d) {
      lat[i * d + i] = 1.0;
    } else {
      lat[i * d + i % d] = 0.5;
    }
  }
  w.tensors.push_back({"latent_map", lat});
  if (label_dim > 0) {
    Tensor lab({P, label_dim});
    // coarse grain, fine grain, bank erodibility, aggradation, storm rainfall
    const std::array<std::pair<int, double>, 5> links = {{
        {kSharpness, -1.0},
        {kMeanderSin, 1.0},
        {kPhaseShift, 1.0},
        {kRework, -2.0},
        {kHalfWidth, 1.0},
    }};
    for (int j = 0; j < std::min(label_dim, 5); ++j) lab[links[j].first * label_dim + j] = links[j].second;
    w.tensors.push_back({"label_map", lab});
  }
  w.tensors.push_back({"offset", Tensor({P}, 0.0)});
  return w;
}

GridVars ProceduralGenerator::forward(Tape& tape, Var z, Var labels, std::span<const Var> w) const {
  const auto& g = geometry();
  Var raw;
  if (label_dim() > 0) {
    const Var centered = ops::affine(tape, labels, 1.0, -0.5);
    raw = ops::add(tape, ops::dense(tape, w[0], z, w[2]), ops::dense(tape, w[1], centered));
  } else {
    raw = ops::dense(tape, w[0], z, w[1]);
  }
  const auto [lo, span] = parameter_ranges(g);
  const Var params = ops::add_const(tape, ops::mul_const(tape, ops::sigmoid(tape, raw), span), lo);
  const Var field = belt_field(tape, params, g);
  const Shape s = g.shape();
  return {ops::reshape(tape, ops::slice(tape, field, 0, 0, 1), s),
          ops::reshape(tape, ops::slice(tape, field, 0, 1, 2), s)};
}

std::unique_ptr<Generator> ProceduralGenerator::with_weights(GeneratorWeights weights) const {
  return std::make_unique<ProceduralGenerator>(std::move(weights));
}

std::vector<double> ProceduralGenerator::parameters(const LatentVector& z, const LabelVector& labels) const {
  Tape tape(Precision::f64);
  const auto w = bind_weights(tape, weights_, false);
  const Var zv = tape.constant(Tensor::vector(z.values));
  const auto [lo, span] = parameter_ranges(geometry());
  Var raw = ops::dense(tape, w[0], zv, w.back());
  if (label_dim() > 0) {
    const LabelVector l = labels.size() == 0 ? default_labels() : labels;
    validate_labels(l, label_dim());
    const Var lv = ops::affine(tape, tape.constant(Tensor::vector(l.values)), 1.0, -0.5);
    raw = ops::add(tape, raw, ops::dense(tape, w[1], lv));
  }
  const Var p = ops::add_const(tape, ops::mul_const(tape, ops::sigmoid(tape, raw), span), lo);
  const auto& v = tape.value(p).storage();
  return {v.begin(), v.end()};
}

}  // namespace fluvinv
