#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "fluvinv/metrics.hpp"
#include "fluvinv/random.hpp"

using namespace fluvinv;

namespace {

GridGeometry geom(std::int64_t nx, std::int64_t ny, std::int64_t nz) {
  GridGeometry g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  return g;
}

ModelGrid constant_grid(const GridGeometry& g, double coarse, double depo) {
  return {g, Tensor(g.shape(), coarse), Tensor(g.shape(), depo)};
}

ModelGrid random_grid(const GridGeometry& g, Rng& rng) {
  ModelGrid m = constant_grid(g, 0, 0);
  for (double& v : m.coarse_fraction.storage()) v = rng.uniform();
  for (double& v : m.depo_time.storage()) v = rng.uniform();
  return m;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Maximum deviation between input distances and embedded distances.
double stress(const std::vector<std::vector<double>>& d, const MdsResult& r) {
  double worst = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j) worst = std::max(worst, std::abs(dist(r.coords[i], r.coords[j]) - d[i][j]));
  return worst;
}

std::vector<std::vector<double>> distances(const std::vector<std::vector<double>>& pts) {
  std::vector<std::vector<double>> d(pts.size(), std::vector<double>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j) d[i][j] = dist(pts[i], pts[j]);
  return d;
}

// Linear map that refuses latents outside [-5, 5].
class CheckedLinear final : public Generator {
 public:
  explicit CheckedLinear(GeneratorWeights w) : Generator(w), inner_(std::move(w)) {}
  using Generator::forward;
  GridVars forward(Tape& tape, Var z, Var labels, std::span<const Var> vars) const override {
    for (double v : tape.value(z).data())
      if (std::abs(v) > 5.0) throw std::domain_error("latent out of range");
    return inner_.forward(tape, z, labels, vars);
  }
  std::unique_ptr<Generator> with_weights(GeneratorWeights w) const override {
    return std::make_unique<CheckedLinear>(std::move(w));
  }

 private:
  LinearGenerator inner_;
};

}  // namespace

TEST_CASE("mae: examples, naive oracle and errors") {
  const std::vector<double> y{0.2, 0.4}, yh{0.3, 0.1};
  CHECK(mae(y, y) == 0.0);
  CHECK(mae(y, yh) == doctest::Approx(0.2).epsilon(1e-15));
  Rng rng(5);
  std::vector<double> a(1000), b(1000);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  double naive = 0;
  for (std::size_t i = 0; i < a.size(); ++i) naive += std::abs(a[i] - b[i]);
  naive /= 1000.0;
  CHECK(std::abs(mae(a, b) - naive) < 1e-12);
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(mae(a, y), std::invalid_argument);
}

TEST_CASE("summary quartiles") {
  const std::vector<double> v{4, 1, 3, 2, 5};
  const Summary s = summarize(v);
  CHECK(s.min == 1);
  CHECK(s.q1 == 2);
  CHECK(s.median == 3);
  CHECK(s.q3 == 4);
  CHECK(s.max == 5);
  CHECK(summarize(std::vector<double>{1, 2}).median == 1.5);
}

TEST_CASE("error report: replicated truth, uniform offset and csv round trip") {
  const GridGeometry g = geom(8, 8, 4);
  const ModelGrid truth = constant_grid(g, 0.3, 0.6);
  const std::vector<WellLocation> locs{{0, 1, 1}, {1, 6, 3}};
  const WellDataset wells = extract_well_data(truth, locs);

  const std::vector<ModelGrid> same(3, truth);
  const ErrorReport r0 = error_report(same, wells, truth);
  for (const auto& e : r0.samples) {
    CHECK(e.inversion == 0.0);
    CHECK(e.gen_coarse == 0.0);
    CHECK(e.gen_depo == 0.0);
    CHECK(e.inversion_strict());
    CHECK(e.generalization_strict());
  }

  const std::vector<ModelGrid> off{constant_grid(g, 0.35, 0.65)};
  const ErrorReport r1 = error_report(off, wells, truth);
  CHECK(r1.samples[0].gen_coarse == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(r1.samples[0].gen_depo == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(r1.samples[0].inversion == doctest::Approx(0.05).epsilon(1e-12));
  CHECK_FALSE(r1.samples[0].generalization_strict());
  CHECK(r1.samples[0].generalization_useful());

  const std::vector<ModelGrid> wrong{constant_grid(geom(4, 8, 4), 0.3, 0.6)};
  CHECK_THROWS_AS(error_report(wrong, wells, truth), std::invalid_argument);

  std::stringstream ss;
  const auto rows = error_rows(r1, "case1", 2, true, "latent-opt");
  write_error_csv(ss, rows);
  CHECK(ss.str().rfind("case,wells,seismic,method,sample,inv_err,gen_err_frac,gen_err_time\n", 0) == 0);
  const auto back = read_error_csv(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].case_id == "case1");
  CHECK(back[0].seismic);
  CHECK(back[0].method == "latent-opt");
  CHECK(back[0].errors.gen_coarse == doctest::Approx(0.05).epsilon(1e-8));
}

TEST_CASE("error report: prior draws against one of its own samples reproduce exactly") {
  const GridGeometry g;
  const ProceduralGenerator gen(ProceduralGenerator::default_weights(g, 16));
  auto run = [&] {
    const auto zs = sample_prior(300, 16, 11);
    std::vector<ModelGrid> samples;
    for (const auto& z : zs) samples.push_back(gen.generate(z));
    const ModelGrid truth = samples[17];
    const std::vector<WellLocation> locs{{0, 3, 4}, {1, 20, 9}, {2, 11, 27}, {3, 28, 22}};
    const WellDataset wells = extract_well_data(truth, locs);
    std::stringstream ss;
    write_error_csv(ss, error_rows(error_report(samples, wells, truth), "prior", 4, false, "prior"));
    return ss.str();
  };
  const std::string a = run();
  CHECK(a == run());
  CHECK(std::count(a.begin(), a.end(), '\n') == 301);
}

TEST_CASE("ensemble statistics") {
  const GridGeometry g = geom(3, 2, 2);
  const std::vector<ModelGrid> same(4, constant_grid(g, 0.4, 0.2));
  const EnsembleStats s0 = ensemble_stats(same);
  for (double v : s0.coarse_std.data()) CHECK(v == 0.0);
  const std::vector<ModelGrid> two{constant_grid(g, 0, 0), constant_grid(g, 1, 1)};
  const EnsembleStats s1 = ensemble_stats(two);
  for (std::size_t i = 0; i < s1.coarse_mean.size(); ++i) {
    CHECK(s1.coarse_mean[i] == 0.5);
    CHECK(s1.coarse_std[i] == 0.5);
    CHECK(s1.depo_std[i] == 0.5);
  }
  Rng rng(3);
  std::vector<ModelGrid> stack;
  for (int i = 0; i < 7; ++i) stack.push_back(random_grid(g, rng));
  const EnsembleStats s2 = ensemble_stats(stack);
  for (std::size_t c = 0; c < s2.coarse_mean.size(); ++c) {
    double m = 0;
    for (const auto& x : stack) m += x.depo_time[c];
    m /= 7;
    double v = 0;
    for (const auto& x : stack) v += (x.depo_time[c] - m) * (x.depo_time[c] - m);
    CHECK(std::abs(s2.depo_mean[c] - m) < 1e-12);
    CHECK(std::abs(s2.depo_std[c] - std::sqrt(v / 7)) < 1e-12);
  }
  CHECK_THROWS_AS(ensemble_stats(std::vector<ModelGrid>{same[0]}), std::invalid_argument);
}

TEST_CASE("laplacian pyramid collapses to its input") {
  Rng rng(9);
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{32, 32}, {27, 19}, {5, 8}}) {
    Tensor img({h, w});
    for (double& v : img.storage()) v = rng.uniform();
    const int levels = max_pyramid_levels(h, w, 1);
    const auto pyr = laplacian_pyramid(img, levels);
    CHECK(pyr.size() == static_cast<std::size_t>(levels));
    const Tensor back = collapse_pyramid(pyr);
    double worst = 0, worst32 = 0;
    for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(back[i] - img[i]));
    // Single-precision images.
    Tensor img32 = img;
    for (double& v : img32.storage()) v = static_cast<float>(v);
    auto pyr32 = laplacian_pyramid(img32, levels);
    for (auto& t : pyr32)
      for (double& v : t.storage()) v = static_cast<float>(v);
    const Tensor back32 = collapse_pyramid(pyr32);
    for (std::size_t i = 0; i < img.size(); ++i) worst32 = std::max(worst32, std::abs(back32[i] - img32[i]));
    CHECK(worst < 1e-12);
    CHECK(worst32 < 1e-6);
  }
  CHECK(max_pyramid_levels(32, 32, 7) == 3);
  CHECK(max_pyramid_levels(6, 32, 7) == 0);
}

TEST_CASE("swd: identity, symmetry, exact 1-d Wasserstein and shifts") {
  const GridGeometry g = geom(32, 32, 4);
  Rng rng(21);
  std::vector<ModelGrid> a, b;
  for (int i = 0; i < 6; ++i) a.push_back(random_grid(g, rng));
  for (int i = 0; i < 5; ++i) b.push_back(random_grid(g, rng));
  SwdConfig cfg;
  cfg.patches_per_sample = 16;
  cfg.projections = 32;
  cfg.repetitions = 2;
  CHECK(swd_multiscale(a, a, cfg).distance == 0.0);
  const double ab = swd_multiscale(a, b, cfg).distance, ba = swd_multiscale(b, a, cfg).distance;
  CHECK(ab > 0.0);
  CHECK(std::abs(ab - ba) < 1e-12);

  // Constant samples give 1-d descriptors equal to the sample value.
  std::vector<ModelGrid> ca, cb;
  std::vector<double> va, vb;
  for (int i = 0; i < 7; ++i) {
    ca.push_back(constant_grid(g, rng.uniform(), 0));
    va.insert(va.end(), 16, ca.back().coarse_fraction[0]);
  }
  for (int i = 0; i < 4; ++i) {
    cb.push_back(constant_grid(g, rng.uniform(), 0));
    vb.insert(vb.end(), 16, cb.back().coarse_fraction[0]);
  }
  SwdConfig one = cfg;
  one.levels = 1;
  one.patch = 1;
  one.normalize = false;
  one.use_depo = false;
  CHECK(std::abs(swd_multiscale(ca, cb, one).distance - wasserstein1(va, vb)) < 1e-12);

  // Sort-based oracle for unequal sizes: W1 of {0, 1} vs {0.5} is 0.5.
  CHECK(std::abs(wasserstein1({0.0, 1.0}, {0.5}) - 0.5) < 1e-15);
  CHECK(std::abs(wasserstein1({0.0, 0.0, 3.0}, {1.0}) - (2.0 / 3 + 2.0 / 3)) < 1e-12);

  // Shifting every cell of every sample by c moves every descriptor by c.
  std::vector<ModelGrid> shifted = a;
  for (auto& m : shifted)
    for (double& v : m.coarse_fraction.storage()) v += 0.125;
  CHECK(std::abs(swd_multiscale(a, shifted, one).distance - 0.125) < 1e-12);

  SwdConfig deep = cfg;
  deep.levels = 4;
  try {
    swd_multiscale(a, b, deep);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("at most 3") != std::string::npos);
  }
}

TEST_CASE("swd is independent of thread count") {
  const GridGeometry g = geom(16, 16, 2);
  Rng rng(4);
  std::vector<ModelGrid> a, b;
  for (int i = 0; i < 4; ++i) a.push_back(random_grid(g, rng));
  for (int i = 0; i < 4; ++i) b.push_back(random_grid(g, rng));
  SwdConfig cfg;
  cfg.levels = 2;
  cfg.patches_per_sample = 8;
  cfg.projections = 16;
  const double ref = swd_multiscale(a, b, cfg).distance;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  CHECK(swd_multiscale(a, b, cfg).distance == ref);
  omp_set_num_threads(saved);
}

TEST_CASE("classical mds reproduces distances") {
  const std::vector<std::vector<double>> tri{{0, 1, 1}, {1, 0, 1}, {1, 1, 0}};
  CHECK(stress(tri, classical_mds(tri)) < 1e-9);

  Rng rng(8);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 25; ++i) pts.push_back({rng.normal() * 3, rng.normal()});
  const auto d = distances(pts);
  const MdsResult planar = classical_mds(d);
  CHECK(stress(d, planar) < 1e-9);
  CHECK(planar.warnings.empty());

  const std::vector<std::vector<double>> pair{{0, 2.5}, {2.5, 0}};
  const MdsResult two = classical_mds(pair);
  CHECK(std::abs(dist(two.coords[0], two.coords[1]) - 2.5) < 1e-12);

  CHECK_THROWS_AS(classical_mds({{0, 1}, {2, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(classical_mds({{0, -1}, {-1, 0}}), std::invalid_argument);

  // A non-Euclidean matrix triggers the clamping warning.
  const std::vector<std::vector<double>> bad{{0, 1, 1, 3}, {1, 0, 1, 1}, {1, 1, 0, 1}, {3, 1, 1, 0}};
  const MdsResult r = classical_mds(bad, 4);
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("pca directions") {
  const std::vector<double> u{0.6, 0.0, -0.8};
  std::vector<LatentVector> line;
  for (int i = -3; i <= 4; ++i) line.push_back(LatentVector{{u[0] * i + 1, u[1] * i, u[2] * i - 2}});
  const auto [d1, d2] = pca_directions(line);
  double c = 0;
  for (int i = 0; i < 3; ++i) c += d1[i] * u[i];
  CHECK(std::abs(c) > 1 - 1e-9);

  Rng rng(12);
  std::vector<LatentVector> cloud, iso;
  for (int i = 0; i < 200; ++i) {
    auto v = rng.normal_vector(6);
    iso.push_back(LatentVector{v});
    for (int k = 0; k < 6; ++k) v[k] *= 1.0 + k;
    cloud.push_back(LatentVector{v});
  }
  const auto [e1, e2] = pca_directions(iso);
  double n1 = 0, n2 = 0, dot = 0;
  for (int k = 0; k < 6; ++k) {
    n1 += e1[k] * e1[k];
    n2 += e2[k] * e2[k];
    dot += e1[k] * e2[k];
  }
  CHECK(std::abs(n1 - 1) < 1e-10);
  CHECK(std::abs(n2 - 1) < 1e-10);
  CHECK(std::abs(dot) < 1e-10);

  const auto [p1, p2] = pca_directions(cloud);
  const LatentVector m = mean_latent(cloud);
  auto var_along = [&](const std::vector<double>& dir) {
    double s = 0;
    for (const auto& z : cloud) {
      double p = 0;
      for (int k = 0; k < 6; ++k) p += (z[k] - m[k]) * dir[k];
      s += p * p;
    }
    return s;
  };
  const double v1 = var_along(p1), v2 = var_along(p2);
  CHECK(v1 >= v2);
  for (int probe = 0; probe < 100; ++probe) {
    auto dir = rng.normal_vector(6);
    double n = 0;
    for (double x : dir) n += x * x;
    for (double& x : dir) x /= std::sqrt(n);
    CHECK(v1 >= var_along(dir) - 1e-9);
  }

  std::vector<LatentVector> flat(4, LatentVector{{1.0, 2.0}});
  CHECK_THROWS_AS(pca_directions(flat), std::invalid_argument);
}

TEST_CASE("error landscape: center node, standalone nodes and minimum at the truth") {
  const GridGeometry g;
  const ProceduralGenerator gen(ProceduralGenerator::default_weights(g, 16));
  Rng rng(31, {stream::truth, 0});
  const LatentVector truth{rng.normal_vector(16)};
  const std::vector<WellLocation> locs{{0, 3, 4}, {1, 20, 9}, {2, 11, 27}, {3, 28, 22}, {4, 14, 14}};
  const WellDataset wells = extract_well_data(gen.generate(truth, {}, Precision::f64), locs);

  std::vector<double> d1(16, 0.0), d2(16, 0.0);
  d1[0] = 1.0;
  d2[2] = 1.0;
  LatentVector center = truth;
  center[0] -= 3.0;
  center[2] += 2.0;
  LandscapeConfig cfg;
  cfg.lo = -5;
  cfg.hi = 5;
  cfg.resolution = 11;
  cfg.precision = Precision::f64;
  const LandscapeGrid grid = error_landscape(gen, wells, center, d1, d2, cfg);
  CHECK(grid.at(5, 5) == well_mae_at(gen, wells, center, Precision::f64));
  LatentVector z = center;
  z[0] += grid.coords[2] * d1[0];
  z[2] += grid.coords[9] * d2[2];
  CHECK(grid.at(2, 9) == well_mae_at(gen, wells, z, Precision::f64));

  double lowest = std::numeric_limits<double>::infinity();
  for (double v : grid.values) lowest = std::min(lowest, v);
  CHECK(grid.at(8, 3) == lowest);
  CHECK(grid.at(8, 3) < 1e-9);

  std::vector<double> skew(16, 0.0);
  skew[0] = skew[1] = 1.0;
  CHECK_THROWS_AS(error_landscape(gen, wells, center, skew, d2, cfg), std::invalid_argument);
}

TEST_CASE("error landscape records failed generations as missing values") {
  const GridGeometry g = geom(4, 4, 2);
  Tensor a({g.cells(), 2}), b({g.cells()}, 0.5);
  for (std::int64_t c = 0; c < g.cells(); ++c) a[static_cast<std::size_t>(c * 2)] = 0.1;
  const CheckedLinear gen(LinearGenerator::make(g, a, b));
  const WellDataset wells = extract_well_data(gen.generate(LatentVector{{0.0, 0.0}}, {}, Precision::f64),
                                              std::vector<WellLocation>{{0, 1, 1}});
  LandscapeConfig cfg;
  cfg.lo = -10;
  cfg.hi = 10;
  cfg.resolution = 5;
  cfg.precision = Precision::f64;
  const LandscapeGrid grid = error_landscape(gen, wells, LatentVector{{0.0, 0.0}}, std::vector<double>{1, 0},
                                             std::vector<double>{0, 1}, cfg);
  CHECK(std::isnan(grid.at(0, 2)));
  CHECK(std::isnan(grid.at(4, 2)));
  CHECK(grid.at(2, 2) == 0.0);
  CHECK(grid.at(1, 2) == doctest::Approx(0.5).epsilon(1e-12));
}
