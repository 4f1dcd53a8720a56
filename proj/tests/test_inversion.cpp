#include <omp.h>

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fluvinv/inversion.hpp"
#include "fluvinv/ops.hpp"
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

LinearGenerator random_linear(const GridGeometry& g, int d, double scale, std::uint64_t seed) {
  Rng rng(seed);
  Tensor a({g.cells(), d}), b({g.cells()}, 0.5);
  for (double& v : a.storage()) v = scale * rng.normal();
  return LinearGenerator(LinearGenerator::make(g, a, b));
}

std::vector<WellLocation> grid_wells(const GridGeometry& g, int n) {
  std::vector<WellLocation> w;
  for (int i = 0; i < n; ++i) w.push_back({i, (i * 3 + 1) % g.nx, (i * 5 + 2) % g.ny});
  return w;
}

Observations wells_from(const Generator& gen, const LatentVector& z, std::span<const WellLocation> locs) {
  Observations obs;
  obs.wells = extract_well_data(gen.generate(z, {}, Precision::f64), locs);
  return obs;
}

LatentVector latent(std::vector<double> v) { return LatentVector{std::move(v)}; }

// Solves the small dense system m x = r by Gaussian elimination.
std::vector<double> solve(std::vector<std::vector<double>> m, std::vector<double> r) {
  const std::size_t n = r.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t i = c + 1; i < n; ++i)
      if (std::abs(m[i][c]) > std::abs(m[p][c])) p = i;
    std::swap(m[c], m[p]);
    std::swap(r[c], r[p]);
    for (std::size_t i = c + 1; i < n; ++i) {
      const double f = m[i][c] / m[c][c];
      for (std::size_t j = c; j < n; ++j) m[i][j] -= f * m[c][j];
      r[i] -= f * r[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = r[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= m[i][j] * x[j];
    x[i] = s / m[i][i];
  }
  return x;
}

struct SelfInversion {
  ProceduralGenerator gen;
  LatentVector truth;
  Observations obs;
};

SelfInversion procedural_case(int wells, std::uint64_t seed) {
  const GridGeometry g;
  SelfInversion s{ProceduralGenerator(ProceduralGenerator::default_weights(g, 16)), {}, {}};
  Rng rng(seed, {stream::truth, 0});
  s.truth.values = rng.normal_vector(16);
  const ModelGrid t = s.gen.generate(s.truth);
  const std::vector<Tensor> maps{vertical_mean(t.coarse_fraction)};
  PlacementPolicy policy = PlacementPolicy{}.scaled(0.25);
  policy.extra.wells = std::max(0, wells - policy.legacy.wells);
  s.obs.wells = extract_well_data(t, place_wells(maps, g, policy, seed).first(0, static_cast<std::size_t>(wells)));
  return s;
}

double mean_pairwise_distance(const std::vector<SampleResult>& s) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j, ++n) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < s[i].z.size(); ++k) d2 += (s[i].z[k] - s[j].z[k]) * (s[i].z[k] - s[j].z[k]);
      sum += std::sqrt(d2);
    }
  return sum / n;
}

}  // namespace

TEST_CASE("data loss: closed-form values and rejected configurations") {
  const GridGeometry g = geom(4, 4, 2);
  const LinearGenerator gen = random_linear(g, 3, 0.3, 1);
  const LatentVector z = latent({0.3, -1.2, 0.7});
  const auto locs = grid_wells(g, 3);
  Observations obs = wells_from(gen, z, locs);

  DataLossConfig cfg;
  cfg.latent_penalty = 0.5;
  const DataLoss loss(gen, obs, cfg);
  LossWeights w;
  const SampleResult at_truth = loss.evaluate(z, {}, w, Precision::f64);
  CHECK(at_truth.final_loss == doctest::Approx(0.5 * (0.09 + 1.44 + 0.49) / 3.0).epsilon(1e-12));
  CHECK(at_truth.well_mae == 0.0);

  // One well, one layer, residual 0.1.
  const GridGeometry g1 = geom(4, 4, 1);
  const LinearGenerator flat(LinearGenerator::make(g1, Tensor({16, 1}), Tensor({16}, 0.4)));
  Observations one;
  one.wells = extract_well_data(flat.generate(latent({0.0}), {}, Precision::f64), std::vector<WellLocation>{{0, 1, 1}});
  one.wells->wells[0].coarse[0] = 0.3;
  DataLossConfig unit;
  unit.equal_contribution = false;
  const DataLoss l1(flat, one, unit);
  LossWeights w1;
  CHECK(l1.evaluate(latent({0.0}), {}, w1, Precision::f64).final_loss == doctest::Approx(0.01).epsilon(1e-12));

  DataLossConfig none;
  none.use_wells = false;
  CHECK_THROWS_AS(DataLoss(gen, obs, none), std::invalid_argument);
  DataLossConfig seismic;
  seismic.use_seismic = true;
  CHECK_THROWS_AS(DataLoss(gen, obs, seismic), std::invalid_argument);
  Observations other = obs;
  other.wells->geometry = geom(5, 4, 2);
  CHECK_THROWS_AS(DataLoss(gen, other, cfg), std::invalid_argument);
}

TEST_CASE("data loss: gradients match finite differences for wells and seismic") {
  const GridGeometry g = geom(8, 8, 4);
  const ProceduralGenerator gen(ProceduralGenerator::default_weights(g, 8));
  const auto draws = sample_prior(3, 8, 5);
  const ModelGrid truth = gen.generate(draws[0], {}, Precision::f64);
  Observations obs;
  obs.wells = extract_well_data(truth, grid_wells(g, 4));
  obs.seismic = seismic_forward(truth, obs.seismic_config);

  for (const bool seismic : {false, true}) {
    DataLossConfig cfg;
    cfg.use_wells = !seismic;
    cfg.use_seismic = seismic;
    cfg.equal_contribution = false;
    cfg.well_metric = Metric::squared;
    cfg.latent_penalty = 0.1;
    const DataLoss loss(gen, obs, cfg);
    const ScalarBuilder fn = [&](Tape& t, Var z) {
      LossWeights w;
      return loss.build(t, gen.forward(t, z, Var{}), z, w).total;
    };
    for (std::size_t i = 1; i < draws.size(); ++i) {
      const auto r = gradient_check(fn, Tensor::vector(draws[i].values), 1e-5);
      CHECK_MESSAGE(r.max_relative_error < 1e-4, (seismic ? "seismic" : "wells"));
    }
  }
}

TEST_CASE("latent optimization: linear least squares and fixed point") {
  const GridGeometry g = geom(4, 4, 2);
  const LinearGenerator gen = random_linear(g, 4, 0.3, 2);
  const LatentVector zstar = latent({0.5, -0.4, 1.1, -0.8});
  const auto locs = grid_wells(g, 4);
  const Observations obs = wells_from(gen, zstar, locs);
  const auto before = gen.weights().fingerprint();

  LatentOptConfig cfg;
  cfg.restarts = 4;
  cfg.iterations = 3000;
  cfg.lr = 0.02;
  cfg.precision = Precision::f64;
  cfg.loss.equal_contribution = false;
  const InversionResult res = latent_optimize(gen, obs, cfg);
  for (const auto& s : res.samples) {
    CHECK(s.final_loss < 1e-8);
    CHECK(s.history.size() == 3001);
  }

  cfg.restarts = 1;
  cfg.iterations = 50;
  cfg.initial = {zstar};
  const InversionResult fixed = latent_optimize(gen, obs, cfg);
  for (double v : fixed.samples[0].history) CHECK(v == 0.0);
  CHECK(fixed.samples[0].z == zstar);
  CHECK(gen.weights().fingerprint() == before);
}

TEST_CASE("latent optimization: non-finite loss flags the restart") {
  const GridGeometry g = geom(4, 4, 2);
  Tensor a({32, 2}), b({32}, std::numeric_limits<double>::quiet_NaN());
  const LinearGenerator gen(LinearGenerator::make(g, a, b));
  Observations obs;
  obs.wells = extract_well_data(random_linear(g, 2, 0.3, 3).generate(latent({0, 0}), {}, Precision::f64),
                                grid_wells(g, 2));
  LatentOptConfig cfg;
  cfg.restarts = 2;
  cfg.iterations = 5;
  cfg.loss.equal_contribution = false;
  const InversionResult res = latent_optimize(gen, obs, cfg);
  REQUIRE(res.samples.size() == 2);
  for (const auto& s : res.samples) {
    CHECK(s.failed);
    CHECK(s.failure.find("non-finite") != std::string::npos);
  }
  CHECK_THROWS(res.best_sample());
}

TEST_CASE("latent optimization: procedural self-inversion with four wells") {
  const SelfInversion c = procedural_case(4, 1);
  LatentOptConfig cfg;
  cfg.restarts = 30;
  cfg.iterations = 2000;
  cfg.seed = 1;
  const InversionResult res = latent_optimize(c.gen, c.obs, cfg);
  int success = 0, windows = 0, good = 0;
  for (const auto& s : res.samples) {
    success += s.well_mae <= 0.01;
    for (std::size_t i = 0; i + 49 < s.history.size(); ++i, ++windows) good += s.history[i + 49] <= s.history[i];
  }
  CHECK(success >= 24);
  CHECK(double(good) / windows >= 0.95);

  // Best restart beats the best of an equal budget of prior draws.
  const DataLoss loss(c.gen, c.obs, cfg.loss);
  double best_prior = 1.0;
  for (const auto& z : sample_prior(3000, 16, 99)) {
    const ModelGrid m = c.gen.generate(z);
    best_prior = std::min(best_prior, loss.well_mae(m.coarse_fraction));
  }
  CHECK(res.samples[res.best_sample()].well_mae <= best_prior);
}

TEST_CASE("latent optimization: labels stay in range and results ignore the thread count") {
  const GridGeometry g = geom(16, 16, 4);
  const ProceduralGenerator gen(ProceduralGenerator::default_weights(g, 8, 5));
  LabelVector truth_labels = neutral_labels(5);
  truth_labels.values = {0.2, 0.9, 0.4, 0.7, 0.1};
  const ModelGrid truth = gen.generate(sample_prior(1, 8, 3)[0], truth_labels);
  Observations obs;
  obs.wells = extract_well_data(truth, grid_wells(g, 4));
  LatentOptConfig cfg;
  cfg.restarts = 6;
  cfg.iterations = 60;
  cfg.optimize_labels = true;
  cfg.ball_radius = 1.0;
  cfg.seed = 4;
  omp_set_num_threads(1);
  const std::string one = latent_optimize(gen, obs, cfg).to_json();
  omp_set_num_threads(3);
  const InversionResult many = latent_optimize(gen, obs, cfg);
  CHECK(many.to_json() == one);
  for (const auto& s : many.samples) {
    for (double v : s.labels.values) CHECK((v >= 0.0 && v <= 1.0));
    double n2 = 0.0;
    for (double v : s.z.values) n2 += v * v;
    CHECK(std::sqrt(n2) <= std::sqrt(8.0) + 1e-12);
  }
}

TEST_CASE("inference network: identity start, linear fit, collapse") {
  const InferenceNet id = make_inference_net(4, {}, true, 0);
  const std::vector<double> eps = {0.3, -1.0, 2.5, 0.0};
  CHECK(id.apply(eps).values == eps);
  CHECK_THROWS_AS(make_inference_net(4, {8}, true, 0), std::invalid_argument);

  const GridGeometry g = geom(4, 4, 2);
  const LinearGenerator gen = random_linear(g, 4, 0.3, 5);
  const auto before = gen.weights().fingerprint();
  const Observations obs = wells_from(gen, latent({0.4, -0.3, 0.8, 0.1}), grid_wells(g, 5));
  // Affine net on a linear generator: the training problem is convex.
  InferenceNetConfig cfg;
  cfg.hidden = {};
  cfg.iterations = 1000;
  cfg.lr = 1e-2;
  cfg.samples = 50;
  cfg.precision = Precision::f64;
  cfg.seed = 2;
  const InferenceNetResult r = train_inference_network(gen, obs, cfg);
  double mae = 0.0;
  for (const auto& s : r.result.samples) mae += s.well_mae / r.result.samples.size();
  CHECK(mae < 1e-3);
  CHECK(r.result.training_history.size() == 1000);

  // Over-constrained data and no regularizer: outputs collapse onto one latent.
  cfg.hidden = {16};
  cfg.iterations = 1500;
  const InferenceNetResult deep = train_inference_network(gen, obs, cfg);
  CHECK(mean_pairwise_distance(deep.result.samples) < 0.1 * std::sqrt(2.0 * 4.0));

  // The moment-matching regularizer keeps the spread.
  cfg.collapse_weight = 1.0;
  const InferenceNetResult spread = train_inference_network(gen, obs, cfg);
  CHECK(mean_pairwise_distance(spread.result.samples) > mean_pairwise_distance(deep.result.samples));
  CHECK(gen.weights().fingerprint() == before);
}

TEST_CASE("inference network: divergence halts training with history") {
  const GridGeometry g = geom(4, 4, 2);
  Tensor a({32, 2}), b({32}, std::numeric_limits<double>::infinity());
  const LinearGenerator gen(LinearGenerator::make(g, a, b));
  Observations obs;
  obs.wells = extract_well_data(random_linear(g, 2, 0.3, 3).generate(latent({0, 0}), {}, Precision::f64),
                                grid_wells(g, 2));
  InferenceNetConfig cfg;
  cfg.iterations = 10;
  cfg.samples = 2;
  cfg.loss.equal_contribution = false;
  const InferenceNetResult r = train_inference_network(gen, obs, cfg);
  CHECK(r.result.training_history.empty());
  REQUIRE(!r.result.warnings.empty());
  CHECK(r.result.warnings[0].find("halted") != std::string::npos);
}

TEST_CASE("flow: exact inverse and log-determinant") {
  FlowConfig cfg;
  cfg.seed = 3;
  FlowModel f = make_flow(5, cfg);
  Rng rng(11);
  for (Tensor* p : f.parameters())
    for (double& v : p->storage()) v = 0.3 * rng.normal();
  const auto eps = rng.normal_vector(5);
  const auto [z, log_q] = f.sample(eps);
  const auto back = f.inverse(z.values);
  for (int i = 0; i < 5; ++i) CHECK(back[i] == doctest::Approx(eps[i]).epsilon(1e-12));

  // Tape log-determinant equals log|det J| from finite differences.
  std::vector<std::vector<double>> jac(5, std::vector<double>(5));
  for (int j = 0; j < 5; ++j) {
    auto hi = eps, lo = eps;
    hi[j] += 1e-6;
    lo[j] -= 1e-6;
    const auto zh = f.sample(hi).first, zl = f.sample(lo).first;
    for (int i = 0; i < 5; ++i) jac[i][j] = (zh[i] - zl[i]) / 2e-6;
  }
  double det = 1.0;
  for (int c = 0; c < 5; ++c) {
    int p = c;
    for (int i = c + 1; i < 5; ++i)
      if (std::abs(jac[i][c]) > std::abs(jac[p][c])) p = i;
    if (p != c) {
      std::swap(jac[p], jac[c]);
      det = -det;
    }
    det *= jac[c][c];
    for (int i = c + 1; i < 5; ++i) {
      const double m = jac[i][c] / jac[c][c];
      for (int k = c; k < 5; ++k) jac[i][k] -= m * jac[c][k];
    }
  }
  double e2 = 0.0;
  for (double v : eps) e2 += v * v;
  const double log_det = -0.5 * e2 - 2.5 * std::log(2.0 * std::numbers::pi) - log_q;
  CHECK(log_det == doctest::Approx(std::log(std::abs(det))).epsilon(1e-6));
}

TEST_CASE("flow: conjugate linear-Gaussian posterior") {
  const GridGeometry g = geom(4, 4, 2);
  const int d = 3;
  const LinearGenerator gen = random_linear(g, d, 0.4, 7);
  const auto locs = grid_wells(g, 2);
  const Observations obs = wells_from(gen, latent({1.0, -0.8, 0.6}), locs);
  const auto before = gen.weights().fingerprint();
  FlowConfig cfg;
  cfg.well_sigma = 0.3;
  cfg.iterations = 4000;
  cfg.samples = 20000;
  cfg.precision = Precision::f64;
  cfg.seed = 5;
  const FlowResult fr = variational_infer(gen, obs, cfg);

  // Analytic posterior N(mu, S) with S = (A'A / s^2 + I)^-1, mu = S A'(y - b) / s^2.
  const Tensor& a = gen.weights().at("matrix");
  const auto cells = obs.wells->cell_indices();
  const Tensor y = obs.wells->values();
  std::vector<std::vector<double>> prec(d, std::vector<double>(d, 0.0));
  std::vector<double> rhs(d, 0.0);
  const double s2 = cfg.well_sigma * cfg.well_sigma;
  for (std::size_t k = 0; k < cells.size(); ++k)
    for (int i = 0; i < d; ++i) {
      const double ai = a[static_cast<std::size_t>(cells[k] * d + i)];
      rhs[i] += ai * (y[k] - 0.5) / s2;
      for (int j = 0; j < d; ++j) prec[i][j] += ai * a[static_cast<std::size_t>(cells[k] * d + j)] / s2;
    }
  for (int i = 0; i < d; ++i) prec[i][i] += 1.0;
  const std::vector<double> mu = solve(prec, rhs);
  std::vector<double> var(d);
  for (int i = 0; i < d; ++i) {
    std::vector<double> e(d, 0.0);
    e[i] = 1.0;
    var[i] = solve(prec, e)[i];
  }

  std::vector<double> m(d, 0.0), v(d, 0.0);
  const double n = static_cast<double>(fr.result.samples.size());
  for (const auto& s : fr.result.samples)
    for (int i = 0; i < d; ++i) m[i] += s.z[i] / n;
  for (const auto& s : fr.result.samples)
    for (int i = 0; i < d; ++i) v[i] += (s.z[i] - m[i]) * (s.z[i] - m[i]) / (n - 1.0);
  double err = 0.0, norm = 0.0;
  for (int i = 0; i < d; ++i) {
    err += (m[i] - mu[i]) * (m[i] - mu[i]);
    norm += mu[i] * mu[i];
    CHECK_MESSAGE(std::abs(v[i] - var[i]) <= 0.1 * var[i], "dim " << i << " var " << v[i] << " vs " << var[i]);
  }
  CHECK_MESSAGE(std::sqrt(err) <= 0.05 * std::sqrt(norm), "mean error " << std::sqrt(err));
  CHECK(gen.weights().fingerprint() == before);
}

TEST_CASE("flow: without data the flow stays at the prior") {
  FlowConfig cfg;
  cfg.use_likelihood = false;
  cfg.iterations = 2000;
  cfg.samples = 0;
  const FlowResult fr = variational_infer(4, {}, cfg);
  double kl = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    Rng rng(9, {static_cast<std::uint64_t>(i)});
    const auto [z, log_q] = fr.flow.sample(rng.normal_vector(4));
    double z2 = 0.0;
    for (double v : z.values) z2 += v * v;
    kl += (log_q - (-0.5 * z2 - 2.0 * std::log(2.0 * std::numbers::pi))) / n;
  }
  CHECK(kl < 0.05);
}

TEST_CASE("flow: smoothed ELBO does not decrease") {
  const GridGeometry g = geom(4, 4, 2);
  const LinearGenerator gen = random_linear(g, 3, 0.4, 8);
  const Observations obs = wells_from(gen, latent({0.5, 0.5, -0.5}), grid_wells(g, 3));
  int good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FlowConfig cfg;
    cfg.well_sigma = 0.3;
    cfg.iterations = 1000;
    cfg.samples = 0;
    cfg.seed = seed;
    const auto elbo = variational_infer(gen, obs, cfg).elbo;
    // Block means of 100 iterations; a later block may not fall below an
    // earlier one by more than two standard errors.
    std::vector<double> mean, se;
    for (std::size_t b = 0; b + 100 <= elbo.size(); b += 100) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = b; i < b + 100; ++i) m += elbo[i] / 100.0;
      for (std::size_t i = b; i < b + 100; ++i) v += (elbo[i] - m) * (elbo[i] - m) / 99.0;
      mean.push_back(m);
      se.push_back(std::sqrt(v / 100.0));
    }
    bool ok = true;
    for (std::size_t i = 1; i < mean.size(); ++i)
      ok = ok && mean[i] >= mean[i - 1] - 2.0 * std::hypot(se[i], se[i - 1]);
    good += ok;
  }
  CHECK(good >= 9);
}

TEST_CASE("dream: proposal symmetry and acceptance rule") {
  const std::vector<std::vector<double>> archive = {{0.1, 2.0, -1.0}, {1.5, -0.3, 0.2}, {-2.0, 0.4, 0.9},
                                                    {0.7, 0.7, -0.6}, {-0.2, -1.1, 1.3}};
  const std::vector<double> x = {0.3, -0.4, 0.8};
  const std::vector<int> r1 = {0, 3}, r2 = {2, 4};
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  const std::vector<double> e = {0.02, -0.01, 0.04}, zero = {0.0, 0.0, 0.0};
  const auto forward = propose_parallel(x, archive, r1, r2, 0.8, mask, e, zero);
  CHECK(forward[1] == x[1]);
  const auto back = propose_parallel(forward, archive, r2, r1, 0.8, mask, e, zero);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-14));

  for (double delta : {-5.0, -0.7, 0.0, 0.3, 4.0})
    CHECK(acceptance_probability(delta) == std::min(1.0, std::exp(delta)));
  CHECK(acceptance_probability(-1.0, 0.4) == std::exp(-0.6));
  CHECK(metropolis_accept(std::log(0.3), 0.0, 0.29));
  CHECK(!metropolis_accept(std::log(0.3), 0.0, 0.31));
  CHECK(metropolis_accept(0.0, 0.0, 0.999999));
}

TEST_CASE("dream: configuration errors") {
  const LogDensity flat = [](std::span<const double>) { return 0.0; };
  DreamConfig cfg;
  cfg.chains = 2;
  CHECK_THROWS_AS(dream_zs(flat, 2, cfg), std::invalid_argument);
  cfg.chains = 3;
  cfg.archive_init = 6;
  CHECK_THROWS_AS(dream_zs(flat, 2, cfg), std::invalid_argument);
}

TEST_CASE("dream: standard normal, bimodal and flat targets") {
  const LogDensity normal = [](std::span<const double> z) {
    double s = 0.0;
    for (double v : z) s -= 0.5 * v * v;
    return s;
  };
  DreamConfig cfg;
  cfg.seed = 3;
  cfg.generations = 20000;
  cfg.burn_in = 10000;
  const ChainEnsemble ens = dream_zs(normal, 5, cfg);
  const auto post = ens.posterior();
  for (int d = 0; d < 5; ++d) {
    double m = 0.0, v = 0.0;
    for (const auto& s : post) m += s[d] / post.size();
    for (const auto& s : post) v += (s[d] - m) * (s[d] - m) / (post.size() - 1);
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(v - 1.0) < 0.1);
  }
  for (double r : gelman_rubin(ens)) CHECK(r < 1.05);

  const LogDensity bimodal = [](std::span<const double> z) {
    auto sq = [&](double c) { return (z[0] - c) * (z[0] - c) + (z[1] - c) * (z[1] - c); };
    const double a = -0.5 * sq(3.0), b = -0.5 * sq(-3.0);
    const double hi = std::max(a, b);
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
  };
  const ChainEnsemble bi = dream_zs(bimodal, 2, cfg);
  double upper = 0.0;
  const auto bp = bi.posterior();
  for (const auto& s : bp) upper += (s[0] + s[1] > 0.0) / double(bp.size());
  CHECK(upper >= 0.1);
  CHECK(upper <= 0.9);

  DreamConfig walk;
  walk.generations = 500;
  walk.burn_in = 100;
  walk.p_snooker = 0.0;
  const ChainEnsemble w = dream_zs([](std::span<const double>) { return 0.0; }, 3, walk);
  CHECK(w.acceptance_rate() == 1.0);
  CHECK(w.state(499, 0, 0) != w.state(0, 0, 0));
}

TEST_CASE("dream: chains do not depend on the thread count") {
  const LogDensity normal = [](std::span<const double> z) { return -0.5 * (z[0] * z[0] + 4.0 * z[1] * z[1]); };
  DreamConfig cfg;
  cfg.generations = 400;
  cfg.burn_in = 200;
  cfg.outlier_check_every = 50;
  omp_set_num_threads(1);
  const ChainEnsemble a = dream_zs(normal, 2, cfg);
  omp_set_num_threads(4);
  const ChainEnsemble b = dream_zs(normal, 2, cfg);
  CHECK(a.states == b.states);
  CHECK(a.log_post == b.log_post);
}

TEST_CASE("gelman-rubin: degenerate and calibrated cases") {
  using Chains = std::vector<std::vector<std::vector<double>>>;
  const Chains distinct = {Chains::value_type(10, {1.0}), Chains::value_type(10, {2.0})};
  CHECK(std::isinf(gelman_rubin(distinct)[0]));
  const Chains same = {Chains::value_type(10, {1.0}), Chains::value_type(10, {1.0})};
  CHECK(gelman_rubin(same)[0] == 1.0);
  const Chains short_chains = {Chains::value_type(3, {1.0}), Chains::value_type(3, {2.0})};
  CHECK_THROWS_AS(gelman_rubin(short_chains), std::invalid_argument);

  Chains iid(4);
  Rng rng(21);
  for (auto& c : iid)
    for (int t = 0; t < 5000; ++t) c.push_back({rng.normal(), rng.normal()});
  for (double r : gelman_rubin(iid)) CHECK(r < 1.05);
}

TEST_CASE("dream: latent posterior leaves the generator untouched") {
  const GridGeometry g = geom(4, 4, 2);
  const LinearGenerator gen = random_linear(g, 2, 0.3, 4);
  const auto before = gen.weights().fingerprint();
  const Observations obs = wells_from(gen, latent({0.2, 0.1}), grid_wells(g, 2));
  const LogDensity lp = latent_log_posterior(gen, obs, FlowConfig{});
  const std::vector<double> z = {0.2, 0.1};
  CHECK(lp(z) == doctest::Approx(-0.5 * (0.04 + 0.01)).epsilon(1e-6));
  CHECK(gen.weights().fingerprint() == before);
}

TEST_CASE("pivotal tuning: stationary cases and rejected input") {
  ArchitectureDescriptor a;
  a.latent_dim = 8;
  a.base_channels = 2;
  a.output = geom(16, 16, 4);
  const NeuralGenerator gen(NeuralGenerator::initialize(a, 3));
  const auto pivots = sample_prior(2, 8, 4);
  Observations obs;
  obs.wells = extract_well_data(gen.generate(pivots[0]), grid_wells(a.output, 4));

  PivotalConfig cfg;
  cfg.steps = 10;
  cfg.anchors_per_step = 2;
  CHECK_THROWS_AS(pivotal_tune(gen, {}, {}, obs, cfg), std::invalid_argument);

  auto max_change = [&](const GeneratorWeights& w) {
    double m = 0.0;
    for (std::size_t i = 0; i < w.tensors.size(); ++i)
      for (std::size_t k = 0; k < w.tensors[i].value.size(); ++k)
        m = std::max(m, std::abs(w.tensors[i].value[k] - gen.weights().tensors[i].value[k]));
    return m;
  };
  const std::vector<LatentVector> exact = {pivots[0]};
  const PivotalResult still = pivotal_tune(gen, exact, {}, obs, cfg);
  CHECK(max_change(still.weights.at(0)) < 1e-6);

  cfg.data_term = false;
  cfg.locality_weight = 1e12;
  const std::vector<LatentVector> off = {pivots[1]};
  const PivotalResult anchored = pivotal_tune(gen, off, {}, obs, cfg);
  CHECK(max_change(anchored.weights.at(0)) < 1e-6);
}

TEST_CASE("pivotal tuning: improves every pivot after a truncated inversion") {
  ArchitectureDescriptor a;
  a.latent_dim = 8;
  a.base_channels = 2;
  a.output = geom(16, 16, 4);
  const NeuralGenerator gen(NeuralGenerator::initialize(a, 5));
  const auto before = gen.weights().fingerprint();
  const ModelGrid truth = ProceduralGenerator(ProceduralGenerator::default_weights(a.output, 8))
                              .generate(sample_prior(1, 8, 6)[0]);
  Observations obs;
  obs.wells = extract_well_data(truth, grid_wells(a.output, 4));

  LatentOptConfig lo;
  lo.restarts = 4;
  lo.iterations = 100;
  const InversionResult inv = latent_optimize(gen, obs, lo);
  std::vector<LatentVector> pivots;
  for (const auto& s : inv.samples) pivots.push_back(s.z);

  PivotalConfig cfg;
  cfg.steps = 60;
  cfg.lr = 3e-3;
  cfg.anchors_per_step = 2;
  for (const bool per_pivot : {false, true}) {
    cfg.per_pivot = per_pivot;
    const PivotalResult r = pivotal_tune(gen, pivots, {}, obs, cfg);
    CHECK(r.weights.size() == (per_pivot ? pivots.size() : 1));
    for (std::size_t i = 0; i < pivots.size(); ++i) {
      CHECK(r.result.samples[i].z == pivots[i]);
      CHECK_MESSAGE(r.result.samples[i].well_mae < r.mae_before[i],
                    "pivot " << i << ": " << r.mae_before[i] << " -> " << r.result.samples[i].well_mae);
    }
  }
  CHECK(gen.weights().fingerprint() == before);
}
