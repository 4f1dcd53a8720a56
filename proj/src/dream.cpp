#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <tuple>
#include <stdexcept>

#include "fluvinv/inversion.hpp"
#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

void DreamConfig::validate(int dim) const {
  if (chains < 3) throw std::invalid_argument("dream-zs: need >= 3 chains (got " + std::to_string(chains) + ")");
  if (dim < 1) throw std::invalid_argument("dream-zs: dimension must be >= 1");
  if (generations < 1 || burn_in < 0 || burn_in >= generations)
    throw std::invalid_argument("dream-zs: need 0 <= burn_in < generations");
  if (delta_max < 1) throw std::invalid_argument("dream-zs: delta_max must be >= 1");
  const int m0 = archive_init > 0 ? archive_init : 10 * dim;
  if (m0 < 2 * delta_max + 1)
    throw std::invalid_argument("dream-zs: archive of " + std::to_string(m0) + " draws is smaller than 2*delta+1 = " +
                                std::to_string(2 * delta_max + 1));
  if (archive_thin < 1 || outlier_check_every < 1) throw std::invalid_argument("dream-zs: thinning must be >= 1");
  if (crossover.empty()) throw std::invalid_argument("dream-zs: crossover set is empty");
  for (double c : crossover)
    if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("dream-zs: crossover values must be in (0, 1]");
  if (!(p_snooker >= 0.0 && p_snooker <= 1.0)) throw std::invalid_argument("dream-zs: snooker probability must be in [0, 1]");
}

std::vector<double> propose_parallel(std::span<const double> x, const std::vector<std::vector<double>>& archive,
                                     std::span<const int> r1, std::span<const int> r2, double gamma,
                                     std::span<const std::uint8_t> mask, std::span<const double> e,
                                     std::span<const double> noise) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!mask[j]) continue;
    double diff = 0.0;
    for (int a : r1) diff += archive[static_cast<std::size_t>(a)][j];
    for (int b : r2) diff -= archive[static_cast<std::size_t>(b)][j];
    out[j] = x[j] + (1.0 + e[j]) * gamma * diff + noise[j];
  }
  return out;
}

std::pair<std::vector<double>, double> propose_snooker(std::span<const double> x, std::span<const double> za,
                                                       std::span<const double> zr1, std::span<const double> zr2,
                                                       double gamma) {
  const std::size_t d = x.size();
  std::vector<double> u(d);
  double n2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    u[j] = x[j] - za[j];
    n2 += u[j] * u[j];
  }
  std::vector<double> out(x.begin(), x.end());
  if (n2 == 0.0) return {out, 0.0};
  const double n = std::sqrt(n2);
  double proj = 0.0;
  for (std::size_t j = 0; j < d; ++j) proj += (zr1[j] - zr2[j]) * u[j] / n;
  double m2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = x[j] + gamma * proj * u[j] / n;
    m2 += (out[j] - za[j]) * (out[j] - za[j]);
  }
  if (m2 == 0.0) return {out, -std::numeric_limits<double>::infinity()};
  return {out, 0.5 * static_cast<double>(d - 1) * std::log(m2 / n2)};
}

double acceptance_probability(double delta, double log_jacobian) {
  const double a = delta + log_jacobian;
  if (std::isnan(a)) return 0.0;
  return a >= 0.0 ? 1.0 : std::exp(a);
}

bool metropolis_accept(double delta, double log_jacobian, double u) {
  return u < acceptance_probability(delta, log_jacobian);
}

std::vector<std::vector<double>> ChainEnsemble::posterior() const {
  std::vector<std::vector<double>> out;
  for (int t = burn_in; t < steps; ++t)
    for (int c = 0; c < chains; ++c) {
      const auto* p = &states[(static_cast<std::size_t>(t) * chains + c) * dim];
      out.emplace_back(p, p + dim);
    }
  return out;
}

namespace {

// k distinct indices in [0, n).
std::vector<int> distinct(Rng& rng, int n, int k) {
  std::vector<int> out;
  while (static_cast<int>(out.size()) < k) {
    const int i = static_cast<int>(rng.index(n));
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ChainEnsemble dream_zs(const LogDensity& logp, int dim, const DreamConfig& cfg) {
  cfg.validate(dim);
  const int n = cfg.chains;
  const int m0 = cfg.archive_init > 0 ? cfg.archive_init : 10 * dim;
  ChainEnsemble ens;
  ens.chains = n;
  ens.dim = dim;
  ens.steps = cfg.generations;
  ens.burn_in = cfg.burn_in;
  for (int i = 0; i < m0; ++i) {
    Rng rng(cfg.seed, {stream::dream, 2, static_cast<std::uint64_t>(i)});
    auto v = rng.normal_vector(static_cast<std::size_t>(dim));
    for (double& x : v) x *= cfg.initial_scale;
    ens.archive.push_back(std::move(v));
  }
  std::vector<std::vector<double>> x(n);
  std::vector<double> lp(n);
  for (int c = 0; c < n; ++c) {
    Rng rng(cfg.seed, {stream::dream, 3, static_cast<std::uint64_t>(c)});
    x[c] = rng.normal_vector(static_cast<std::size_t>(dim));
    for (double& v : x[c]) v *= cfg.initial_scale;
  }
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n; ++c) lp[c] = logp(x[c]);

  ens.states.resize(static_cast<std::size_t>(cfg.generations) * n * dim);
  ens.log_post.resize(static_cast<std::size_t>(cfg.generations) * n);
  std::vector<int> accepted(n);
  for (int g = 0; g < cfg.generations; ++g) {
    const int a_size = static_cast<int>(ens.archive.size());
    const bool jump = cfg.jump_every > 0 && (g + 1) % cfg.jump_every == 0;
    std::fill(accepted.begin(), accepted.end(), 0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < n; ++c) {
      Rng rng(cfg.seed, {stream::dream, 1, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(c)});
      std::vector<double> prop;
      double log_jac = 0.0;
      if (rng.uniform() < cfg.p_snooker) {
        const auto idx = distinct(rng, a_size, 3);
        const double gamma = rng.uniform(1.2, 2.2);
        std::tie(prop, log_jac) =
            propose_snooker(x[c], ens.archive[idx[0]], ens.archive[idx[1]], ens.archive[idx[2]], gamma);
      } else {
        const int delta = 1 + static_cast<int>(rng.index(cfg.delta_max));
        const auto idx = distinct(rng, a_size, 2 * delta);
        const double cr = cfg.crossover[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(cfg.crossover.size())))];
        std::vector<std::uint8_t> m(dim);
        int dsub = 0;
        for (int j = 0; j < dim; ++j) {
          m[j] = rng.uniform() < cr ? 1 : 0;
          dsub += m[j];
        }
        if (dsub == 0) {
          m[rng.index(dim)] = 1;
          dsub = 1;
        }
        const double gamma = jump ? 1.0 : 2.38 / std::sqrt(2.0 * delta * dsub);
        std::vector<double> e(dim), noise(dim);
        for (int j = 0; j < dim; ++j) {
          e[j] = rng.uniform(-cfg.e_scale, cfg.e_scale);
          noise[j] = cfg.noise_scale * rng.normal();
        }
        const std::span<const int> r1(idx.data(), delta), r2(idx.data() + delta, delta);
        prop = propose_parallel(x[c], ens.archive, r1, r2, gamma, m, e, noise);
      }
      const double lp_new = logp(prop);
      if (metropolis_accept(lp_new - lp[c], log_jac, rng.uniform())) {
        x[c] = std::move(prop);
        lp[c] = lp_new;
        accepted[c] = 1;
      }
    }
    for (int c = 0; c < n; ++c) {
      ens.accepted += accepted[c];
      std::copy(x[c].begin(), x[c].end(), ens.states.begin() + (static_cast<std::ptrdiff_t>(g) * n + c) * dim);
      ens.log_post[static_cast<std::size_t>(g) * n + c] = lp[c];
    }
    ens.proposals += n;
    if ((g + 1) % cfg.archive_thin == 0)
      for (int c = 0; c < n; ++c) ens.archive.push_back(x[c]);
    if (cfg.reset_outliers && g < cfg.burn_in && (g + 1) % cfg.outlier_check_every == 0) {
      std::vector<double> means(n, 0.0);
      const int from = (g + 1) / 2;
      for (int c = 0; c < n; ++c) {
        for (int t = from; t <= g; ++t) means[c] += ens.log_post[static_cast<std::size_t>(t) * n + c];
        means[c] /= static_cast<double>(g + 1 - from);
      }
      const double q1 = quantile(means, 0.25), q3 = quantile(means, 0.75);
      const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      for (int c = 0; c < n; ++c)
        if (means[c] < q1 - 2.0 * (q3 - q1) && c != best) {
          x[c] = x[best];
          lp[c] = lp[best];
          ++ens.outlier_resets;
        }
    }
  }
  return ens;
}

std::vector<double> gelman_rubin(const std::vector<std::vector<std::vector<double>>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw std::invalid_argument("gelman_rubin: need >= 2 chains");
  const std::size_t n = chains[0].size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("gelman_rubin: chains differ in length");
  if (n < 4) throw std::invalid_argument("gelman_rubin: need >= 4 retained samples per chain");
  const std::size_t dim = chains[0][0].size();
  std::vector<double> rhat(dim);
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<double> mean(m, 0.0), var(m, 0.0);
    for (std::size_t c = 0; c < m; ++c) {
      for (const auto& s : chains[c]) mean[c] += s[d];
      mean[c] /= nd;
      for (const auto& s : chains[c]) var[c] += (s[d] - mean[c]) * (s[d] - mean[c]);
      var[c] /= nd - 1.0;
    }
    double grand = 0.0, w = 0.0, b = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      grand += mean[c] / md;
      w += var[c] / md;
    }
    for (std::size_t c = 0; c < m; ++c) b += (mean[c] - grand) * (mean[c] - grand);
    b *= nd / (md - 1.0);
    if (w == 0.0) {
      rhat[d] = b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
      continue;
    }
    rhat[d] = std::sqrt(((nd - 1.0) / nd * w + b / nd) / w);
  }
  return rhat;
}

std::vector<double> gelman_rubin(const ChainEnsemble& ens) {
  const int from = ens.burn_in + (ens.steps - ens.burn_in) / 2;
  std::vector<std::vector<std::vector<double>>> chains(ens.chains);
  for (int c = 0; c < ens.chains; ++c)
    for (int t = from; t < ens.steps; ++t) {
      const auto* p = &ens.states[(static_cast<std::size_t>(t) * ens.chains + c) * ens.dim];
      chains[c].emplace_back(p, p + ens.dim);
    }
  return gelman_rubin(chains);
}

LogDensity latent_log_posterior(const Generator& generator, const Observations& obs, const FlowConfig& noise) {
  auto like = std::make_shared<GaussianLikelihood>(generator, obs, noise);
  const Generator* gen = &generator;
  const Precision precision = noise.precision;
  return [like, gen, precision](std::span<const double> z) {
    double prior = 0.0;
    for (double v : z) prior -= 0.5 * v * v;
    Tape tape(precision);
    const Var zv = tape.constant(Tensor::vector(std::vector<double>(z.begin(), z.end())));
    Var lv;
    if (gen->label_dim() > 0) lv = tape.constant(Tensor::vector(gen->default_labels().values));
    const GridVars out = gen->forward(tape, zv, lv);
    const double ll = tape.value(like->build(tape, out)).item();
    return std::isfinite(ll) ? ll + prior : -std::numeric_limits<double>::infinity();
  };
}

}  // namespace fluvinv
