#include <chrono>
#include <cmath>

#include "fluvinv/inversion.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

namespace {

SampleResult run_restart(const Generator& gen, const DataLoss& loss, const LatentOptConfig& cfg, int r) {
  SampleResult s;
  const int d = gen.latent_dim();
  if (r < static_cast<int>(cfg.initial.size())) {
    s.z = cfg.initial[r];
    if (s.z.size() != static_cast<std::size_t>(d))
      throw std::invalid_argument("latent_optimize: initial latent " + std::to_string(r) + " has wrong size");
  } else {
    Rng rng(cfg.seed, {stream::latent_opt, static_cast<std::uint64_t>(r)});
    s.z.values = rng.normal_vector(static_cast<std::size_t>(d));
  }
  s.labels = cfg.initial_labels.size() ? cfg.initial_labels : gen.default_labels();
  if (gen.label_dim() > 0) validate_labels(s.labels, gen.label_dim());
  const bool labels_free = cfg.optimize_labels && gen.label_dim() > 0;
  Adam adam_z(cfg.lr), adam_l(cfg.lr);
  LossWeights weights;
  const double radius = cfg.ball_radius * std::sqrt(static_cast<double>(d));
  for (int it = 0; it <= cfg.iterations; ++it) {
    Tape tape(cfg.precision);
    const Var zv = tape.variable(Tensor::vector(s.z.values));
    Var lv;
    if (gen.label_dim() > 0)
      lv = labels_free ? tape.variable(Tensor::vector(s.labels.values)) : tape.constant(Tensor::vector(s.labels.values));
    const GridVars out = gen.forward(tape, zv, lv);
    const LossTerms terms = loss.build(tape, out, zv, weights);
    const double value = tape.value(terms.total).item();
    if (!std::isfinite(value)) {
      s.failed = true;
      s.failure = "non-finite loss at iteration " + std::to_string(it);
      break;
    }
    if (cfg.keep_history) s.history.push_back(value);
    if (it == cfg.iterations) {
      s.final_loss = value;
      s.well_mae = loss.well_mae(tape.value(out.coarse));
      break;
    }
    tape.backward(terms.total);
    adam_z.step(s.z.values, tape.grad(zv).data());
    if (labels_free) {
      adam_l.step(s.labels.values, tape.grad(lv).data());
      for (double& v : s.labels.values) v = std::clamp(v, 0.0, 1.0);
    }
    if (radius > 0.0) {
      double n2 = 0.0;
      for (double v : s.z.values) n2 += v * v;
      const double n = std::sqrt(n2);
      if (n > radius)
        for (double& v : s.z.values) v *= radius / n;
    }
  }
  return s;
}

}  // namespace

InversionResult latent_optimize(const Generator& gen, const Observations& obs, const LatentOptConfig& cfg) {
  if (cfg.restarts < 1 || cfg.iterations < 0 || !(cfg.lr > 0.0))
    throw std::invalid_argument("latent_optimize: need restarts >= 1, iterations >= 0, lr > 0");
  const DataLoss loss(gen, obs, cfg.loss);
  const auto t0 = std::chrono::steady_clock::now();
  InversionResult res;
  res.method = "latent-opt";
  res.seed = cfg.seed;
  res.samples.resize(static_cast<std::size_t>(cfg.restarts));
  std::vector<std::string> errors(res.samples.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (int r = 0; r < cfg.restarts; ++r) {
    try {
      res.samples[r] = run_restart(gen, loss, cfg, r);
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("latent_optimize: " + e);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace fluvinv
