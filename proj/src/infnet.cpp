#include <chrono>
#include <cmath>
#include <stdexcept>

#include "fluvinv/inversion.hpp"
#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

InferenceNet make_inference_net(int dim, const std::vector<int>& hidden, bool identity_init, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("inference net: dimension must be >= 1");
  if (identity_init && !hidden.empty())
    throw std::invalid_argument("inference net: identity initialization needs zero hidden layers");
  InferenceNet net;
  std::vector<int> sizes{dim};
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("inference net: hidden widths must be >= 1");
    sizes.push_back(h);
  }
  sizes.push_back(dim);
  Rng rng(seed, {stream::inference_net, 0});
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::int64_t in = sizes[l], out = sizes[l + 1];
    Tensor w({out, in});
    if (identity_init) {
      for (std::int64_t i = 0; i < out; ++i) w[static_cast<std::size_t>(i * in + i)] = 1.0;
    } else {
      const bool last = l + 2 == sizes.size();
      const double gain = last ? 1.0 : std::sqrt(2.0 / (1.0 + InferenceNet::kSlope * InferenceNet::kSlope));
      const double sd = gain / std::sqrt(double(in));
      for (double& v : w.storage()) v = sd * rng.normal();
    }
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(Shape{out});
  }
  return net;
}

Var InferenceNet::forward(Tape& tape, Var eps, std::span<const Var> params) const {
  if (params.size() != 2 * weights.size()) throw std::invalid_argument("inference net: wrong parameter count");
  Var h = eps;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = ops::dense(tape, params[2 * l], h, params[2 * l + 1]);
    if (l + 1 < weights.size()) h = ops::leaky_relu(tape, h, kSlope);
  }
  return h;
}

LatentVector InferenceNet::apply(std::span<const double> eps) const {
  if (eps.size() != static_cast<std::size_t>(input_dim()))
    throw std::invalid_argument("inference net: input has wrong size");
  Tape tape(Precision::f64);
  std::vector<Var> params;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    params.push_back(tape.constant(weights[l]));
    params.push_back(tape.constant(biases[l]));
  }
  const Var z = forward(tape, tape.constant(Tensor::vector({eps.begin(), eps.end()})), params);
  return LatentVector{tape.value(z).storage()};
}

namespace {

// Penalizes batch mean away from 0 and batch second moment away from 1.
Var moment_penalty(Tape& tape, std::span<const Var> zs, int dim) {
  const auto n = static_cast<std::int64_t>(zs.size());
  const Var stacked = ops::concat(tape, zs, 0);
  Tensor avg({dim, n * dim});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < dim; ++i) avg[static_cast<std::size_t>(i * n * dim + b * dim + i)] = 1.0 / double(n);
  const Var a = tape.constant(avg);
  const Var m1 = ops::dense(tape, a, stacked);
  const Var m2 = ops::affine(tape, ops::dense(tape, a, ops::square(tape, stacked)), 1.0, -1.0);
  const Var s = ops::add(tape, ops::sum(tape, ops::square(tape, m1)), ops::sum(tape, ops::square(tape, m2)));
  return ops::affine(tape, s, 1.0 / dim);
}

}  // namespace

InferenceNetResult train_inference_network(const Generator& gen, const Observations& obs,
                                           const InferenceNetConfig& cfg) {
  if (cfg.iterations < 0 || cfg.batch < 1 || !(cfg.lr > 0.0) || cfg.samples < 0 || cfg.collapse_weight < 0)
    throw std::invalid_argument("inference net: need iterations >= 0, batch >= 1, lr > 0, samples >= 0");
  if (!(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0))
    throw std::invalid_argument("inference net: final_lr_fraction must be in (0, 1]");
  if (cfg.collapse_weight > 0 && cfg.batch < 2)
    throw std::invalid_argument("inference net: moment matching needs batch >= 2");
  const auto t0 = std::chrono::steady_clock::now();
  const int d = gen.latent_dim();
  const DataLoss loss(gen, obs, cfg.loss);
  const LabelVector labels = gen.default_labels();
  InferenceNetResult out;
  out.net = make_inference_net(d, cfg.hidden, cfg.identity_init, cfg.seed);
  out.result.method = "inference-net";
  out.result.seed = cfg.seed;
  InferenceNet& net = out.net;

  auto draw = [&](std::uint64_t key, std::uint64_t i) {
    Rng rng(cfg.seed, {stream::inference_net, key, i});
    return rng.normal_vector(static_cast<std::size_t>(d));
  };
  auto label_var = [&](Tape& tape) {
    return gen.label_dim() > 0 ? tape.constant(Tensor::vector(labels.values)) : Var{};
  };

  // Term weights from the batch-mean term values at iteration 0, then frozen.
  LossWeights weights;
  if (cfg.loss.equal_contribution) {
    double well = 0.0, seismic = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      Tape tape(cfg.precision);
      const LatentVector z = net.apply(draw(1, static_cast<std::uint64_t>(b)));
      const Var zv = tape.constant(Tensor::vector(z.values));
      LossWeights scratch;
      const LossTerms t = loss.build(tape, gen.forward(tape, zv, label_var(tape)), zv, scratch);
      if (t.well.valid()) well += tape.value(t.well).item() / cfg.batch;
      if (t.seismic.valid()) seismic += tape.value(t.seismic).item() / cfg.batch;
    }
    weights.well = 1.0 / std::max(well, 1e-12);
    weights.seismic = 1.0 / std::max(seismic, 1e-12);
  } else {
    weights.well = cfg.loss.well_weight;
    weights.seismic = cfg.loss.seismic_weight;
  }
  weights.resolved = true;

  std::size_t count = 0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) count += net.weights[l].size() + net.biases[l].size();
  std::vector<double> flat(count), grad(count);
  Adam adam(cfg.lr);
  for (int it = 0; it < cfg.iterations; ++it) {
    adam.set_lr(cfg.lr * std::pow(cfg.final_lr_fraction, double(it) / std::max(1, cfg.iterations - 1)));
    Tape tape(cfg.precision);
    std::vector<Var> params;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      params.push_back(tape.variable(net.weights[l]));
      params.push_back(tape.variable(net.biases[l]));
    }
    std::vector<Var> zs;
    Var acc;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto eps = draw(2 + static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(b));
      const Var z = net.forward(tape, tape.constant(Tensor::vector(eps)), params);
      zs.push_back(z);
      LossWeights w = weights;
      const Var term = loss.build(tape, gen.forward(tape, z, label_var(tape)), z, w).total;
      acc = acc.valid() ? ops::add(tape, acc, term) : term;
    }
    Var total = ops::affine(tape, acc, 1.0 / cfg.batch);
    if (cfg.collapse_weight > 0)
      total = ops::add(tape, total, ops::affine(tape, moment_penalty(tape, zs, d), cfg.collapse_weight));
    const double value = tape.value(total).item();
    if (!std::isfinite(value)) {
      out.result.warnings.push_back("inference net: loss diverged at iteration " + std::to_string(it) +
                                    "; training halted");
      break;
    }
    out.result.training_history.push_back(value);
    tape.backward(total);
    std::size_t k = 0;
    for (const Var& p : params)
      for (double g : tape.grad(p).data()) grad[k++] = g;
    k = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      for (double v : net.weights[l].data()) flat[k++] = v;
      for (double v : net.biases[l].data()) flat[k++] = v;
    }
    adam.step(flat, grad);
    k = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      for (double& v : net.weights[l].storage()) v = flat[k++];
      for (double& v : net.biases[l].storage()) v = flat[k++];
    }
  }

  out.result.samples.resize(static_cast<std::size_t>(cfg.samples));
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < cfg.samples; ++i) {
    LossWeights w = weights;
    const LatentVector z = net.apply(draw(0, static_cast<std::uint64_t>(i)));
    out.result.samples[i] = loss.evaluate(z, labels, w, cfg.precision);
  }
  out.result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace fluvinv
