#include <chrono>
#include <cmath>
#include <stdexcept>

#include "fluvinv/inversion.hpp"
#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

namespace {

struct GroupOutcome {
  GeneratorWeights weights;
  std::vector<double> history;
};

Var label_var(Tape& tape, const Generator& gen, const LabelVector& labels) {
  return gen.label_dim() > 0 ? tape.constant(Tensor::vector(labels.values)) : Var{};
}

// Tunes one weight set against the pivots in `members`.
GroupOutcome tune_group(const Generator& gen, std::span<const LatentVector> pivots,
                        const std::vector<LabelVector>& labels, const std::vector<std::size_t>& members,
                        const DataLoss& loss, const PivotalConfig& cfg, std::uint64_t group_key) {
  GroupOutcome g{gen.weights(), {}};
  const int d = gen.latent_dim();
  std::vector<LossWeights> lw(members.size());
  std::size_t count = 0;
  for (const auto& t : g.weights.tensors) count += t.value.size();
  std::vector<double> flat(count), grad(count);
  Adam adam(cfg.lr);
  const bool anchored = cfg.locality_weight > 0.0 && cfg.anchors_per_step > 0;
  for (int step = 0; step <= cfg.steps; ++step) {
    Tape tape(cfg.precision);
    const std::vector<Var> vars = bind_weights(tape, g.weights, true);
    Var total;
    auto add = [&](Var v) { total = total.valid() ? ops::add(tape, total, v) : v; };
    if (cfg.data_term) {
      for (std::size_t m = 0; m < members.size(); ++m) {
        const std::size_t p = members[m];
        const Var zv = tape.constant(Tensor::vector(pivots[p].values));
        const GridVars out = gen.forward(tape, zv, label_var(tape, gen, labels[p]), vars);
        add(loss.build(tape, out, Var{}, lw[m]).total);
      }
    }
    if (anchored) {
      Rng rng(cfg.seed, {stream::tuning, group_key, static_cast<std::uint64_t>(step)});
      Var loc;
      for (int a = 0; a < cfg.anchors_per_step; ++a) {
        const std::size_t p = members[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(members.size())))];
        const double alpha = rng.uniform();
        LatentVector zt = pivots[p];
        for (int i = 0; i < d; ++i) zt[i] += alpha * (rng.normal() - zt[i]);
        const ModelGrid ref = gen.generate(zt, labels[p], cfg.precision);
        const Var zv = tape.constant(Tensor::vector(zt.values));
        const GridVars out = gen.forward(tape, zv, label_var(tape, gen, labels[p]), vars);
        const Var dc = ops::sub(tape, out.coarse, tape.constant(ref.coarse_fraction));
        const Var dd = ops::sub(tape, out.depo, tape.constant(ref.depo_time));
        const Var both = ops::add(tape, ops::mean(tape, ops::square(tape, dc)), ops::mean(tape, ops::square(tape, dd)));
        loc = loc.valid() ? ops::add(tape, loc, both) : both;
      }
      add(ops::affine(tape, loc, 0.5 * cfg.locality_weight / cfg.anchors_per_step));
    }
    const double value = tape.value(total).item();
    if (!std::isfinite(value))
      throw std::runtime_error("pivotal tuning: non-finite loss at step " + std::to_string(step));
    g.history.push_back(value);
    if (step == cfg.steps) break;
    tape.backward(total);
    std::size_t k = 0;
    for (std::size_t i = 0; i < vars.size(); ++i)
      for (double v : tape.grad(vars[i]).data()) grad[k++] = v;
    k = 0;
    for (const auto& t : g.weights.tensors)
      for (double v : t.value.data()) flat[k++] = v;
    adam.step(flat, grad);
    k = 0;
    for (auto& t : g.weights.tensors)
      for (double& v : t.value.storage()) v = flat[k++];
  }
  return g;
}

}  // namespace

PivotalResult pivotal_tune(const Generator& gen, std::span<const LatentVector> pivots,
                           std::span<const LabelVector> pivot_labels, const Observations& obs,
                           const PivotalConfig& cfg) {
  if (pivots.empty())
    throw std::invalid_argument("pivotal tuning: no pivots given; run a latent inversion first");
  if (cfg.steps < 0 || !(cfg.lr > 0.0) || cfg.locality_weight < 0 || cfg.anchors_per_step < 0)
    throw std::invalid_argument("pivotal tuning: need steps >= 0, lr > 0, locality_weight >= 0, anchors >= 0");
  if (!cfg.data_term && !(cfg.locality_weight > 0 && cfg.anchors_per_step > 0))
    throw std::invalid_argument("pivotal tuning: both the data term and the locality anchor are off");
  if (!pivot_labels.empty() && pivot_labels.size() != pivots.size())
    throw std::invalid_argument("pivotal tuning: pivot label count does not match pivot count");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<LabelVector> labels(pivots.size());
  for (std::size_t i = 0; i < pivots.size(); ++i) {
    if (pivots[i].size() != static_cast<std::size_t>(gen.latent_dim()))
      throw std::invalid_argument("pivotal tuning: pivot " + std::to_string(i) + " has wrong size");
    labels[i] = pivot_labels.empty() || pivot_labels[i].size() == 0 ? gen.default_labels() : pivot_labels[i];
    if (gen.label_dim() > 0) validate_labels(labels[i], gen.label_dim());
  }
  const DataLoss loss(gen, obs, cfg.loss);
  PivotalResult res;
  res.result.method = "pivotal-tuning";
  res.result.seed = cfg.seed;

  std::vector<std::vector<std::size_t>> groups;
  if (cfg.per_pivot) {
    for (std::size_t i = 0; i < pivots.size(); ++i) groups.push_back({i});
  } else {
    groups.emplace_back();
    for (std::size_t i = 0; i < pivots.size(); ++i) groups.back().push_back(i);
  }
  std::vector<GroupOutcome> outcomes(groups.size());
  std::vector<std::string> errors(groups.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    try {
      outcomes[gi] = tune_group(gen, pivots, labels, groups[gi], loss, cfg, gi);
    } catch (const std::exception& e) {
      errors[gi] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);

  res.result.samples.resize(pivots.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto tuned = gen.with_weights(outcomes[gi].weights);
    for (std::size_t p : groups[gi]) {
      LossWeights before, after;
      res.mae_before.resize(pivots.size());
      res.mae_before[p] = loss.evaluate(pivots[p], labels[p], before, cfg.precision).well_mae;
      after = before;
      SampleResult s = loss.evaluate(pivots[p], labels[p], after, cfg.precision, tuned.get());
      s.history = outcomes[gi].history;
      res.result.samples[p] = std::move(s);
    }
    if (gi == 0 || cfg.per_pivot) res.result.training_history = outcomes[gi].history;
    res.weights.push_back(std::move(outcomes[gi].weights));
  }
  if (cfg.per_pivot) res.result.training_history.clear();
  res.result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace fluvinv
