#include <cmath>
#include <stdexcept>

#include "fluvinv/inversion.hpp"
#include "fluvinv/ops.hpp"
#include "json.hpp"

namespace fluvinv {

void DataLossConfig::validate(const Observations& obs) const {
  if (!use_wells && !use_seismic) throw std::invalid_argument("data loss: every term is disabled");
  if (use_wells && !obs.wells) throw std::invalid_argument("data loss: well term enabled but no well data");
  if (use_seismic && !obs.seismic) throw std::invalid_argument("data loss: seismic term enabled but no seismic cube");
  if (well_weight < 0 || seismic_weight < 0 || latent_penalty < 0)
    throw std::invalid_argument("data loss: weights must be >= 0");
}

DataLoss::DataLoss(const Generator& generator, const Observations& obs, DataLossConfig config)
    : generator_(&generator), obs_(&obs), config_(config) {
  config_.validate(obs);
  const GridGeometry& g = generator.geometry();
  if (config_.use_wells) {
    const auto& w = *obs.wells;
    if (w.geometry.shape() != g.shape())
      throw std::invalid_argument("data loss: well grid " + shape_str(w.geometry.shape()) +
                                  " does not match generator output " + shape_str(g.shape()));
    well_cells_ = w.cell_indices();
    well_values_ = w.values();
  }
  if (config_.use_seismic) {
    const auto& s = *obs.seismic;
    if (s.geometry.nx != g.nx || s.geometry.ny != g.ny || s.geometry.nz != g.nz)
      throw std::invalid_argument("data loss: seismic cube was made from a different grid");
  }
}

namespace {

Var misfit(Tape& t, Var pred, const Tensor& target, Metric m) {
  const Var diff = ops::sub(t, pred, t.constant(target));
  return ops::mean(t, m == Metric::squared ? ops::square(t, diff) : ops::abs(t, diff));
}

}  // namespace

LossTerms DataLoss::build(Tape& tape, const GridVars& out, Var z, LossWeights& weights) const {
  LossTerms terms;
  if (config_.use_wells)
    terms.well = misfit(tape, ops::gather(tape, out.coarse, well_cells_), well_values_, config_.well_metric);
  if (config_.use_seismic) {
    const Var s = seismic_forward(tape, out.coarse, generator_->geometry(), obs_->seismic_config, obs_->seismic->psf);
    terms.seismic = misfit(tape, s, obs_->seismic->amplitudes, config_.seismic_metric);
  }
  if (!weights.resolved) {
    if (config_.equal_contribution) {
      if (terms.well.valid()) weights.well = 1.0 / std::max(tape.value(terms.well).item(), 1e-12);
      if (terms.seismic.valid()) weights.seismic = 1.0 / std::max(tape.value(terms.seismic).item(), 1e-12);
    } else {
      weights.well = config_.well_weight;
      weights.seismic = config_.seismic_weight;
    }
    weights.resolved = true;
  }
  Var total;
  auto add = [&](Var term) { total = total.valid() ? ops::add(tape, total, term) : term; };
  if (terms.well.valid()) add(ops::affine(tape, terms.well, weights.well));
  if (terms.seismic.valid()) add(ops::affine(tape, terms.seismic, weights.seismic));
  if (config_.latent_penalty > 0.0 && z.valid()) {
    const double d = static_cast<double>(tape.value(z).size());
    add(ops::affine(tape, ops::sum(tape, ops::square(tape, z)), config_.latent_penalty / d));
  }
  terms.total = total;
  return terms;
}

double DataLoss::well_mae(const Tensor& coarse) const {
  if (well_cells_.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (std::size_t i = 0; i < well_cells_.size(); ++i)
    s += std::abs(coarse[static_cast<std::size_t>(well_cells_[i])] - well_values_[i]);
  return s / static_cast<double>(well_cells_.size());
}

SampleResult DataLoss::evaluate(const LatentVector& z, const LabelVector& labels, LossWeights& weights,
                               Precision precision, const Generator* generator) const {
  const Generator& gen = generator ? *generator : *generator_;
  SampleResult s;
  s.z = z;
  s.labels = labels.size() ? labels : gen.default_labels();
  Tape tape(precision);
  const Var zv = tape.constant(Tensor::vector(z.values));
  Var lv;
  if (gen.label_dim() > 0) {
    validate_labels(s.labels, gen.label_dim());
    lv = tape.constant(Tensor::vector(s.labels.values));
  }
  const GridVars out = gen.forward(tape, zv, lv);
  s.final_loss = tape.value(build(tape, out, zv, weights).total).item();
  s.well_mae = well_mae(tape.value(out.coarse));
  if (!std::isfinite(s.final_loss)) {
    s.failed = true;
    s.failure = "non-finite loss";
  }
  return s;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw std::invalid_argument("adam: parameter/gradient size mismatch");
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::size_t InversionResult::best_sample() const {
  std::size_t best = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.failed || !std::isfinite(s.well_mae)) continue;
    if (best == samples.size() || s.well_mae < samples[best].well_mae) best = i;
  }
  if (best == samples.size()) throw std::runtime_error(method + ": no successful sample");
  return best;
}

std::string InversionResult::to_json(bool include_timing) const {
  using nlohmann::json;
  json j;
  j["method"] = method;
  j["seed"] = seed;
  json arr = json::array();
  for (const auto& s : samples) {
    json e;
    e["z"] = s.z.values;
    if (s.labels.size() > 0) {
      e["labels"] = s.labels.values;
      e["label_names"] = s.labels.names;
    }
    e["final_loss"] = s.final_loss;
    e["well_mae"] = s.well_mae;
    e["failed"] = s.failed;
    if (s.failed) e["failure"] = s.failure;
    e["history"] = s.history;
    arr.push_back(std::move(e));
  }
  j["samples"] = std::move(arr);
  if (!training_history.empty()) j["training_history"] = training_history;
  if (!warnings.empty()) j["warnings"] = warnings;
  if (include_timing) j["wall_seconds"] = wall_seconds;
  return j.dump(1);
}

}  // namespace fluvinv
