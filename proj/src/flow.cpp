#include <chrono>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "fluvinv/inversion.hpp"
#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

namespace {

constexpr double kFlowSlope = 0.2;

struct Halves {
  std::int64_t cond_lo, cond_hi, trans_lo, trans_hi;
};

Halves halves(int dim, bool first_half) {
  const std::int64_t h = dim / 2;
  if (first_half) return {0, h, h, dim};
  return {h, dim, 0, h};
}

// y = W x (+ b), plain doubles.
std::vector<double> matvec(const Tensor& w, std::span<const double> x, const Tensor* b) {
  const auto rows = static_cast<std::size_t>(w.extent(0)), cols = static_cast<std::size_t>(w.extent(1));
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b ? (*b)[r] : 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += w[r * cols + c] * x[c];
    y[r] = s;
  }
  return y;
}

// Log-scale and shift of one coupling given the conditioning half.
void coupling_st(const FlowModel::Coupling& c, double limit, std::span<const double> xa, std::vector<double>& s,
                 std::vector<double>& t, double* max_sat) {
  std::vector<double> h = matvec(c.w1, xa, &c.b1);
  for (double& v : h) v = v > 0 ? v : kFlowSlope * v;
  s = matvec(c.ws, h, &c.bs);
  t = matvec(c.wt, h, &c.bt);
  const auto ls = matvec(c.ls, xa, nullptr);
  const auto lt = matvec(c.lt, xa, nullptr);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double th = std::tanh(s[i] + ls[i]);
    if (max_sat) *max_sat = std::max(*max_sat, std::abs(th));
    s[i] = limit * th;
    t[i] += lt[i];
  }
}

std::vector<double> forward_scalar(const FlowModel& f, std::span<const double> eps, double* log_det,
                                   double* max_sat) {
  std::vector<double> x(eps.begin(), eps.end());
  double ld = 0.0;
  for (int i = 0; i < f.dim; ++i) {
    x[i] = x[i] * std::exp(f.base_log_scale[i]) + f.base_shift[i];
    ld += f.base_log_scale[i];
  }
  std::vector<double> s, t;
  for (const auto& c : f.couplings) {
    const Halves hv = halves(f.dim, c.first_half);
    coupling_st(c, f.scale_limit, std::span<const double>(x).subspan(hv.cond_lo, hv.cond_hi - hv.cond_lo), s, t,
                max_sat);
    for (std::int64_t i = hv.trans_lo; i < hv.trans_hi; ++i) {
      const auto k = static_cast<std::size_t>(i - hv.trans_lo);
      x[i] = x[i] * std::exp(s[k]) + t[k];
      ld += s[k];
    }
  }
  if (log_det) *log_det = ld;
  return x;
}

Tensor normal_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = sd * rng.normal();
  return t;
}

}  // namespace

FlowModel make_flow(int dim, const FlowConfig& cfg) {
  if (dim < 1) throw std::invalid_argument("flow: dimension must be >= 1");
  if (cfg.layers < 0 || cfg.hidden < 1 || !(cfg.scale_limit > 0.0))
    throw std::invalid_argument("flow: need layers >= 0, hidden >= 1, scale_limit > 0");
  FlowModel f;
  f.dim = dim;
  f.scale_limit = cfg.scale_limit;
  f.base_shift = Tensor({dim});
  f.base_log_scale = Tensor({dim});
  if (dim < 2) return f;
  Rng rng(cfg.seed, {stream::flow, 0});
  for (int l = 0; l < cfg.layers; ++l) {
    FlowModel::Coupling c;
    c.first_half = l % 2 == 0;
    const Halves hv = halves(dim, c.first_half);
    const std::int64_t na = hv.cond_hi - hv.cond_lo, nb = hv.trans_hi - hv.trans_lo, H = cfg.hidden;
    c.w1 = normal_tensor({H, na}, std::sqrt(2.0 / (1.0 + kFlowSlope * kFlowSlope) / double(na)), rng);
    c.b1 = Tensor({H});
    // Output heads start at zero so the untrained flow is the identity.
    c.ws = Tensor({nb, H});
    c.bs = Tensor({nb});
    c.ls = Tensor({nb, na});
    c.wt = Tensor({nb, H});
    c.bt = Tensor({nb});
    c.lt = Tensor({nb, na});
    f.couplings.push_back(std::move(c));
  }
  return f;
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> p{&base_shift, &base_log_scale};
  for (auto& c : couplings)
    for (Tensor* t : {&c.w1, &c.b1, &c.ws, &c.bs, &c.ls, &c.wt, &c.bt, &c.lt}) p.push_back(t);
  return p;
}

std::vector<const Tensor*> FlowModel::parameters() const {
  std::vector<const Tensor*> p;
  for (Tensor* t : const_cast<FlowModel*>(this)->parameters()) p.push_back(t);
  return p;
}

Var FlowModel::forward(Tape& tape, Var eps, std::span<const Var> params, Var* log_det) const {
  if (params.size() != 2 + 8 * couplings.size()) throw std::invalid_argument("flow: wrong parameter count");
  Var x = ops::add(tape, ops::mul(tape, ops::exp(tape, params[1]), eps), params[0]);
  Var ld = ops::sum(tape, params[1]);
  std::size_t k = 2;
  for (const auto& c : couplings) {
    const Var* p = &params[k];
    k += 8;
    const Halves hv = halves(dim, c.first_half);
    const Var xa = ops::slice(tape, x, 0, hv.cond_lo, hv.cond_hi);
    const Var xb = ops::slice(tape, x, 0, hv.trans_lo, hv.trans_hi);
    const Var h = ops::leaky_relu(tape, ops::dense(tape, p[0], xa, p[1]), kFlowSlope);
    const Var raw_s = ops::add(tape, ops::dense(tape, p[2], h, p[3]), ops::dense(tape, p[4], xa));
    const Var s = ops::affine(tape, ops::tanh(tape, raw_s), scale_limit);
    const Var t = ops::add(tape, ops::dense(tape, p[5], h, p[6]), ops::dense(tape, p[7], xa));
    const Var yb = ops::add(tape, ops::mul(tape, xb, ops::exp(tape, s)), t);
    const Var parts[2] = {c.first_half ? xa : yb, c.first_half ? yb : xa};
    x = ops::concat(tape, parts, 0);
    ld = ops::add(tape, ld, ops::sum(tape, s));
  }
  if (log_det) *log_det = ld;
  return x;
}

std::pair<LatentVector, double> FlowModel::sample(std::span<const double> eps) const {
  if (eps.size() != static_cast<std::size_t>(dim)) throw std::invalid_argument("flow: base draw has wrong size");
  double ld = 0.0, e2 = 0.0;
  LatentVector z{forward_scalar(*this, eps, &ld, nullptr)};
  for (double v : eps) e2 += v * v;
  const double log_q = -0.5 * e2 - 0.5 * dim * std::log(2.0 * std::numbers::pi) - ld;
  return {std::move(z), log_q};
}

std::vector<double> FlowModel::inverse(std::span<const double> z) const {
  if (z.size() != static_cast<std::size_t>(dim)) throw std::invalid_argument("flow: latent has wrong size");
  std::vector<double> x(z.begin(), z.end()), s, t;
  for (auto it = couplings.rbegin(); it != couplings.rend(); ++it) {
    const Halves hv = halves(dim, it->first_half);
    coupling_st(*it, scale_limit, std::span<const double>(x).subspan(hv.cond_lo, hv.cond_hi - hv.cond_lo), s, t,
                nullptr);
    for (std::int64_t i = hv.trans_lo; i < hv.trans_hi; ++i) {
      const auto k = static_cast<std::size_t>(i - hv.trans_lo);
      x[i] = (x[i] - t[k]) * std::exp(-s[k]);
    }
  }
  for (int i = 0; i < dim; ++i) x[i] = (x[i] - base_shift[i]) * std::exp(-base_log_scale[i]);
  return x;
}

GaussianLikelihood::GaussianLikelihood(const Generator& generator, const Observations& obs, const FlowConfig& cfg)
    : obs_(&obs), config_(cfg) {
  if (!cfg.use_wells && !cfg.use_seismic) throw std::invalid_argument("likelihood: every term is disabled");
  if (cfg.use_wells) {
    if (!obs.wells) throw std::invalid_argument("likelihood: well term enabled but no well data");
    if (!(cfg.well_sigma > 0.0)) throw std::invalid_argument("likelihood: well_sigma must be > 0");
    if (obs.wells->geometry.shape() != generator.geometry().shape())
      throw std::invalid_argument("likelihood: well grid does not match generator output");
    well_cells_ = obs.wells->cell_indices();
    well_values_ = obs.wells->values();
  }
  if (cfg.use_seismic) {
    if (!obs.seismic) throw std::invalid_argument("likelihood: seismic term enabled but no seismic cube");
    if (!(cfg.seismic_sigma > 0.0)) throw std::invalid_argument("likelihood: seismic_sigma must be > 0");
  }
  geometry_ = generator.geometry();
}

Var GaussianLikelihood::build(Tape& tape, const GridVars& out) const {
  Var ll;
  auto add = [&](Var pred, const Tensor& target, double sigma) {
    const Var r = ops::sub(tape, pred, tape.constant(target));
    const Var term = ops::affine(tape, ops::sum(tape, ops::square(tape, r)), -0.5 / (sigma * sigma));
    ll = ll.valid() ? ops::add(tape, ll, term) : term;
  };
  if (config_.use_wells) add(ops::gather(tape, out.coarse, well_cells_), well_values_, config_.well_sigma);
  if (config_.use_seismic)
    add(seismic_forward(tape, out.coarse, geometry_, obs_->seismic_config, obs_->seismic->psf),
        obs_->seismic->amplitudes, config_.seismic_sigma);
  return ll;
}

FlowResult variational_infer(int dim, const LogLikelihoodBuilder& loglik, const FlowConfig& cfg) {
  if (cfg.iterations < 0 || cfg.batch < 1 || !(cfg.lr > 0.0) || cfg.samples < 0 ||
      !(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0))
    throw std::invalid_argument("flow: need iterations >= 0, batch >= 1, lr > 0, samples >= 0, 0 < final_lr_fraction <= 1");
  const auto t0 = std::chrono::steady_clock::now();
  FlowResult fr;
  fr.flow = make_flow(dim, cfg);
  fr.result.method = "flow";
  fr.result.seed = cfg.seed;
  auto params = fr.flow.parameters();
  std::size_t count = 0;
  for (const Tensor* p : params) count += p->size();
  std::vector<double> flat(count), grad(count);
  Adam adam(cfg.lr);
  for (int it = 0; it < cfg.iterations; ++it) {
    adam.set_lr(cfg.lr * std::pow(cfg.final_lr_fraction, double(it) / std::max(1, cfg.iterations - 1)));
    Tape tape(cfg.precision);
    std::vector<Var> vars;
    for (const Tensor* p : params) vars.push_back(tape.variable(*p));
    Var acc;
    double const_part = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      Rng rng(cfg.seed, {stream::flow, 1, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(b)});
      const auto eps = rng.normal_vector(static_cast<std::size_t>(dim));
      for (double v : eps) const_part += 0.5 * v * v;
      Var ld;
      const Var z = fr.flow.forward(tape, tape.constant(Tensor::vector(eps)), vars, &ld);
      // log p(z) - log q(z) without the cancelling normalizers; the 0.5 ||eps||^2 part is added below.
      Var term = ops::add(tape, ops::affine(tape, ops::sum(tape, ops::square(tape, z)), -0.5), ld);
      if (cfg.use_likelihood && loglik) term = ops::add(tape, term, loglik(tape, z));
      acc = acc.valid() ? ops::add(tape, acc, term) : term;
    }
    const Var elbo = ops::affine(tape, acc, 1.0 / cfg.batch);
    const double value = tape.value(elbo).item() + const_part / cfg.batch;
    if (!std::isfinite(value)) {
      fr.result.warnings.push_back("flow: non-finite ELBO at iteration " + std::to_string(it) + "; training halted");
      break;
    }
    fr.elbo.push_back(value);
    tape.backward(ops::affine(tape, elbo, -1.0));
    std::size_t k = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (double g : tape.grad(vars[i]).data()) grad[k++] = g;
    k = 0;
    for (const Tensor* p : params)
      for (double v : p->data()) flat[k++] = v;
    adam.step(flat, grad);
    k = 0;
    for (Tensor* p : params)
      for (double& v : p->storage()) v = flat[k++];
  }
  fr.result.training_history = fr.elbo;
  double max_sat = 0.0;
  for (int i = 0; i < cfg.samples; ++i) {
    Rng rng(cfg.seed, {stream::flow, 2, static_cast<std::uint64_t>(i)});
    const auto eps = rng.normal_vector(static_cast<std::size_t>(dim));
    SampleResult s;
    s.z.values = forward_scalar(fr.flow, eps, nullptr, &max_sat);
    fr.result.samples.push_back(std::move(s));
  }
  if (max_sat > 0.99)
    fr.result.warnings.push_back("flow: coupling log-scale saturated at the limit (|tanh| = " +
                                 std::to_string(max_sat) + "); consider a larger scale_limit");
  fr.result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return fr;
}

FlowResult variational_infer(const Generator& gen, const Observations& obs, const FlowConfig& cfg) {
  const int d = gen.latent_dim();
  std::shared_ptr<GaussianLikelihood> like;
  if (cfg.use_likelihood) like = std::make_shared<GaussianLikelihood>(gen, obs, cfg);
  const LabelVector labels = gen.default_labels();
  LogLikelihoodBuilder builder = [&](Tape& tape, Var z) {
    Var lv;
    if (gen.label_dim() > 0) lv = tape.constant(Tensor::vector(labels.values));
    return like->build(tape, gen.forward(tape, z, lv));
  };
  FlowResult fr = variational_infer(d, cfg.use_likelihood ? builder : LogLikelihoodBuilder{}, cfg);
  if (obs.wells) {
    DataLossConfig lc;
    lc.use_wells = true;
    lc.equal_contribution = false;
    const DataLoss loss(gen, obs, lc);
    std::vector<SampleResult>& samples = fr.result.samples;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::size_t i = 0; i < samples.size(); ++i) {
      LossWeights w;
      samples[i] = loss.evaluate(samples[i].z, labels, w, cfg.precision);
    }
  }
  return fr;
}

}  // namespace fluvinv
