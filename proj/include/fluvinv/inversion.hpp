#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fluvinv/generator.hpp"
#include "fluvinv/geophysics.hpp"
#include "fluvinv/survey.hpp"

namespace fluvinv {

/// What the inversion is asked to match.
struct Observations {
  std::optional<WellDataset> wells;
  std::optional<SeismicCube> seismic;
  SeismicConfig seismic_config;  // rock physics and burden used to forward-model candidates
};

enum class Metric { squared, absolute };

struct DataLossConfig {
  bool use_wells = true;
  bool use_seismic = false;
  /// Weights become 1 / (term value at iteration 0) and then stay fixed.
  bool equal_contribution = true;
  double well_weight = 1.0;     // used when equal_contribution is off
  double seismic_weight = 1.0;  // idem
  Metric well_metric = Metric::squared;
  Metric seismic_metric = Metric::squared;
  double latent_penalty = 0.0;  // lambda_z, multiplies ||z||^2 / d

  void validate(const Observations& obs) const;
};

/// Term weights of one optimization run. Resolved on first use.
struct LossWeights {
  double well = 1.0;
  double seismic = 1.0;
  bool resolved = false;
};

struct LossTerms {
  Var total;
  Var well;     // unweighted mean misfit, invalid when off
  Var seismic;  // idem
};

struct SampleResult {
  LatentVector z;
  LabelVector labels;
  std::vector<double> history;  // loss per iteration
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double well_mae = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string failure;
};

/// Data-mismatch loss over wells and seismic plus the latent prior penalty.
class DataLoss {
 public:
  DataLoss(const Generator& generator, const Observations& obs, DataLossConfig config);

  /// Records the loss for generator outputs `out` produced from `z`. When
  /// `weights` is unresolved, it is set from the current term values.
  LossTerms build(Tape& tape, const GridVars& out, Var z, LossWeights& weights) const;

  /// Well MAE of a coarse-fraction tensor (inversion error).
  double well_mae(const Tensor& coarse) const;

  /// Loss and well MAE of one latent without gradients (uses `generator` if given).
  SampleResult evaluate(const LatentVector& z, const LabelVector& labels, LossWeights& weights,
                        Precision precision, const Generator* generator = nullptr) const;

  const DataLossConfig& config() const { return config_; }
  const Observations& observations() const { return *obs_; }
  const std::vector<std::int64_t>& well_cells() const { return well_cells_; }

 private:
  const Generator* generator_;
  const Observations* obs_;
  DataLossConfig config_;
  std::vector<std::int64_t> well_cells_;
  Tensor well_values_;
};

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(std::span<double> params, std::span<const double> grad);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  int t_ = 0;
};


struct InversionResult {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<SampleResult> samples;
  std::vector<double> training_history;  // inference network / flow / tuning
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;

  /// Index of the sample with the lowest well MAE (failed samples skipped).
  std::size_t best_sample() const;
  /// JSON document; wall-clock included only when asked (it breaks byte-identity).
  std::string to_json(bool include_timing = false) const;
};

struct LatentOptConfig {
  int restarts = 300;
  int iterations = 1000;
  double lr = 0.01;
  bool optimize_labels = false;
  double ball_radius = 0.0;  // > 0 projects z onto ||z|| <= r sqrt(d)
  DataLossConfig loss;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
  std::vector<LatentVector> initial;  // optional starting points instead of prior draws
  LabelVector initial_labels;         // defaults to neutral labels
  bool keep_history = true;
};

/// Independent Adam restarts on z (and optionally labels); generator frozen.
InversionResult latent_optimize(const Generator& generator, const Observations& obs,
                                const LatentOptConfig& config);

struct InferenceNetConfig {
  std::vector<int> hidden = {64, 64};
  int iterations = 500;
  int batch = 8;
  double lr = 1e-3;
  double final_lr_fraction = 0.1;  // exponential decay of the learning rate
  double collapse_weight = 0.0;  // moment matching of outputs to the prior
  bool identity_init = false;    // only valid without hidden layers
  DataLossConfig loss;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
  int samples = 300;
};

/// Fully connected map from auxiliary noise to latent vectors.
struct InferenceNet {
  std::vector<Tensor> weights;  // [out, in] per layer
  std::vector<Tensor> biases;
  static constexpr double kSlope = 0.2;

  int input_dim() const { return static_cast<int>(weights.front().extent(1)); }
  int output_dim() const { return static_cast<int>(weights.back().extent(0)); }
  Var forward(Tape& tape, Var eps, std::span<const Var> params) const;
  LatentVector apply(std::span<const double> eps) const;
};

struct InferenceNetResult {
  InferenceNet net;
  InversionResult result;
};

InferenceNet make_inference_net(int dim, const std::vector<int>& hidden, bool identity_init,
                                std::uint64_t seed);
InferenceNetResult train_inference_network(const Generator& generator, const Observations& obs,
                                           const InferenceNetConfig& config);

struct FlowConfig {
  int layers = 4;
  int hidden = 32;
  double scale_limit = 2.0;  // coupling log-scales are s_max * tanh(.)
  int iterations = 2000;
  int batch = 8;
  double lr = 5e-3;
  double final_lr_fraction = 0.1;  // exponential decay of the learning rate
  double well_sigma = 0.025;
  double seismic_sigma = 0.01;
  bool use_likelihood = true;
  bool use_wells = true;
  bool use_seismic = false;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
  int samples = 300;
};

/// Base elementwise affine map followed by alternating affine couplings.
struct FlowModel {
  struct Coupling {
    bool first_half;  // conditions on the first half, transforms the second
    Tensor w1, b1;    // hidden = leaky(w1 xa + b1)
    Tensor ws, bs, ls;  // log-scale head plus linear skip
    Tensor wt, bt, lt;  // shift head plus linear skip
  };
  int dim = 0;
  double scale_limit = 2.0;
  Tensor base_shift, base_log_scale;
  std::vector<Coupling> couplings;

  /// eps [d] -> z [d]; `log_det` receives log|det dz/deps| as a {1} tensor.
  Var forward(Tape& tape, Var eps, std::span<const Var> params, Var* log_det) const;
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  /// z and log q(z) for one base draw.
  std::pair<LatentVector, double> sample(std::span<const double> eps) const;
  /// Inverse map z -> eps, exact up to rounding.
  std::vector<double> inverse(std::span<const double> z) const;
};

FlowModel make_flow(int dim, const FlowConfig& config);

/// Gaussian log-likelihood with independent noise per observation.
class GaussianLikelihood {
 public:
  GaussianLikelihood(const Generator& generator, const Observations& obs, const FlowConfig& config);
  /// Records log p(data | z) up to an additive constant.
  Var build(Tape& tape, const GridVars& out) const;

 private:
  const Observations* obs_;
  FlowConfig config_;
  GridGeometry geometry_;
  std::vector<std::int64_t> well_cells_;
  Tensor well_values_;
};

struct FlowResult {
  FlowModel flow;
  InversionResult result;
  std::vector<double> elbo;  // per iteration
};

FlowResult variational_infer(const Generator& generator, const Observations& obs, const FlowConfig& config);

/// Same optimizer with a caller-supplied log-likelihood of z (tests, toy targets).
using LogLikelihoodBuilder = std::function<Var(Tape&, Var z)>;
FlowResult variational_infer(int dim, const LogLikelihoodBuilder& loglik, const FlowConfig& config);

struct DreamConfig {
  int chains = 10;
  int generations = 40000;  // per chain, burn-in included
  int burn_in = 20000;
  int archive_init = 0;  // 0 -> 10 * d
  double initial_scale = 1.0;
  int archive_thin = 10;
  int delta_max = 3;
  double p_snooker = 0.1;
  std::vector<double> crossover = {1.0 / 3.0, 2.0 / 3.0, 1.0};
  int jump_every = 5;
  double e_scale = 0.05;      // (1 + e), e ~ U(-b, b)
  double noise_scale = 1e-6;  // additive N(0, b*^2)
  bool reset_outliers = true;
  int outlier_check_every = 100;
  std::uint64_t seed = 0;

  void validate(int dim) const;
};

using LogDensity = std::function<double(std::span<const double>)>;

struct ChainEnsemble {
  int chains = 0, dim = 0, steps = 0, burn_in = 0;
  std::vector<double> states;    // [step][chain][dim]
  std::vector<double> log_post;  // [step][chain]
  std::vector<std::vector<double>> archive;
  std::int64_t proposals = 0, accepted = 0;
  int outlier_resets = 0;

  double state(int step, int chain, int d) const {
    return states[(static_cast<std::size_t>(step) * chains + chain) * dim + d];
  }
  double acceptance_rate() const { return proposals ? double(accepted) / double(proposals) : 0.0; }
  /// Post-burn-in states pooled over chains, [n][dim].
  std::vector<std::vector<double>> posterior() const;
};

/// Parallel-direction jump: x + (1 + e) * gamma * (sum archive[r1] - sum archive[r2]) + noise
/// on the dimensions where `mask` is set; other dimensions are copied.
std::vector<double> propose_parallel(std::span<const double> x, const std::vector<std::vector<double>>& archive,
                                     std::span<const int> r1, std::span<const int> r2, double gamma,
                                     std::span<const std::uint8_t> mask, std::span<const double> e,
                                     std::span<const double> noise);
/// Snooker jump toward archive[a] using the projection of archive[r1] - archive[r2].
/// Returns the proposal and the log Jacobian factor (d - 1) log(|x' - z_a| / |x - z_a|).
std::pair<std::vector<double>, double> propose_snooker(std::span<const double> x, std::span<const double> za,
                                                       std::span<const double> zr1, std::span<const double> zr2,
                                                       double gamma);
/// min(1, exp(delta_log_post + log_jacobian)).
double acceptance_probability(double delta_log_post, double log_jacobian = 0.0);
/// Metropolis decision for a uniform draw u in [0, 1).
bool metropolis_accept(double delta_log_post, double log_jacobian, double u);

ChainEnsemble dream_zs(const LogDensity& log_posterior, int dim, const DreamConfig& config);

/// Log posterior of z: Gaussian likelihood of the observations plus a standard-normal prior.
LogDensity latent_log_posterior(const Generator& generator, const Observations& obs, const FlowConfig& noise);

/// R-hat per dimension from the second half of the post-burn-in samples.
/// +infinity marks "not converged" (zero within-chain variance, positive between).
std::vector<double> gelman_rubin(const ChainEnsemble& ensemble);
/// chains[c][t][d]; uses all samples given.
std::vector<double> gelman_rubin(const std::vector<std::vector<std::vector<double>>>& chains);

struct PivotalConfig {
  int steps = 500;
  double lr = 1e-3;
  double locality_weight = 1.0;
  int anchors_per_step = 16;
  bool data_term = true;  // off leaves only the locality anchor
  bool per_pivot = false;
  DataLossConfig loss;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
};

struct PivotalResult {
  std::vector<GeneratorWeights> weights;  // one shared set, or one per pivot
  InversionResult result;                 // pivots evaluated with their tuned weights
  std::vector<double> mae_before;
};

/// Fine-tunes generator weights around fixed pivot latents.
PivotalResult pivotal_tune(const Generator& generator, std::span<const LatentVector> pivots,
                           std::span<const LabelVector> pivot_labels, const Observations& obs,
                           const PivotalConfig& config);

}  // namespace fluvinv
