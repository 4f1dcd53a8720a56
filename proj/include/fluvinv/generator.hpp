#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fluvinv/binary_io.hpp"
#include "fluvinv/grid.hpp"
#include "fluvinv/tape.hpp"

namespace fluvinv {

/// Describes a generator's inputs, outputs and (for the neural family) the
/// residual stack. The latent-512 and bigger variants are expressed here
/// rather than as separate code paths.
struct ArchitectureDescriptor {
  std::string kind = "neural";  // "neural", "procedural" or "linear"
  int latent_dim = 16;
  int label_dim = 0;
  int base_channels = 4;
  int residual_blocks = 2;
  GridGeometry output;

  /// Seed tensor extents [C, Z, Y, X] for the neural family.
  Shape seed_shape() const;
  bool operator==(const ArchitectureDescriptor&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct GeneratorWeights {
  ArchitectureDescriptor arch;
  std::vector<NamedTensor> tensors;

  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  bool contains(std::string_view name) const;
  std::size_t parameter_count() const;
  /// FNV-1a over names and raw values; equal fingerprints <=> identical weights.
  std::uint64_t fingerprint() const;
};

struct GridVars {
  Var coarse;  // [nz, ny, nx]
  Var depo;    // [nz, ny, nx]
};

class DescriptorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A differentiable map (latent, labels, weights) -> two-channel grid.
class Generator {
 public:
  virtual ~Generator() = default;

  const GeneratorWeights& weights() const { return weights_; }
  const ArchitectureDescriptor& arch() const { return weights_.arch; }
  int latent_dim() const { return weights_.arch.latent_dim; }
  int label_dim() const { return weights_.arch.label_dim; }
  const GridGeometry& geometry() const { return weights_.arch.output; }

  /// `labels` may be invalid when label_dim() == 0. `weight_vars` follows
  /// the order of weights().tensors.
  virtual GridVars forward(Tape& tape, Var z, Var labels, std::span<const Var> weight_vars) const = 0;

  /// Same architecture with other weights (used by pivotal tuning).
  virtual std::unique_ptr<Generator> with_weights(GeneratorWeights weights) const = 0;

  /// Whether outputs are guaranteed to lie in [0, 1].
  virtual bool bounded() const { return true; }

  /// forward() with the stored weights bound as constants.
  GridVars forward(Tape& tape, Var z, Var labels) const;

  /// Gradient-free evaluation.
  ModelGrid generate(const LatentVector& z, const LabelVector& labels = {},
                     Precision precision = Precision::f32) const;

  /// Neutral labels of the right size (empty when label_dim() == 0).
  LabelVector default_labels() const { return neutral_labels(label_dim()); }

 protected:
  explicit Generator(GeneratorWeights weights) : weights_(std::move(weights)) {}
  /// Checks every expected tensor is present with the declared shape.
  void check_weights(const std::vector<std::pair<std::string, Shape>>& expected) const;

  GeneratorWeights weights_;
};

/// Binds weights on a tape as constants or as gradient-receiving variables.
std::vector<Var> bind_weights(Tape& tape, const GeneratorWeights& weights, bool trainable);

/// `n` i.i.d. standard-normal latents; vector i depends only on (seed, i).
std::vector<LatentVector> sample_prior(std::int64_t n, int dim, std::uint64_t seed);

/// Analytic channel-belt model with interpretable parameters. Acts as a
/// known-ground-truth generator: smooth in every input and weight.
class ProceduralGenerator final : public Generator {
 public:
  enum Param : int {
    kCenter,
    kHalfWidth,
    kMeanderSin,
    kWavelength,
    kMeanderCos,
    kDrift,
    kSharpness,
    kTilt,
    kPhaseShift,
    kRework,
    kParamCount
  };

  explicit ProceduralGenerator(GeneratorWeights weights);
  static GeneratorWeights default_weights(const GridGeometry& geometry, int latent_dim = 16,
                                          int label_dim = 0);

  using Generator::forward;
  GridVars forward(Tape& tape, Var z, Var labels, std::span<const Var> weight_vars) const override;
  std::unique_ptr<Generator> with_weights(GeneratorWeights weights) const override;

  /// Decoded belt parameters (cells, radians) for inspection and tests.
  std::vector<double> parameters(const LatentVector& z, const LabelVector& labels = {}) const;

  /// Lower bound and span of every parameter for this geometry.
  static std::pair<Tensor, Tensor> parameter_ranges(const GridGeometry& geometry);
};

/// Residual up-sampling generator: dense projection of [z; labels] to a
/// seed tensor, residual up-blocks, conv head, tanh mapped to [0, 1].
class NeuralGenerator final : public Generator {
 public:
  static constexpr double kLeakySlope = 0.2;

  explicit NeuralGenerator(GeneratorWeights weights);
  /// He-style random initialization, values rounded to float.
  static GeneratorWeights initialize(const ArchitectureDescriptor& arch, std::uint64_t seed);
  static std::vector<std::pair<std::string, Shape>> layout(const ArchitectureDescriptor& arch);

  using Generator::forward;
  GridVars forward(Tape& tape, Var z, Var labels, std::span<const Var> weight_vars) const override;
  std::unique_ptr<Generator> with_weights(GeneratorWeights weights) const override;
};

/// coarse = depo = reshape(A z + b). Unbounded; exists so inversion methods
/// can be checked against closed-form linear-Gaussian answers.
class LinearGenerator final : public Generator {
 public:
  explicit LinearGenerator(GeneratorWeights weights);
  static GeneratorWeights make(const GridGeometry& geometry, Tensor matrix, Tensor offset);

  using Generator::forward;
  GridVars forward(Tape& tape, Var z, Var labels, std::span<const Var> weight_vars) const override;
  std::unique_ptr<Generator> with_weights(GeneratorWeights weights) const override;
  bool bounded() const override { return false; }
};

/// Builds the generator named by weights.arch.kind.
std::unique_ptr<Generator> make_generator(GeneratorWeights weights);

/// Weights file: magic "FLVWTS\0\0", u32 LE header length, JSON manifest,
/// little-endian float32 payload.
void save_weights(const GeneratorWeights& weights, const std::filesystem::path& path);
GeneratorWeights load_weights(const std::filesystem::path& path);

}  // namespace fluvinv
