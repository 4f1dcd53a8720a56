#include <cmath>

#include "fluvinv/generator.hpp"
#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

std::vector<std::pair<std::string, Shape>> NeuralGenerator::layout(const ArchitectureDescriptor& a) {
  if (a.latent_dim < 1 || a.label_dim < 0 || a.base_channels < 1 || a.residual_blocks < 0)
    throw DescriptorError("neural descriptor: latent_dim, base_channels must be >= 1");
  const Shape seed = a.seed_shape();
  const std::int64_t in = a.latent_dim + a.label_dim;
  std::vector<std::pair<std::string, Shape>> l;
  l.push_back({"proj.weight", {shape_size(seed), in}});
  l.push_back({"proj.bias", {shape_size(seed)}});
  std::int64_t c = seed[0];
  for (int b = 0; b < a.residual_blocks; ++b) {
    const std::int64_t co = c / 2;
    const std::string p = "block" + std::to_string(b) + ".";
    l.push_back({p + "conv1.weight", {co, c, 3, 3, 3}});
    l.push_back({p + "conv1.bias", {co}});
    l.push_back({p + "conv2.weight", {co, co, 3, 3, 3}});
    l.push_back({p + "conv2.bias", {co}});
    l.push_back({p + "skip.weight", {co, c, 1, 1, 1}});
    l.push_back({p + "skip.bias", {co}});
    c = co;
  }
  l.push_back({"head.weight", {2, c, 3, 3, 3}});
  l.push_back({"head.bias", {2}});
  return l;
}

NeuralGenerator::NeuralGenerator(GeneratorWeights weights) : Generator(std::move(weights)) {
  check_weights(layout(arch()));
}

GeneratorWeights NeuralGenerator::initialize(const ArchitectureDescriptor& arch, std::uint64_t seed) {
  GeneratorWeights w;
  w.arch = arch;
  w.arch.kind = "neural";
  const double leaky_gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  std::uint64_t index = 0;
  for (const auto& [name, shape] : layout(w.arch)) {
    Tensor t(shape, 0.0);
    const bool is_bias = name.ends_with(".bias");
    if (!is_bias) {
      const std::int64_t fan_in = shape_size(shape) / shape[0];
      // Head and skip paths feed no nonlinearity of their own.
      const bool linear = name.starts_with("head") || name.find("skip") != std::string::npos;
      double gain = linear ? 1.0 : leaky_gain;
      // Keep the residual sum at roughly unit variance.
      if (name.find("conv2") != std::string::npos || name.find("skip") != std::string::npos)
        gain *= std::sqrt(0.5);
      const double sd = gain / std::sqrt(static_cast<double>(fan_in));
      Rng rng(seed, {stream::weights, index});
      for (double& v : t.storage()) v = sd * rng.normal();
    }
    t.round_to_float();
    w.tensors.push_back({name, std::move(t)});
    ++index;
  }
  return w;
}

GridVars NeuralGenerator::forward(Tape& tape, Var z, Var labels, std::span<const Var> w) const {
  const Var input = label_dim() > 0 ? ops::concat(tape, std::vector<Var>{z, labels}, 0) : z;
  Var h = ops::reshape(tape, ops::dense(tape, w[0], input, w[1]), arch().seed_shape());
  std::size_t k = 2;
  for (int b = 0; b < arch().residual_blocks; ++b, k += 6) {
    const Var up = ops::upsample2(tape, h);
    Var main = ops::conv3d(tape, up, w[k], w[k + 1]);
    main = ops::leaky_relu(tape, main, kLeakySlope);
    main = ops::conv3d(tape, main, w[k + 2], w[k + 3]);
    const Var skip = ops::conv3d(tape, up, w[k + 4], w[k + 5]);
    h = ops::add(tape, main, skip);
  }
  Var out = ops::conv3d(tape, h, w[k], w[k + 1]);
  out = ops::affine(tape, ops::tanh(tape, out), 0.5, 0.5);
  const Shape s = geometry().shape();
  return {ops::reshape(tape, ops::slice(tape, out, 0, 0, 1), s),
          ops::reshape(tape, ops::slice(tape, out, 0, 1, 2), s)};
}

std::unique_ptr<Generator> NeuralGenerator::with_weights(GeneratorWeights weights) const {
  return std::make_unique<NeuralGenerator>(std::move(weights));
}

}  // namespace fluvinv
