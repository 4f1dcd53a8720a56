#include "fluvinv/generator.hpp"

#include <bit>
#include <cassert>
#include "json.hpp"

#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"

namespace fluvinv {

using nlohmann::json;

Shape ArchitectureDescriptor::seed_shape() const {
  const std::int64_t f = std::int64_t{1} << residual_blocks;
  if (output.nz % f || output.ny % f || output.nx % f)
    throw DescriptorError("descriptor: output extents must be divisible by 2^" +
                          std::to_string(residual_blocks));
  return {base_channels * f, output.nz / f, output.ny / f, output.nx / f};
}

const Tensor& GeneratorWeights::at(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw DescriptorError("weights: missing tensor '" + std::string(name) + "'");
}

Tensor& GeneratorWeights::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

bool GeneratorWeights::contains(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::size_t GeneratorWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

std::uint64_t GeneratorWeights::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& t : tensors) {
    for (char c : t.name) mix(static_cast<unsigned char>(c));
    for (auto e : t.value.shape()) mix(static_cast<std::uint64_t>(e));
    for (double v : t.value.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

void Generator::check_weights(const std::vector<std::pair<std::string, Shape>>& expected) const {
  for (const auto& [name, shape] : expected) {
    if (!weights_.contains(name))
      throw DescriptorError("weights: missing tensor '" + name + "'");
    const Tensor& t = weights_.at(name);
    if (t.shape() != shape)
      throw DescriptorError("weights: tensor '" + name + "' has shape " + shape_str(t.shape()) +
                            ", descriptor expects " + shape_str(shape));
  }
  if (weights_.tensors.size() != expected.size())
    throw DescriptorError("weights: " + std::to_string(weights_.tensors.size()) +
                          " tensors present, descriptor declares " +
                          std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (weights_.tensors[i].name != expected[i].first)
      throw DescriptorError("weights: tensor '" + weights_.tensors[i].name +
                            "' out of descriptor order");
}

std::vector<Var> bind_weights(Tape& tape, const GeneratorWeights& weights, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(weights.tensors.size());
  for (const auto& t : weights.tensors)
    vars.push_back(trainable ? tape.variable(t.value) : tape.constant(t.value));
  return vars;
}

GridVars Generator::forward(Tape& tape, Var z, Var labels) const {
  const auto vars = bind_weights(tape, weights_, false);
  return forward(tape, z, labels, vars);
}

ModelGrid Generator::generate(const LatentVector& z, const LabelVector& labels,
                              Precision precision) const {
  if (z.size() != static_cast<std::size_t>(latent_dim()))
    throw std::invalid_argument("generate: latent has " + std::to_string(z.size()) +
                                " values, generator expects " + std::to_string(latent_dim()));
  for (double v : z.values)
    if (!std::isfinite(v)) throw std::invalid_argument("generate: non-finite latent component");
  Tape tape(precision);
  const Var zv = tape.constant(Tensor::vector(z.values));
  Var lv;
  if (label_dim() > 0) {
    const LabelVector l = labels.size() == 0 ? default_labels() : labels;
    validate_labels(l, label_dim());
    lv = tape.constant(Tensor::vector(l.values));
  }
  const GridVars out = forward(tape, zv, lv);
  ModelGrid g{geometry(), tape.value(out.coarse), tape.value(out.depo)};
#ifndef NDEBUG
  if (bounded()) g.validate();
#endif
  return g;
}

std::vector<LatentVector> sample_prior(std::int64_t n, int dim, std::uint64_t seed) {
  if (n < 1 || dim < 1)
    throw std::invalid_argument("sample_prior: need n >= 1 and dim >= 1");
  std::vector<LatentVector> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(seed, {stream::prior, static_cast<std::uint64_t>(i)});
    out[i].values = rng.normal_vector(static_cast<std::size_t>(dim));
  }
  return out;
}

// ---------------------------------------------------------------- linear

LinearGenerator::LinearGenerator(GeneratorWeights weights) : Generator(std::move(weights)) {
  const std::int64_t cells = geometry().cells();
  check_weights({{"matrix", {cells, latent_dim()}}, {"offset", {cells}}});
  if (label_dim() != 0) throw DescriptorError("linear generator takes no labels");
}

GeneratorWeights LinearGenerator::make(const GridGeometry& geometry, Tensor matrix, Tensor offset) {
  GeneratorWeights w;
  w.arch.kind = "linear";
  w.arch.output = geometry;
  w.arch.latent_dim = matrix.rank() == 2 ? static_cast<int>(matrix.extent(1)) : 0;
  w.arch.label_dim = 0;
  w.arch.base_channels = 0;
  w.arch.residual_blocks = 0;
  w.tensors = {{"matrix", std::move(matrix)}, {"offset", std::move(offset)}};
  return w;
}

GridVars LinearGenerator::forward(Tape& tape, Var z, Var, std::span<const Var> w) const {
  const Var flat = ops::dense(tape, w[0], z, w[1]);
  const Var g = ops::reshape(tape, flat, geometry().shape());
  return {g, g};
}

std::unique_ptr<Generator> LinearGenerator::with_weights(GeneratorWeights weights) const {
  return std::make_unique<LinearGenerator>(std::move(weights));
}

std::unique_ptr<Generator> make_generator(GeneratorWeights weights) {
  const std::string kind = weights.arch.kind;
  if (kind == "neural") return std::make_unique<NeuralGenerator>(std::move(weights));
  if (kind == "procedural") return std::make_unique<ProceduralGenerator>(std::move(weights));
  if (kind == "linear") return std::make_unique<LinearGenerator>(std::move(weights));
  throw DescriptorError("unknown generator kind '" + kind + "'");
}

// ---------------------------------------------------------------- file IO

namespace {

json arch_to_json(const ArchitectureDescriptor& a) {
  const auto& g = a.output;
  return {{"kind", a.kind},
          {"latent_dim", a.latent_dim},
          {"label_dim", a.label_dim},
          {"base_channels", a.base_channels},
          {"residual_blocks", a.residual_blocks},
          {"output", {{"nx", g.nx}, {"ny", g.ny}, {"nz", g.nz}, {"dx", g.dx}, {"dy", g.dy}, {"dz", g.dz}}}};
}

ArchitectureDescriptor arch_from_json(const json& j) {
  ArchitectureDescriptor a;
  a.kind = j.at("kind").get<std::string>();
  a.latent_dim = j.at("latent_dim").get<int>();
  a.label_dim = j.at("label_dim").get<int>();
  a.base_channels = j.at("base_channels").get<int>();
  a.residual_blocks = j.at("residual_blocks").get<int>();
  const json& o = j.at("output");
  a.output = {o.at("nx").get<std::int64_t>(), o.at("ny").get<std::int64_t>(),
              o.at("nz").get<std::int64_t>(), o.at("dx").get<double>(),
              o.at("dy").get<double>(),       o.at("dz").get<double>()};
  return a;
}

constexpr int kWeightsVersion = 1;

}  // namespace

void save_weights(const GeneratorWeights& weights, const std::filesystem::path& path) {
  json tensors = json::array();
  std::vector<double> payload;
  payload.reserve(weights.parameter_count());
  for (const auto& t : weights.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", 4 * payload.size()}});
    payload.insert(payload.end(), t.value.data().begin(), t.value.data().end());
  }
  const json header = {{"format", "fluvinv-weights"},
                       {"version", kWeightsVersion},
                       {"dtype", "float32"},
                       {"architecture", arch_to_json(weights.arch)},
                       {"tensors", tensors}};
  write_blob(path, kWeightsMagic, header.dump(), payload);
}

GeneratorWeights load_weights(const std::filesystem::path& path) {
  const Blob blob = read_blob(path, kWeightsMagic);
  json h;
  try {
    h = json::parse(blob.header);
  } catch (const json::exception& e) {
    throw FormatError(path.filename().string() + ": malformed manifest: " + e.what());
  }
  if (h.value("version", -1) != kWeightsVersion)
    throw FormatError(path.filename().string() + ": unsupported weights version " +
                      h.value("version", json(-1)).dump());
  GeneratorWeights w;
  try {
    w.arch = arch_from_json(h.at("architecture"));
    struct Entry {
      std::string name;
      Shape shape;
      std::size_t offset;
    };
    std::vector<Entry> entries;
    for (const json& t : h.at("tensors"))
      entries.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                         t.at("offset").get<std::size_t>()});
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const Entry& e = entries[i];
      for (auto x : e.shape)
        if (x < 1) throw FormatError("weights: tensor '" + e.name + "' has a non-positive extent");
      const auto begin = e.offset / 4;
      const auto count = static_cast<std::size_t>(shape_size(e.shape));
      // Each tensor must fill exactly the bytes up to the next one.
      const std::size_t end = i + 1 < entries.size() ? entries[i + 1].offset / 4 : blob.payload.size();
      if (e.offset % 4 != 0 || (i == 0 && begin != 0) || begin + count != end || end > blob.payload.size())
        throw FormatError("weights: tensor '" + e.name + "' shape " + shape_str(e.shape) +
                          " does not match its payload span (" + std::to_string(end - std::min(begin, end)) +
                          " values available)");
      std::vector<double> data(blob.payload.begin() + begin, blob.payload.begin() + begin + count);
      w.tensors.push_back({e.name, Tensor(e.shape, std::move(data))});
    }
    if (entries.empty() && !blob.payload.empty())
      throw FormatError("weights: payload present but manifest lists no tensors");
  } catch (const json::exception& e) {
    throw FormatError(path.filename().string() + ": malformed manifest: " + e.what());
  }
  return w;
}

}  // namespace fluvinv
