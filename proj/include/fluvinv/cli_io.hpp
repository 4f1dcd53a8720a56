#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluvinv/generator.hpp"
#include "fluvinv/inversion.hpp"
#include "fluvinv/metrics.hpp"

namespace fluvinv {

// ------------------------------------------------------------------ grid files

/// Self-describing multi-channel grid: every channel is a [z, y, x] tensor.
struct GridFile {
  Shape extents;                  // {z, y, x}
  double dx = 50.0, dy = 50.0, dz = 0.5;
  std::vector<std::string> channels;
  std::vector<Tensor> data;       // one per channel
  std::map<std::string, double> attributes;  // free-form scalars (e.g. v_avg)

  void validate() const;
};

void write_grid_file(const std::filesystem::path& path, const GridFile& grid);
GridFile read_grid_file(const std::filesystem::path& path);

GridFile to_grid_file(const ModelGrid& grid);
ModelGrid to_model_grid(const GridFile& file);
/// Channels coarse_fraction/i and depo_time/i for every sample i.
GridFile ensemble_file(std::span<const ModelGrid> samples);
std::vector<ModelGrid> ensemble_grids(const GridFile& file);
GridFile seismic_file(const SeismicCube& cube);

/// Legacy ASCII STRUCTURED_POINTS, one SCALARS block per channel.
void write_vtk(std::ostream& out, const GridFile& grid);

// ------------------------------------------------------------------ config

/// Config problems; `line` is 0 when no source line applies.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message, int line = 0, std::string key = {});
  int line() const { return line_; }
  /// Dotted path of the offending key, when known.
  const std::string& key() const { return key_; }
  const std::string& detail() const { return detail_; }

 private:
  int line_;
  std::string key_, detail_;
};

struct ExperimentConfig {
  GridGeometry grid;

  struct GeneratorChoice {
    std::string kind = "procedural";  // procedural | neural | file
    int latent_dim = 16;
    int base_channels = 4;
    int residual_blocks = 2;
    std::uint64_t init_seed = 1;
    std::string weights_path;  // kind == file
  } generator;

  struct Truth {
    int cases = 3;
    int latent_dim = 16;
  } truth;

  struct Wells {
    std::vector<int> counts{4, 8, 20};
    double radius_scale = 0.25;  // multiplies the full-scale exclusion radii
    double noise_sd = 0.0;
  } wells;

  struct Seismic {
    std::vector<bool> variants{false, true};  // runs without / with seismic
    SeismicConfig forward;
  } seismic;

  struct Inversion {
    std::string method = "latent-opt";  // latent-opt | inference-net | flow | dream-zs
    int iterations = 1000;
    double lr = 0.01;
    double latent_penalty = 0.0;
    double ball_radius = 0.0;
    Precision precision = Precision::f32;
    std::vector<int> hidden{64, 64};
    int batch = 8;
    int flow_layers = 4;
    int flow_hidden = 32;
    double well_sigma = 0.025;
    double seismic_sigma = 0.01;
    int chains = 10;
    int generations = 4000;
    int burn_in = 2000;
  } inversion;

  struct Tuning {
    int pivots = 8;
    int steps = 100;
    double lr = 3e-3;
    double locality_weight = 1.0;
    int anchors = 4;
    bool per_pivot = false;
  } tuning;

  struct Metrics {
    SwdConfig swd;
    LandscapeConfig landscape;
    int mds_samples = 50;
  } metrics;

  int samples = 300;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  /// Parses and validates a JSON document. Unknown keys, wrong types and
  /// bad values throw ConfigError carrying the source line.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;
  /// Canonical JSON (sorted keys); equal configs give equal text.
  std::string to_json() const;
  std::uint64_t hash() const;
};

/// FNV-1a 64 over bytes.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

// ------------------------------------------------------------------ workflow

/// A failure inside a named workflow stage (exit code 2).
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunKey {
  int case_index = 0;
  int wells = 0;
  bool seismic = false;
  std::string name() const;  // e.g. case0_w4_seismic
};

class Workflow {
 public:
  Workflow(ExperimentConfig config, std::filesystem::path out_dir);

  const ExperimentConfig& config() const { return config_; }
  const std::filesystem::path& out_dir() const { return out_; }
  std::vector<RunKey> runs() const;

  /// The generator inverted against (procedural, neural or loaded weights).
  const Generator& generator() const;

  // Each stage returns the files it wrote, relative to out_dir.
  std::vector<std::string> gen_truth();
  std::vector<std::string> place_wells_stage();
  std::vector<std::string> forward_seismic();
  std::vector<std::string> sample_prior_stage();
  std::vector<std::string> invert();
  std::vector<std::string> tune();
  std::vector<std::string> metrics();
  std::vector<std::string> landscape();

  /// manifest_<command>.json: config hash, seed, version, threads, produced files with hashes.
  std::string write_manifest(const std::string& command, const std::vector<std::string>& files, int threads) const;

  ModelGrid truth(int case_index) const;
  Observations observations(const RunKey& run) const;
  InversionResult inversion(const RunKey& run) const;
  InversionResult tuned(const RunKey& run) const;
  std::vector<GeneratorWeights> tuned_weights(const RunKey& run) const;

 private:
  ExperimentConfig config_;
  std::filesystem::path out_;
  mutable std::unique_ptr<Generator> gen_;
};

InversionResult parse_inversion_result(const std::string& json_text);

/// Full command line front end; returns the process exit code.
int run_cli(int argc, char** argv);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fluvinv
