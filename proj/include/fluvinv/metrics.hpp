#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fluvinv/generator.hpp"
#include "fluvinv/survey.hpp"

namespace fluvinv {

/// Mean absolute error; throws std::invalid_argument on empty or unequal inputs.
double mae(std::span<const double> y, std::span<const double> y_hat);

/// min, quartiles (linear interpolation) and max.
struct Summary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
Summary summarize(std::span<const double> values);

inline constexpr double kStrictThreshold = 0.01;  // "maximum we should tolerate"
inline constexpr double kUsefulThreshold = 0.10;  // "would already be useful"

struct SampleErrors {
  double inversion = 0;   // well cells, coarse fraction
  double gen_coarse = 0;  // all cells
  double gen_depo = 0;
  bool inversion_strict() const { return inversion <= kStrictThreshold; }
  bool inversion_useful() const { return inversion <= kUsefulThreshold; }
  bool generalization_strict() const { return gen_coarse <= kStrictThreshold; }
  bool generalization_useful() const { return gen_coarse <= kUsefulThreshold; }
};

struct ErrorReport {
  std::vector<SampleErrors> samples;
  Summary inversion, gen_coarse, gen_depo;
};

ErrorReport error_report(std::span<const ModelGrid> samples, const WellDataset& wells, const ModelGrid& truth);

/// One line of the error CSV.
struct ErrorRow {
  std::string case_id;
  int wells = 0;
  bool seismic = false;
  std::string method;
  int sample = 0;
  SampleErrors errors;
};

std::vector<ErrorRow> error_rows(const ErrorReport& report, const std::string& case_id, int wells, bool seismic,
                                 const std::string& method);
/// Header: case,wells,seismic,method,sample,inv_err,gen_err_frac,gen_err_time
void write_error_csv(std::ostream& out, std::span<const ErrorRow> rows, bool header = true);
std::vector<ErrorRow> read_error_csv(std::istream& in);

struct EnsembleStats {
  Tensor coarse_mean, coarse_std, depo_mean, depo_std;  // population std
};
EnsembleStats ensemble_stats(std::span<const ModelGrid> samples);

/// Laplacian pyramid of a [h, w] image: levels-1 band-pass images then the low-pass residual.
std::vector<Tensor> laplacian_pyramid(const Tensor& image, int levels);
Tensor collapse_pyramid(const std::vector<Tensor>& pyramid);
/// Largest level count whose coarsest image still holds a patch.
int max_pyramid_levels(std::int64_t h, std::int64_t w, int patch);

struct SwdConfig {
  int levels = 3;
  int patch = 7;
  int patches_per_sample = 64;
  int projections = 128;
  int repetitions = 4;
  bool normalize = true;
  bool use_depo = true;  // descriptors carry both properties
  std::uint64_t seed = 0;

  void validate() const;
};

struct SwdResult {
  double distance = 0;
  std::vector<double> per_level;
};

/// Sliced Wasserstein distance between two sample sets over Laplacian-pyramid
/// patches of horizontal slices. Patch positions and projections depend only
/// on (seed, level, repetition, sample index), so swd(A, A) = 0 and
/// swd(A, B) = swd(B, A).
SwdResult swd_multiscale(std::span<const ModelGrid> a, std::span<const ModelGrid> b, const SwdConfig& config);

/// Exact 1-Wasserstein distance between two empirical distributions.
double wasserstein1(std::vector<double> a, std::vector<double> b);

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues sorted descending; vectors[k] is the k-th eigenvector.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};
SymmetricEigen jacobi_eigen(std::vector<std::vector<double>> a, double tol = 1e-14, int max_sweeps = 100);

struct MdsResult {
  std::vector<std::vector<double>> coords;  // [n][dim]
  std::vector<double> eigenvalues;          // top `dim`, before clamping
  std::vector<std::string> warnings;
};
/// Torgerson classical scaling of a symmetric distance matrix.
MdsResult classical_mds(const std::vector<std::vector<double>>& distances, int dim = 2);

/// Two orthonormal principal directions of a latent cloud, largest-magnitude
/// component of each made positive.
std::pair<std::vector<double>, std::vector<double>> pca_directions(std::span<const LatentVector> latents);
LatentVector mean_latent(std::span<const LatentVector> latents);

struct LandscapeConfig {
  double lo = -20.0, hi = 20.0;
  int resolution = 41;
  Precision precision = Precision::f32;
};

struct LandscapeGrid {
  LatentVector center;
  std::vector<double> dir1, dir2;
  std::vector<double> coords;  // node coordinates along each axis
  std::vector<double> values;  // row-major, b fastest; NaN where generation failed
  double at(int ia, int ib) const { return values[static_cast<std::size_t>(ia) * coords.size() + ib]; }
};

/// Well MAE of G(z), the quantity every landscape node holds.
double well_mae_at(const Generator& generator, const WellDataset& wells, const LatentVector& z,
                   Precision precision = Precision::f32);

LandscapeGrid error_landscape(const Generator& generator, const WellDataset& wells, const LatentVector& center,
                              std::span<const double> dir1, std::span<const double> dir2,
                              const LandscapeConfig& config = {});

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid);
/// Optional per-point labels add a `label` column.
void write_mds_csv(std::ostream& out, const MdsResult& mds, std::span<const std::string> labels = {});

}  // namespace fluvinv
