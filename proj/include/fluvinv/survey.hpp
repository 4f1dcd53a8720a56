#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "fluvinv/grid.hpp"

namespace fluvinv {

/// Radii are in meters, measured center to center on the horizontal plane.
struct StagePolicy {
  int wells = 4;
  double exclusion_m = 1000.0;
  double ramp_m = 2000.0;
  double legacy_exclusion_m = 0.0;  // stage 2 only
  double legacy_ramp_m = 0.0;
};

struct PlacementPolicy {
  StagePolicy legacy{4, 1000.0, 2000.0, 0.0, 0.0};
  StagePolicy extra{16, 500.0, 1000.0, 250.0, 500.0};

  /// Every radius multiplied by `factor` (for grids smaller than 6.4 km).
  PlacementPolicy scaled(double factor) const;
  void validate() const;
};

struct WellLocation {
  int id = 0;
  std::int64_t ix = 0, iy = 0;
  bool operator==(const WellLocation&) const = default;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear ramp: 0 inside the exclusion radius, 1 beyond the outer radius.
double ramp_mask(double distance_m, double exclusion_m, double outer_m);

/// Sequential weighted draws for one stage. Each candidate cell's weight is
/// map * product of ramp masks of already-placed wells (`fixed` wells use the
/// legacy radii). Throws PlacementError naming stage and well when no cell
/// has positive weight.
std::vector<WellLocation> place_stage(const Tensor& weight_map, const GridGeometry& geometry,
                                      const StagePolicy& stage, std::span<const WellLocation> fixed,
                                      int stage_index, int first_id, std::uint64_t stream_key,
                                      std::uint64_t seed);

struct WellPlacement {
  std::vector<WellLocation> legacy;
  std::vector<std::vector<WellLocation>> extra;  // one list per test sample

  /// Legacy wells followed by the first `count - legacy.size()` extra wells of `sample`.
  std::vector<WellLocation> first(std::size_t sample, std::size_t count) const;
};

/// [ny, nx] vertical average of a [nz, ny, nx] tensor.
Tensor vertical_mean(const Tensor& cube);

/// Two-stage placement: stage 1 on the mean of all maps, stage 2 per map.
WellPlacement place_wells(std::span<const Tensor> weight_maps, const GridGeometry& geometry,
                          const PlacementPolicy& policy, std::uint64_t seed);

struct Well {
  int id = 0;
  std::int64_t ix = 0, iy = 0;
  std::vector<double> coarse;  // one value per layer
};

struct WellDataset {
  GridGeometry geometry;
  std::vector<Well> wells;

  std::size_t observations() const;
  /// Flat [nz, ny, nx] indices of every observation, well-major then layer.
  std::vector<std::int64_t> cell_indices() const;
  /// Observed values in cell_indices() order.
  Tensor values() const;
};

/// Exact column copies of the coarse fraction; optional Gaussian noise
/// (clamped to [0, 1]) when noise_sd > 0.
WellDataset extract_well_data(const ModelGrid& grid, std::span<const WellLocation> locations,
                              double noise_sd = 0.0, std::uint64_t seed = 0);

/// CSV with header well_id,ix,iy,iz,coarse_fraction and 9 significant digits.
void write_wells_csv(const WellDataset& wells, const std::filesystem::path& path);
WellDataset read_wells_csv(const std::filesystem::path& path, const GridGeometry& geometry);

}  // namespace fluvinv
