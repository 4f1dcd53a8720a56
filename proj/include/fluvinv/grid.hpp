#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluvinv/tensor.hpp"

namespace fluvinv {

/// Cell counts and sizes (meters) of a property grid.
struct GridGeometry {
  std::int64_t nx = 32, ny = 32, nz = 8;
  double dx = 50.0, dy = 50.0, dz = 0.5;

  std::int64_t cells() const { return nx * ny * nz; }
  Shape shape() const { return {nz, ny, nx}; }
  std::int64_t index(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
    return (iz * ny + iy) * nx + ix;
  }
  bool operator==(const GridGeometry&) const = default;
};

/// Two-channel deposit grid; both tensors are [nz, ny, nx] with values in [0, 1].
struct ModelGrid {
  GridGeometry geometry;
  Tensor coarse_fraction;
  Tensor depo_time;

  /// Throws std::domain_error when a channel leaves [0, 1] or has the wrong extents.
  void validate() const;
};

struct LatentVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const LatentVector&) const = default;
};

/// Conditioning labels, normalized to [0, 1].
struct LabelVector {
  std::vector<double> values;
  std::vector<std::string> names;

  std::size_t size() const { return values.size(); }
  bool operator==(const LabelVector&) const = default;
};

/// Names of the five conditioning labels of the fluvial simulator.
const std::vector<std::string>& standard_label_names();

/// All labels at mid-range (0.5).
LabelVector neutral_labels(std::size_t k);

/// Throws std::invalid_argument if any label is non-finite or outside [0, 1].
void validate_labels(const LabelVector& labels, std::size_t expected);

}  // namespace fluvinv
