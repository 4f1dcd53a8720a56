#include "fluvinv/survey.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fluvinv/random.hpp"

namespace fluvinv {

PlacementPolicy PlacementPolicy::scaled(double f) const {
  PlacementPolicy p = *this;
  for (StagePolicy* s : {&p.legacy, &p.extra}) {
    s->exclusion_m *= f;
    s->ramp_m *= f;
    s->legacy_exclusion_m *= f;
    s->legacy_ramp_m *= f;
  }
  return p;
}

void PlacementPolicy::validate() const {
  auto check = [](const StagePolicy& s, const char* name, bool has_legacy) {
    if (s.wells < 0) throw std::invalid_argument(std::string(name) + ": negative well count");
    if (!(s.exclusion_m > 0.0 && s.exclusion_m < s.ramp_m))
      throw std::invalid_argument(std::string(name) + ": need 0 < exclusion < ramp radius");
    if (has_legacy && !(s.legacy_exclusion_m > 0.0 && s.legacy_exclusion_m < s.legacy_ramp_m))
      throw std::invalid_argument(std::string(name) + ": need 0 < legacy exclusion < legacy ramp radius");
  };
  check(legacy, "placement stage 1", false);
  check(extra, "placement stage 2", true);
}

double ramp_mask(double d, double excl, double outer) {
  if (d <= excl) return 0.0;
  if (d >= outer) return 1.0;
  return (d - excl) / (outer - excl);
}

std::vector<WellLocation> place_stage(const Tensor& map, const GridGeometry& g, const StagePolicy& stage,
                                      std::span<const WellLocation> fixed, int stage_index, int first_id,
                                      std::uint64_t stream_key, std::uint64_t seed) {
  if (map.shape() != Shape{g.ny, g.nx})
    throw std::invalid_argument("place_wells: weight map " + shape_str(map.shape()) + " does not match grid");
  for (double v : map.data())
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("place_wells: weight map must be finite and >= 0");
  Rng rng(seed, {stream::wells, static_cast<std::uint64_t>(stage_index), stream_key});
  std::vector<double> w(map.data().begin(), map.data().end());
  auto apply = [&](const WellLocation& loc, double excl, double outer) {
    for (std::int64_t iy = 0; iy < g.ny; ++iy)
      for (std::int64_t ix = 0; ix < g.nx; ++ix) {
        const double dx = (ix - loc.ix) * g.dx, dy = (iy - loc.iy) * g.dy;
        w[iy * g.nx + ix] *= ramp_mask(std::hypot(dx, dy), excl, outer);
      }
  };
  for (const auto& f : fixed) apply(f, stage.legacy_exclusion_m, stage.legacy_ramp_m);
  std::vector<WellLocation> placed;
  std::vector<double> cdf(w.size());
  for (int k = 0; k < stage.wells; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      total += w[i];
      cdf[i] = total;
    }
    if (!(total > 0.0))
      throw PlacementError("place_wells: stage " + std::to_string(stage_index) + " well " +
                           std::to_string(k + 1) + ": feasible region is empty");
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    // Skip zero-weight cells that share the cumulative value.
    while (it != cdf.end() && w[static_cast<std::size_t>(it - cdf.begin())] <= 0.0) ++it;
    if (it == cdf.end()) it = std::prev(cdf.end());
    while (w[static_cast<std::size_t>(it - cdf.begin())] <= 0.0) --it;
    const auto cell = static_cast<std::int64_t>(it - cdf.begin());
    const WellLocation loc{first_id + k, cell % g.nx, cell / g.nx};
    placed.push_back(loc);
    apply(loc, stage.exclusion_m, stage.ramp_m);
  }
  return placed;
}

std::vector<WellLocation> WellPlacement::first(std::size_t sample, std::size_t count) const {
  std::vector<WellLocation> out(legacy.begin(), legacy.begin() + std::min(count, legacy.size()));
  if (count > legacy.size()) {
    const auto& e = extra.at(sample);
    const std::size_t more = count - legacy.size();
    if (more > e.size())
      throw std::invalid_argument("wells: requested " + std::to_string(count) + " wells, only " +
                                  std::to_string(legacy.size() + e.size()) + " placed");
    out.insert(out.end(), e.begin(), e.begin() + static_cast<std::ptrdiff_t>(more));
  }
  return out;
}

Tensor vertical_mean(const Tensor& cube) {
  if (cube.rank() != 3) throw ShapeError("vertical_mean: expected [nz,ny,nx], got " + shape_str(cube.shape()));
  const std::int64_t nz = cube.extent(0), ny = cube.extent(1), nx = cube.extent(2);
  Tensor out({ny, nx});
  for (std::int64_t j = 0; j < ny * nx; ++j) {
    double s = 0.0;
    for (std::int64_t z = 0; z < nz; ++z) s += cube[z * ny * nx + j];
    out[j] = s / static_cast<double>(nz);
  }
  return out;
}

WellPlacement place_wells(std::span<const Tensor> maps, const GridGeometry& g, const PlacementPolicy& policy,
                          std::uint64_t seed) {
  policy.validate();
  if (maps.empty()) throw std::invalid_argument("place_wells: need at least one weight map");
  Tensor joint({g.ny, g.nx}, 0.0);
  for (const Tensor& m : maps) {
    if (m.shape() != joint.shape())
      throw std::invalid_argument("place_wells: weight map " + shape_str(m.shape()) + " does not match grid");
    for (std::size_t i = 0; i < joint.size(); ++i) joint[i] += m[i] / static_cast<double>(maps.size());
  }
  WellPlacement p;
  p.legacy = place_stage(joint, g, policy.legacy, {}, 1, 1, 0, seed);
  for (std::size_t s = 0; s < maps.size(); ++s)
    p.extra.push_back(place_stage(maps[s], g, policy.extra, p.legacy, 2, policy.legacy.wells + 1, s, seed));
  return p;
}

std::size_t WellDataset::observations() const {
  std::size_t n = 0;
  for (const auto& w : wells) n += w.coarse.size();
  return n;
}

std::vector<std::int64_t> WellDataset::cell_indices() const {
  std::vector<std::int64_t> idx;
  idx.reserve(observations());
  for (const auto& w : wells)
    for (std::int64_t z = 0; z < static_cast<std::int64_t>(w.coarse.size()); ++z)
      idx.push_back(geometry.index(w.ix, w.iy, z));
  return idx;
}

Tensor WellDataset::values() const {
  std::vector<double> v;
  v.reserve(observations());
  for (const auto& w : wells) v.insert(v.end(), w.coarse.begin(), w.coarse.end());
  if (v.empty()) throw std::invalid_argument("wells: dataset is empty");
  return Tensor::vector(std::move(v));
}

WellDataset extract_well_data(const ModelGrid& grid, std::span<const WellLocation> locations, double noise_sd,
                              std::uint64_t seed) {
  const GridGeometry& g = grid.geometry;
  WellDataset ds{g, {}};
  for (const auto& loc : locations) {
    if (loc.ix < 0 || loc.ix >= g.nx || loc.iy < 0 || loc.iy >= g.ny)
      throw std::out_of_range("extract_well_data: well " + std::to_string(loc.id) + " at (" +
                              std::to_string(loc.ix) + ", " + std::to_string(loc.iy) + ") is outside the grid");
    Well w{loc.id, loc.ix, loc.iy, {}};
    Rng rng(seed, {stream::noise, static_cast<std::uint64_t>(loc.id)});
    for (std::int64_t z = 0; z < g.nz; ++z) {
      double v = grid.coarse_fraction[g.index(loc.ix, loc.iy, z)];
      if (noise_sd > 0.0) v = std::clamp(v + noise_sd * rng.normal(), 0.0, 1.0);
      w.coarse.push_back(v);
    }
    ds.wells.push_back(std::move(w));
  }
  return ds;
}

void write_wells_csv(const WellDataset& wells, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "well_id,ix,iy,iz,coarse_fraction\n";
  char buf[64];
  for (const auto& w : wells.wells)
    for (std::size_t z = 0; z < w.coarse.size(); ++z) {
      std::snprintf(buf, sizeof buf, "%.9g", w.coarse[z]);
      f << w.id << ',' << w.ix << ',' << w.iy << ',' << z << ',' << buf << '\n';
    }
}

WellDataset read_wells_csv(const std::filesystem::path& path, const GridGeometry& geometry) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "well_id,ix,iy,iz,coarse_fraction")
    throw std::runtime_error(path.filename().string() + ": unexpected header '" + line + "'");
  WellDataset ds{geometry, {}};
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tok[5];
    for (auto& t : tok)
      if (!std::getline(is, t, ',')) throw std::runtime_error(path.filename().string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    const int id = std::stoi(tok[0]);
    const std::int64_t ix = std::stoll(tok[1]), iy = std::stoll(tok[2]), iz = std::stoll(tok[3]);
    if (ds.wells.empty() || ds.wells.back().id != id) ds.wells.push_back(Well{id, ix, iy, {}});
    Well& w = ds.wells.back();
    if (w.ix != ix || w.iy != iy || iz != static_cast<std::int64_t>(w.coarse.size()))
      throw std::runtime_error(path.filename().string() + ":" + std::to_string(lineno) + ": rows of well " +
                               std::to_string(id) + " are not contiguous layers");
    w.coarse.push_back(std::stod(tok[4]));
  }
  return ds;
}

}  // namespace fluvinv
