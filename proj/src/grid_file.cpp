#include <cstdio>
#include <ostream>

#include "fluvinv/cli_io.hpp"
#include "json.hpp"

namespace fluvinv {

using nlohmann::json;

namespace {
constexpr int kGridVersion = 1;
}

void GridFile::validate() const {
  if (extents.size() != 3 || extents[0] < 1 || extents[1] < 1 || extents[2] < 1)
    throw std::invalid_argument("grid file: extents must be three positive values, got " + shape_str(extents));
  if (channels.empty()) throw std::invalid_argument("grid file: no channels");
  if (channels.size() != data.size())
    throw std::invalid_argument("grid file: " + std::to_string(channels.size()) + " channel names for " +
                                std::to_string(data.size()) + " tensors");
  for (std::size_t c = 0; c < data.size(); ++c)
    if (data[c].shape() != extents)
      throw std::invalid_argument("grid file: channel '" + channels[c] + "' has extents " +
                                  shape_str(data[c].shape()) + ", expected " + shape_str(extents));
  if (!(dx > 0 && dy > 0 && dz > 0)) throw std::invalid_argument("grid file: cell sizes must be positive");
}

void write_grid_file(const std::filesystem::path& path, const GridFile& grid) {
  grid.validate();
  json header = {{"format", "fluvinv-grid"},
                 {"version", kGridVersion},
                 {"extents", grid.extents},
                 {"cell_size", {grid.dx, grid.dy, grid.dz}},
                 {"channels", grid.channels},
                 {"dtype", "float32"},
                 {"order", "channel,z,y,x"}};
  if (!grid.attributes.empty()) header["attributes"] = grid.attributes;
  std::vector<double> payload;
  payload.reserve(grid.data.size() * grid.data[0].size());
  for (const auto& t : grid.data) payload.insert(payload.end(), t.data().begin(), t.data().end());
  write_blob(path, kGridMagic, header.dump(), payload);
}

GridFile read_grid_file(const std::filesystem::path& path) {
  const Blob blob = read_blob(path, kGridMagic);
  const std::string name = path.filename().string();
  GridFile g;
  try {
    const json h = json::parse(blob.header);
    if (h.value("version", -1) != kGridVersion)
      throw FormatError(name + ": unsupported grid version " + h.value("version", json(-1)).dump());
    if (h.value("dtype", std::string()) != "float32") throw FormatError(name + ": unsupported dtype");
    g.extents = h.at("extents").get<Shape>();
    const auto cs = h.at("cell_size").get<std::vector<double>>();
    if (cs.size() != 3) throw FormatError(name + ": cell_size needs 3 values");
    g.dx = cs[0];
    g.dy = cs[1];
    g.dz = cs[2];
    g.channels = h.at("channels").get<std::vector<std::string>>();
    if (h.contains("attributes")) g.attributes = h.at("attributes").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw FormatError(name + ": malformed header: " + e.what());
  }
  if (g.extents.size() != 3) throw FormatError(name + ": extents need 3 values");
  if (g.channels.empty()) throw FormatError(name + ": no channels");
  std::size_t cells = 1;
  for (auto e : g.extents) {
    if (e < 1) throw FormatError(name + ": non-positive extent");
    cells *= static_cast<std::size_t>(e);
  }
  if (blob.payload.size() != cells * g.channels.size())
    throw FormatError(name + ": payload holds " + std::to_string(blob.payload.size()) + " values, header implies " +
                      std::to_string(cells * g.channels.size()));
  for (std::size_t c = 0; c < g.channels.size(); ++c) {
    Tensor t(g.extents);
    for (std::size_t i = 0; i < cells; ++i) t[i] = blob.payload[c * cells + i];
    g.data.push_back(std::move(t));
  }
  return g;
}

GridFile to_grid_file(const ModelGrid& grid) {
  const GridGeometry& geo = grid.geometry;
  return {geo.shape(), geo.dx, geo.dy, geo.dz, {"coarse_fraction", "depo_time"},
          {grid.coarse_fraction, grid.depo_time}, {}};
}

namespace {

GridGeometry geometry_of(const GridFile& f) {
  GridGeometry g;
  g.nz = f.extents[0];
  g.ny = f.extents[1];
  g.nx = f.extents[2];
  g.dx = f.dx;
  g.dy = f.dy;
  g.dz = f.dz;
  return g;
}

std::size_t channel_index(const GridFile& f, const std::string& name) {
  for (std::size_t c = 0; c < f.channels.size(); ++c)
    if (f.channels[c] == name) return c;
  throw std::invalid_argument("grid file: missing channel '" + name + "'");
}

}  // namespace

ModelGrid to_model_grid(const GridFile& file) {
  file.validate();
  return {geometry_of(file), file.data[channel_index(file, "coarse_fraction")],
          file.data[channel_index(file, "depo_time")]};
}

GridFile ensemble_file(std::span<const ModelGrid> samples) {
  if (samples.empty()) throw std::invalid_argument("ensemble file: no samples");
  GridFile f = to_grid_file(samples[0]);
  f.channels.clear();
  f.data.clear();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].geometry.shape() != f.extents)
      throw std::invalid_argument("ensemble file: sample " + std::to_string(i) + " differs in extents");
    f.channels.push_back("coarse_fraction/" + std::to_string(i));
    f.data.push_back(samples[i].coarse_fraction);
    f.channels.push_back("depo_time/" + std::to_string(i));
    f.data.push_back(samples[i].depo_time);
  }
  return f;
}

std::vector<ModelGrid> ensemble_grids(const GridFile& file) {
  file.validate();
  std::vector<ModelGrid> out;
  const GridGeometry g = geometry_of(file);
  for (std::size_t i = 0;; ++i) {
    const std::string suffix = "/" + std::to_string(i);
    auto find = [&](const std::string& n) -> const Tensor* {
      for (std::size_t c = 0; c < file.channels.size(); ++c)
        if (file.channels[c] == n + suffix) return &file.data[c];
      return nullptr;
    };
    const Tensor* c = find("coarse_fraction");
    const Tensor* d = find("depo_time");
    if (!c || !d) break;
    out.push_back({g, *c, *d});
  }
  if (out.empty()) throw std::invalid_argument("grid file: not an ensemble");
  return out;
}

GridFile seismic_file(const SeismicCube& cube) {
  const GridGeometry& g = cube.geometry;
  return {cube.amplitudes.shape(), g.dx, g.dy, g.dz, {"amplitude"}, {cube.amplitudes},
          {{"v_avg", cube.psf.v_avg}, {"source_nz", double(g.nz)}}};
}

void write_vtk(std::ostream& out, const GridFile& grid) {
  grid.validate();
  const auto nz = grid.extents[0], ny = grid.extents[1], nx = grid.extents[2];
  char buf[64];
  out << "# vtk DataFile Version 3.0\nfluvinv grid\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << nx << ' ' << ny << ' ' << nz << '\n';
  out << "ORIGIN 0 0 0\n";
  std::snprintf(buf, sizeof buf, "SPACING %g %g %g\n", grid.dx, grid.dy, grid.dz);
  out << buf;
  out << "POINT_DATA " << nx * ny * nz << '\n';
  for (std::size_t c = 0; c < grid.channels.size(); ++c) {
    std::string name = grid.channels[c];
    for (char& ch : name)
      if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
    out << "SCALARS " << name << " float 1\nLOOKUP_TABLE default\n";
    const auto& d = grid.data[c].data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.7g", d[i]);
      out << buf << ((i + 1) % static_cast<std::size_t>(nx) == 0 ? '\n' : ' ');
    }
  }
}

}  // namespace fluvinv
