#include <omp.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fluvinv/cli_io.hpp"
#include "fluvinv/random.hpp"

using namespace fluvinv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fluvinv_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fluvinv");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// A small, fast experiment: one case, two well counts, wells only.
std::string small_config(const fs::path& out, const std::string& extra = "") {
  return R"({
  "grid": {"nx": 16, "ny": 16, "nz": 4},
  "truth": {"cases": 1},
  "wells": {"counts": [3, 6], "radius_scale": 0.1},
  "seismic": {"variants": ["wells"]},
  "inversion": {"iterations": 30, "lr": 0.05},
  "tuning": {"pivots": 2, "steps": 5, "anchors": 2},
  "metrics": {"swd": {"levels": 2, "patch": 5, "patches_per_sample": 4, "projections": 8, "repetitions": 1},
              "landscape": {"resolution": 3}, "mds_samples": 4},
  "samples": 6,)" + extra +
         R"(
  "output_dir": ")" + out.string() +
         R"("
})";
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

GridFile sample_grid() {
  GridFile g;
  g.extents = {2, 3, 4};
  g.channels = {"a", "b"};
  Rng rng(1);
  for (int c = 0; c < 2; ++c) {
    Tensor t(g.extents);
    for (double& v : t.storage()) v = static_cast<float>(rng.normal());
    g.data.push_back(t);
  }
  g.attributes["v_avg"] = 2500.0;
  return g;
}

}  // namespace

TEST_CASE("grid file: bit-exact round trip and rejected files") {
  const fs::path dir = scratch("grid");
  const GridFile g = sample_grid();
  write_grid_file(dir / "g.grid", g);
  const GridFile back = read_grid_file(dir / "g.grid");
  CHECK(back.extents == g.extents);
  CHECK(back.channels == g.channels);
  CHECK(back.attributes == g.attributes);
  for (int c = 0; c < 2; ++c) CHECK(back.data[c].storage() == g.data[c].storage());
  {
    const std::string raw = slurp(dir / "g.grid");
    const auto* u = reinterpret_cast<const unsigned char*>(raw.data());
    const std::size_t hlen = u[8] | (u[9] << 8) | (u[10] << 16) | (std::size_t(u[11]) << 24);
    CHECK(raw.size() == 12 + hlen + 4 * 48);
  }

  // Truncated payload.
  std::string bytes = slurp(dir / "g.grid");
  std::ofstream(dir / "short.grid", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  CHECK_THROWS_AS(read_grid_file(dir / "short.grid"), FormatError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic.grid", std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_grid_file(dir / "magic.grid"), FormatError);

  GridFile empty = g;
  empty.channels.clear();
  empty.data.clear();
  CHECK_THROWS_AS(write_grid_file(dir / "e.grid", empty), std::invalid_argument);

  // Model grids and ensembles.
  const GridGeometry geo;
  const ProceduralGenerator gen(ProceduralGenerator::default_weights(geo, 16));
  std::vector<ModelGrid> grids;
  for (const auto& z : sample_prior(3, 16, 4)) grids.push_back(gen.generate(z));
  write_grid_file(dir / "m.grid", to_grid_file(grids[0]));
  const ModelGrid m = to_model_grid(read_grid_file(dir / "m.grid"));
  CHECK(m.coarse_fraction.storage() == grids[0].coarse_fraction.storage());
  CHECK(m.depo_time.storage() == grids[0].depo_time.storage());
  CHECK(m.geometry == geo);
  write_grid_file(dir / "ens.grid", ensemble_file(grids));
  const auto ens = ensemble_grids(read_grid_file(dir / "ens.grid"));
  REQUIRE(ens.size() == 3);
  CHECK(ens[2].depo_time.storage() == grids[2].depo_time.storage());
}

TEST_CASE("vtk export: layout, spacing and values") {
  GridFile g;
  g.extents = {2, 2, 2};
  g.channels = {"coarse_fraction"};
  Tensor t(g.extents);
  for (std::size_t i = 0; i < 8; ++i) t[i] = 0.1 * double(i) + 1.0 / 3.0;
  g.data = {t};
  std::ostringstream os;
  write_vtk(os, g);
  const std::string s = os.str();
  CHECK(s.find("DIMENSIONS 2 2 2\n") != std::string::npos);
  CHECK(s.find("SPACING 50 50 0.5\n") != std::string::npos);
  CHECK(s.find("POINT_DATA 8\n") != std::string::npos);
  std::istringstream is(s.substr(s.find("LOOKUP_TABLE default\n") + 21));
  std::vector<double> values;
  for (double v; is >> v;) values.push_back(v);
  REQUIRE(values.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(values[i] - t[i]) <= 5e-7 * std::abs(t[i]));

  GridFile none = g;
  none.channels.clear();
  none.data.clear();
  std::ostringstream sink;
  CHECK_THROWS_AS(write_vtk(sink, none), std::invalid_argument);
}

TEST_CASE("config: defaults, canonical round trip and line-addressed errors") {
  const ExperimentConfig d = ExperimentConfig::parse("{}");
  CHECK(d.samples == 300);
  CHECK(d.to_json() == ExperimentConfig{}.to_json());
  ExperimentConfig c;
  c.seed = 42;
  c.wells.counts = {2, 5};
  c.seismic.variants = {true};
  c.inversion.method = "flow";
  c.metrics.swd.normalize = false;
  const ExperimentConfig back = ExperimentConfig::parse(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(back.hash() != d.hash());

  auto line_of_error = [](const std::string& text) {
    try {
      ExperimentConfig::parse(text);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of_error("{\n \"grid\": {\"nx\": 8},\n \"wells\": {\n  \"cuonts\": [4]\n }\n}") == 4);
  CHECK(line_of_error("{\n \"samples\": 3,\n \"grid\": {\"nx\": \"8\"}\n}") == 3);
  CHECK(line_of_error("{\n \"samples\": 3,\n \"inversion\": {\n  \"lr\": 0\n }\n}") == 4);
  CHECK(line_of_error("{\n \"samples\": 3,\n\n ]\n}") == 4);
  CHECK(line_of_error("{\"wells\": {\"counts\": [8, 4]}}") == 1);
  try {
    ExperimentConfig::parse("{\"inversion\": {\"method\": \"dream-zs\", \"chains\": 2}}");
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("need >= 3 chains") != std::string::npos);
    CHECK(e.key() == "inversion.chains");
  }
}

TEST_CASE("inversion result json round trip") {
  InversionResult r;
  r.method = "latent-opt";
  r.seed = 9;
  SampleResult s;
  s.z.values = {0.25, -1.5};
  s.final_loss = 0.125;
  s.well_mae = 0.0625;
  r.samples.push_back(s);
  SampleResult f;
  f.z.values = {0.0, 0.0};
  f.failed = true;
  f.failure = "non-finite loss";
  r.samples.push_back(f);
  r.warnings = {"w"};
  const InversionResult back = parse_inversion_result(r.to_json());
  CHECK(back.method == "latent-opt");
  CHECK(back.seed == 9);
  CHECK(back.samples[0].z == s.z);
  CHECK(back.samples[0].well_mae == 0.0625);
  CHECK(back.samples[1].failed);
  CHECK(std::isnan(back.samples[1].well_mae));
  CHECK(back.warnings == r.warnings);
}

TEST_CASE("cli: determinism, validation exits and runtime failures") {
  const fs::path a = scratch("cli_a"), b = scratch("cli_b");
  CHECK(cli({"gen-truth", "--seed", "7", "--out", a.string()}) == 0);
  const std::string grid = slurp(a / "truth/case0.grid"), manifest = slurp(a / "manifest_gen-truth.json");
  CHECK(cli({"gen-truth", "--seed", "7", "--out", a.string()}) == 0);
  CHECK(slurp(a / "truth/case0.grid") == grid);
  CHECK(slurp(a / "manifest_gen-truth.json") == manifest);
  CHECK(cli({"gen-truth", "--seed", "7", "--out", b.string()}) == 0);
  CHECK(slurp(b / "truth/case0.grid") == grid);
  CHECK(cli({"gen-truth", "--seed", "8", "--out", b.string()}) == 0);
  CHECK(slurp(a / "truth/case0.grid") != slurp(b / "truth/case0.grid"));

  CHECK(cli({"invert", "--method", "dream-zs", "--chains", "2", "--out", a.string()}) == 1);
  CHECK(cli({"no-such-command"}) == 1);
  CHECK(cli({"--help"}) == 0);
  const fs::path empty = scratch("cli_empty");
  CHECK(cli({"invert", "--out", empty.string()}) == 1);  // inputs missing
  CHECK(cli({"export-vtk", "--out", a.string(), "--in", (a / "truth/case0.grid").string()}) == 0);
  CHECK(fs::exists(a / "case0.vtk"));

  // A generator that only produces NaN makes every restart fail.
  const fs::path n = scratch("cli_nan");
  GridGeometry g;
  g.nx = 8;
  g.ny = 8;
  g.nz = 4;
  save_weights(LinearGenerator::make(g, Tensor({g.cells(), 2}), Tensor({g.cells()}, std::nan(""))), n / "nan.wts");
  const std::string cfg = R"({"grid": {"nx": 8, "ny": 8, "nz": 4}, "truth": {"cases": 1},
    "generator": {"kind": "file", "latent_dim": 2, "weights_path": ")" + (n / "nan.wts").string() + R"("},
    "wells": {"counts": [2]}, "seismic": {"variants": ["wells"]}, "inversion": {"iterations": 5},
    "metrics": {"swd": {"levels": 1, "patch": 3}}, "samples": 3, "output_dir": ")" + n.string() + R"("})";
  const fs::path cp = write_config(n, cfg);
  CHECK(cli({"gen-truth", "--config", cp.string()}) == 0);
  CHECK(cli({"place-wells", "--config", cp.string()}) == 0);
  CHECK(cli({"invert", "--config", cp.string()}) == 2);
}

TEST_CASE("workflow: every stage runs and latent optimization ignores the thread count") {
  const fs::path one = scratch("wf_one"), two = scratch("wf_two");
  const int saved = omp_get_max_threads();
  for (const auto& [dir, threads] : {std::pair{one, 1}, std::pair{two, 2}}) {
    const fs::path cp = write_config(dir, small_config(dir));
    for (const char* stage : {"gen-truth", "place-wells", "sample-prior", "invert", "tune", "metrics", "landscape"})
      CHECK_MESSAGE(cli({stage, "--config", cp.string(), "--threads", std::to_string(threads)}) == 0, stage);
  }
  omp_set_num_threads(saved);
  for (const char* f : {"invert/case0_w3_wells.json", "invert/case0_w6_wells.json", "tune/case0_w6_wells.json",
                        "metrics/errors.csv", "landscape/case0_w3_wells.csv"})
    CHECK_MESSAGE(slurp(one / f) == slurp(two / f), f);

  std::ifstream csv(one / "metrics/errors.csv");
  const auto rows = read_error_csv(csv);
  // 2 runs x (6 inverted + 2 tuned samples).
  CHECK(rows.size() == 16);
  const Workflow wf(ExperimentConfig::load(one / "config.json"), one);
  CHECK(wf.runs().size() == 2);
  CHECK(wf.tuned_weights(wf.runs()[0]).size() == 1);
}
