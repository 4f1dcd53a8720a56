#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "fluvinv/cli_io.hpp"
#include "json.hpp"

namespace fluvinv {

using nlohmann::json;

namespace {

std::string compose(const std::string& detail, int line, const std::string& key) {
  std::string s = line > 0 ? "config line " + std::to_string(line) + ": " : "config: ";
  if (!key.empty()) s += key + ": ";
  return s + detail;
}

// Line of the last key of a dotted path, found by walking the raw text.
int line_of(const std::string& text, const std::string& dotted) {
  std::size_t pos = 0;
  bool found = false;
  std::stringstream ss(dotted);
  for (std::string key; std::getline(ss, key, '.');) {
    const std::string pat = "\"" + key + "\"";
    for (std::size_t p = text.find(pat, pos); p != std::string::npos; p = text.find(pat, p + 1)) {
      std::size_t q = p + pat.size();
      while (q < text.size() && std::isspace(static_cast<unsigned char>(text[q]))) ++q;
      if (q < text.size() && text[q] == ':') {
        pos = p;
        found = true;
        break;
      }
    }
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Reader {
 public:
  Reader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("expected an object", 0, prefix_.empty() ? "" : prefix_.substr(0, prefix_.size() - 1));
  }

  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "expected an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  /// Nested section; an absent key yields an empty object.
  Reader child(const char* key) {
    static const json empty = json::object();
    const json* v = find(key);
    if (v && !v->is_object()) fail(key, "expected an object");
    return Reader(v ? *v : empty, prefix_ + key + ".");
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key", 0, prefix_ + item.key());
  }

  [[noreturn]] void fail(const char* key, const std::string& detail) const {
    throw ConfigError(detail, 0, prefix_ + key);
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

[[noreturn]] void bad(const std::string& key, const std::string& detail) { throw ConfigError(detail, 0, key); }

const char* precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

}  // namespace

ConfigError::ConfigError(const std::string& message, int line, std::string key)
    : std::invalid_argument(compose(message, line, key)), line_(line), key_(std::move(key)), detail_(message) {}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // Messages read "... at line L, column C: ...".
    std::smatch m;
    const std::string what = e.what();
    int line = 0;
    if (std::regex_search(what, m, std::regex("line ([0-9]+)"))) line = std::stoi(m[1]);
    const auto cut = what.find("] ");
    throw ConfigError("malformed JSON: " + (cut == std::string::npos ? what : what.substr(cut + 2)), line);
  }
  ExperimentConfig c;
  try {
    Reader r(root, "");
    {
      Reader g = r.child("grid");
      g.get("nx", c.grid.nx);
      g.get("ny", c.grid.ny);
      g.get("nz", c.grid.nz);
      g.get("dx", c.grid.dx);
      g.get("dy", c.grid.dy);
      g.get("dz", c.grid.dz);
      g.finish();
    }
    {
      Reader g = r.child("generator");
      g.get("kind", c.generator.kind);
      g.get("latent_dim", c.generator.latent_dim);
      g.get("base_channels", c.generator.base_channels);
      g.get("residual_blocks", c.generator.residual_blocks);
      g.get("init_seed", c.generator.init_seed);
      g.get("weights_path", c.generator.weights_path);
      g.finish();
    }
    {
      Reader t = r.child("truth");
      t.get("cases", c.truth.cases);
      t.get("latent_dim", c.truth.latent_dim);
      t.finish();
    }
    {
      Reader w = r.child("wells");
      w.get("counts", c.wells.counts);
      w.get("radius_scale", c.wells.radius_scale);
      w.get("noise_sd", c.wells.noise_sd);
      w.finish();
    }
    {
      Reader s = r.child("seismic");
      std::vector<std::string> variants;
      s.get("variants", variants);
      if (!variants.empty()) {
        c.seismic.variants.clear();
        for (const auto& v : variants) {
          if (v == "wells") c.seismic.variants.push_back(false);
          else if (v == "wells+seismic") c.seismic.variants.push_back(true);
          else s.fail("variants", "unknown variant '" + v + "' (expected \"wells\" or \"wells+seismic\")");
        }
      }
      PsfConfig& p = c.seismic.forward.psf;
      s.get("peak_hz", p.peak_hz);
      s.get("incident_deg", p.incident_deg);
      s.get("illumination_deg", p.illumination_deg);
      s.get("burden_m", c.seismic.forward.burden.total_m);
      s.get("burden_fraction", c.seismic.forward.burden.fraction);
      s.finish();
    }
    {
      Reader v = r.child("inversion");
      auto& inv = c.inversion;
      v.get("method", inv.method);
      v.get("iterations", inv.iterations);
      v.get("lr", inv.lr);
      v.get("latent_penalty", inv.latent_penalty);
      v.get("ball_radius", inv.ball_radius);
      std::string prec = precision_name(inv.precision);
      v.get("precision", prec);
      if (prec == "f32") inv.precision = Precision::f32;
      else if (prec == "f64") inv.precision = Precision::f64;
      else v.fail("precision", "expected \"f32\" or \"f64\"");
      v.get("hidden", inv.hidden);
      v.get("batch", inv.batch);
      v.get("flow_layers", inv.flow_layers);
      v.get("flow_hidden", inv.flow_hidden);
      v.get("well_sigma", inv.well_sigma);
      v.get("seismic_sigma", inv.seismic_sigma);
      v.get("chains", inv.chains);
      v.get("generations", inv.generations);
      v.get("burn_in", inv.burn_in);
      v.finish();
    }
    {
      Reader t = r.child("tuning");
      t.get("pivots", c.tuning.pivots);
      t.get("steps", c.tuning.steps);
      t.get("lr", c.tuning.lr);
      t.get("locality_weight", c.tuning.locality_weight);
      t.get("anchors", c.tuning.anchors);
      t.get("per_pivot", c.tuning.per_pivot);
      t.finish();
    }
    {
      Reader m = r.child("metrics");
      {
        Reader s = m.child("swd");
        SwdConfig& w = c.metrics.swd;
        s.get("levels", w.levels);
        s.get("patch", w.patch);
        s.get("patches_per_sample", w.patches_per_sample);
        s.get("projections", w.projections);
        s.get("repetitions", w.repetitions);
        s.get("normalize", w.normalize);
        s.get("use_depo", w.use_depo);
        s.finish();
      }
      {
        Reader l = m.child("landscape");
        l.get("lo", c.metrics.landscape.lo);
        l.get("hi", c.metrics.landscape.hi);
        l.get("resolution", c.metrics.landscape.resolution);
        l.finish();
      }
      m.get("mds_samples", c.metrics.mds_samples);
      m.finish();
    }
    r.get("samples", c.samples);
    r.get("output_dir", c.output_dir);
    r.get("seed", c.seed);
    r.finish();
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.detail(), e.key().empty() ? 0 : line_of(text, e.key()), e.key());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  if (grid.nx < 1 || grid.ny < 1 || grid.nz < 1) bad("grid", "extents must be >= 1");
  if (!(grid.dx > 0 && grid.dy > 0 && grid.dz > 0)) bad("grid", "cell sizes must be positive");
  if (generator.kind != "procedural" && generator.kind != "neural" && generator.kind != "file")
    bad("generator.kind", "expected \"procedural\", \"neural\" or \"file\", got \"" + generator.kind + "\"");
  if (generator.kind == "file" && generator.weights_path.empty())
    bad("generator.weights_path", "required when kind is \"file\"");
  if (generator.latent_dim < 1) bad("generator.latent_dim", "must be >= 1");
  if (generator.base_channels < 1) bad("generator.base_channels", "must be >= 1");
  if (generator.residual_blocks < 0) bad("generator.residual_blocks", "must be >= 0");
  if (truth.cases < 1) bad("truth.cases", "must be >= 1");
  if (truth.latent_dim < 1) bad("truth.latent_dim", "must be >= 1");
  if (wells.counts.empty()) bad("wells.counts", "must not be empty");
  if (wells.counts.front() < 1) bad("wells.counts", "well counts must be >= 1");
  for (std::size_t i = 1; i < wells.counts.size(); ++i)
    if (wells.counts[i] <= wells.counts[i - 1]) bad("wells.counts", "must be strictly ascending");
  if (wells.counts.back() > grid.nx * grid.ny) bad("wells.counts", "more wells than grid columns");
  if (!(wells.radius_scale > 0)) bad("wells.radius_scale", "must be positive");
  if (!(wells.noise_sd >= 0) || !std::isfinite(wells.noise_sd)) bad("wells.noise_sd", "must be >= 0");
  if (seismic.variants.empty()) bad("seismic.variants", "must not be empty");
  if (seismic.variants.size() == 2 && seismic.variants[0] == seismic.variants[1])
    bad("seismic.variants", "duplicate variant");
  if (seismic.variants.size() > 2) bad("seismic.variants", "at most two variants");
  try {
    seismic.forward.psf.validate();
  } catch (const std::invalid_argument& e) {
    bad("seismic", e.what());
  }
  if (!(seismic.forward.burden.total_m >= 0)) bad("seismic.burden_m", "must be >= 0");
  if (!(seismic.forward.burden.fraction >= 0 && seismic.forward.burden.fraction <= 1))
    bad("seismic.burden_fraction", "must be in [0, 1]");
  const auto& m = inversion.method;
  if (m != "latent-opt" && m != "inference-net" && m != "flow" && m != "dream-zs")
    bad("inversion.method", "expected latent-opt, inference-net, flow or dream-zs, got \"" + m + "\"");
  if (inversion.iterations < 0) bad("inversion.iterations", "must be >= 0");
  if (!(inversion.lr > 0)) bad("inversion.lr", "must be positive");
  if (!(inversion.latent_penalty >= 0)) bad("inversion.latent_penalty", "must be >= 0");
  if (!(inversion.ball_radius >= 0)) bad("inversion.ball_radius", "must be >= 0");
  for (int h : inversion.hidden)
    if (h < 1) bad("inversion.hidden", "widths must be >= 1");
  if (inversion.batch < 1) bad("inversion.batch", "must be >= 1");
  if (inversion.flow_layers < 0) bad("inversion.flow_layers", "must be >= 0");
  if (inversion.flow_hidden < 1) bad("inversion.flow_hidden", "must be >= 1");
  if (!(inversion.well_sigma > 0)) bad("inversion.well_sigma", "must be positive");
  if (!(inversion.seismic_sigma > 0)) bad("inversion.seismic_sigma", "must be positive");
  if (m == "dream-zs") {
    if (inversion.chains < 3) bad("inversion.chains", "need >= 3 chains (got " + std::to_string(inversion.chains) + ")");
    if (inversion.burn_in < 0 || inversion.generations <= inversion.burn_in)
      bad("inversion.generations", "must exceed burn_in");
  }
  if (tuning.pivots < 1) bad("tuning.pivots", "must be >= 1");
  if (tuning.steps < 0) bad("tuning.steps", "must be >= 0");
  if (!(tuning.lr > 0)) bad("tuning.lr", "must be positive");
  if (!(tuning.locality_weight >= 0)) bad("tuning.locality_weight", "must be >= 0");
  if (tuning.anchors < 0) bad("tuning.anchors", "must be >= 0");
  try {
    metrics.swd.validate();
  } catch (const std::invalid_argument& e) {
    bad("metrics.swd", e.what());
  }
  if (metrics.swd.levels > max_pyramid_levels(grid.ny, grid.nx, metrics.swd.patch))
    bad("metrics.swd.levels", "at most " + std::to_string(max_pyramid_levels(grid.ny, grid.nx, metrics.swd.patch)) +
                                  " levels fit this grid");
  if (metrics.landscape.resolution < 1) bad("metrics.landscape.resolution", "must be >= 1");
  if (!(metrics.landscape.hi >= metrics.landscape.lo)) bad("metrics.landscape", "hi must be >= lo");
  if (metrics.mds_samples < 2) bad("metrics.mds_samples", "must be >= 2");
  if (samples < 1) bad("samples", "must be >= 1");
  if (output_dir.empty()) bad("output_dir", "must not be empty");
}

std::string ExperimentConfig::to_json() const {
  json variants = json::array();
  for (bool v : seismic.variants) variants.push_back(v ? "wells+seismic" : "wells");
  const auto& s = metrics.swd;
  const json j = {
      {"grid", {{"nx", grid.nx}, {"ny", grid.ny}, {"nz", grid.nz}, {"dx", grid.dx}, {"dy", grid.dy}, {"dz", grid.dz}}},
      {"generator",
       {{"kind", generator.kind},
        {"latent_dim", generator.latent_dim},
        {"base_channels", generator.base_channels},
        {"residual_blocks", generator.residual_blocks},
        {"init_seed", generator.init_seed},
        {"weights_path", generator.weights_path}}},
      {"truth", {{"cases", truth.cases}, {"latent_dim", truth.latent_dim}}},
      {"wells", {{"counts", wells.counts}, {"radius_scale", wells.radius_scale}, {"noise_sd", wells.noise_sd}}},
      {"seismic",
       {{"variants", variants},
        {"peak_hz", seismic.forward.psf.peak_hz},
        {"incident_deg", seismic.forward.psf.incident_deg},
        {"illumination_deg", seismic.forward.psf.illumination_deg},
        {"burden_m", seismic.forward.burden.total_m},
        {"burden_fraction", seismic.forward.burden.fraction}}},
      {"inversion",
       {{"method", inversion.method},
        {"iterations", inversion.iterations},
        {"lr", inversion.lr},
        {"latent_penalty", inversion.latent_penalty},
        {"ball_radius", inversion.ball_radius},
        {"precision", precision_name(inversion.precision)},
        {"hidden", inversion.hidden},
        {"batch", inversion.batch},
        {"flow_layers", inversion.flow_layers},
        {"flow_hidden", inversion.flow_hidden},
        {"well_sigma", inversion.well_sigma},
        {"seismic_sigma", inversion.seismic_sigma},
        {"chains", inversion.chains},
        {"generations", inversion.generations},
        {"burn_in", inversion.burn_in}}},
      {"tuning",
       {{"pivots", tuning.pivots},
        {"steps", tuning.steps},
        {"lr", tuning.lr},
        {"locality_weight", tuning.locality_weight},
        {"anchors", tuning.anchors},
        {"per_pivot", tuning.per_pivot}}},
      {"metrics",
       {{"swd",
         {{"levels", s.levels},
          {"patch", s.patch},
          {"patches_per_sample", s.patches_per_sample},
          {"projections", s.projections},
          {"repetitions", s.repetitions},
          {"normalize", s.normalize},
          {"use_depo", s.use_depo}}},
        {"landscape",
         {{"lo", metrics.landscape.lo}, {"hi", metrics.landscape.hi}, {"resolution", metrics.landscape.resolution}}},
        {"mds_samples", metrics.mds_samples}}},
      {"samples", samples},
      {"output_dir", output_dir},
      {"seed", seed}};
  return j.dump(2);
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(to_json()); }

}  // namespace fluvinv
