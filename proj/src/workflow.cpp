#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fluvinv/cli_io.hpp"
#include "fluvinv/random.hpp"
#include "json.hpp"

namespace fluvinv {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

// Inputs produced by an earlier stage; missing ones are a usage error.
void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw std::invalid_argument("missing input " + p.string() + "; run '" + producer + "' first");
}

std::uint64_t run_seed(std::uint64_t seed, const std::string& name) {
  return fnv1a(name) ^ (seed * 0x9E3779B97F4A7C15ull);
}

DataLossConfig loss_config(const ExperimentConfig& c, const RunKey& run) {
  DataLossConfig l;
  l.use_wells = true;
  l.use_seismic = run.seismic;
  l.latent_penalty = c.inversion.latent_penalty;
  return l;
}

std::vector<std::size_t> usable(const InversionResult& r) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    if (!r.samples[i].failed) idx.push_back(i);
  return idx;
}

std::vector<ModelGrid> generate_all(const Generator& gen, const InversionResult& r, const std::vector<std::size_t>& idx,
                                    Precision precision) {
  std::vector<ModelGrid> out(idx.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const SampleResult& s = r.samples[idx[k]];
    out[k] = gen.generate(s.z, s.labels.size() ? s.labels : gen.default_labels(), precision);
  }
  return out;
}

}  // namespace

std::string RunKey::name() const {
  return "case" + std::to_string(case_index) + "_w" + std::to_string(wells) + (seismic ? "_seismic" : "_wells");
}

InversionResult parse_inversion_result(const std::string& text) {
  InversionResult r;
  try {
    const json j = json::parse(text);
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const json& e : j.at("samples")) {
      SampleResult s;
      s.z.values = e.at("z").get<std::vector<double>>();
      if (e.contains("labels")) {
        s.labels.values = e.at("labels").get<std::vector<double>>();
        s.labels.names = e.value("label_names", std::vector<std::string>{});
      }
      auto num = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
      s.final_loss = num(e.at("final_loss"));
      s.well_mae = num(e.at("well_mae"));
      s.failed = e.at("failed").get<bool>();
      s.failure = e.value("failure", std::string());
      s.history = e.value("history", std::vector<double>{});
      r.samples.push_back(std::move(s));
    }
    r.training_history = j.value("training_history", std::vector<double>{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.wall_seconds = j.value("wall_seconds", 0.0);
  } catch (const json::exception& e) {
    throw FormatError(std::string("inversion result: ") + e.what());
  }
  return r;
}

Workflow::Workflow(ExperimentConfig config, fs::path out_dir) : config_(std::move(config)), out_(std::move(out_dir)) {
  config_.validate();
}

std::vector<RunKey> Workflow::runs() const {
  std::vector<RunKey> r;
  for (int c = 0; c < config_.truth.cases; ++c)
    for (int w : config_.wells.counts)
      for (bool s : config_.seismic.variants) r.push_back({c, w, s});
  return r;
}

const Generator& Workflow::generator() const {
  if (!gen_) {
    const auto& g = config_.generator;
    if (g.kind == "procedural") {
      gen_ = std::make_unique<ProceduralGenerator>(ProceduralGenerator::default_weights(config_.grid, g.latent_dim));
    } else if (g.kind == "neural") {
      ArchitectureDescriptor a;
      a.kind = "neural";
      a.latent_dim = g.latent_dim;
      a.base_channels = g.base_channels;
      a.residual_blocks = g.residual_blocks;
      a.output = config_.grid;
      gen_ = std::make_unique<NeuralGenerator>(NeuralGenerator::initialize(a, g.init_seed));
    } else {
      gen_ = make_generator(load_weights(g.weights_path));
      if (gen_->geometry().shape() != config_.grid.shape())
        throw std::invalid_argument("generator weights produce " + shape_str(gen_->geometry().shape()) +
                                    " grids but the config grid is " + shape_str(config_.grid.shape()));
    }
  }
  return *gen_;
}

ModelGrid Workflow::truth(int c) const {
  const fs::path p = out_ / "truth" / ("case" + std::to_string(c) + ".grid");
  require(p, "gen-truth");
  return to_model_grid(read_grid_file(p));
}

Observations Workflow::observations(const RunKey& run) const {
  Observations obs;
  const fs::path wp = out_ / "wells" / ("case" + std::to_string(run.case_index) + "_w" + std::to_string(run.wells) + ".csv");
  require(wp, "place-wells");
  obs.wells = read_wells_csv(wp, config_.grid);
  obs.seismic_config = config_.seismic.forward;
  if (run.seismic) {
    const fs::path sp = out_ / "seismic" / ("case" + std::to_string(run.case_index) + ".grid");
    require(sp, "forward-seismic");
    const GridFile f = read_grid_file(sp);
    SeismicCube cube;
    cube.geometry = config_.grid;
    cube.amplitudes = f.data.at(0);
    PsfConfig pc = config_.seismic.forward.psf;
    pc.v_avg = f.attributes.at("v_avg");
    cube.psf = build_psf(pc, config_.grid.dz, config_.grid.dx, config_.grid.dy);
    obs.seismic = std::move(cube);
  }
  return obs;
}

InversionResult Workflow::inversion(const RunKey& run) const {
  const fs::path p = out_ / "invert" / (run.name() + ".json");
  require(p, "invert");
  return parse_inversion_result(read_text(p));
}

InversionResult Workflow::tuned(const RunKey& run) const {
  const fs::path p = out_ / "tune" / (run.name() + ".json");
  require(p, "tune");
  return parse_inversion_result(read_text(p));
}

std::vector<GeneratorWeights> Workflow::tuned_weights(const RunKey& run) const {
  std::vector<GeneratorWeights> w;
  for (int k = 0;; ++k) {
    const fs::path p = out_ / "tune" / (run.name() + "_" + std::to_string(k) + ".wts");
    if (!fs::exists(p)) break;
    w.push_back(load_weights(p));
  }
  if (w.empty()) require(out_ / "tune" / (run.name() + "_0.wts"), "tune");
  return w;
}

std::vector<std::string> Workflow::gen_truth() {
  const ProceduralGenerator gen(ProceduralGenerator::default_weights(config_.grid, config_.truth.latent_dim));
  std::vector<std::string> files;
  json latents = json::array();
  for (int c = 0; c < config_.truth.cases; ++c) {
    Rng rng(config_.seed, {stream::truth, static_cast<std::uint64_t>(c)});
    const LatentVector z{rng.normal_vector(static_cast<std::size_t>(config_.truth.latent_dim))};
    const std::string rel = "truth/case" + std::to_string(c) + ".grid";
    fs::create_directories(out_ / "truth");
    write_grid_file(out_ / rel, to_grid_file(gen.generate(z)));
    files.push_back(rel);
    latents.push_back(z.values);
  }
  write_text(out_ / "truth/latents.json", json{{"latents", latents}}.dump(1));
  files.push_back("truth/latents.json");
  return files;
}

std::vector<std::string> Workflow::place_wells_stage() {
  std::vector<ModelGrid> truths;
  std::vector<Tensor> maps;
  for (int c = 0; c < config_.truth.cases; ++c) {
    truths.push_back(truth(c));
    maps.push_back(vertical_mean(truths.back().coarse_fraction));
  }
  PlacementPolicy policy = PlacementPolicy{}.scaled(config_.wells.radius_scale);
  policy.legacy.wells = config_.wells.counts.front();
  policy.extra.wells = config_.wells.counts.back() - config_.wells.counts.front();
  const WellPlacement placement = place_wells(maps, config_.grid, policy, config_.seed);
  std::vector<std::string> files;
  fs::create_directories(out_ / "wells");
  for (int c = 0; c < config_.truth.cases; ++c)
    for (int n : config_.wells.counts) {
      const auto locs = placement.first(static_cast<std::size_t>(c), static_cast<std::size_t>(n));
      const WellDataset wells =
          extract_well_data(truths[c], locs, config_.wells.noise_sd, run_seed(config_.seed, "wells" + std::to_string(c)));
      const std::string rel = "wells/case" + std::to_string(c) + "_w" + std::to_string(n) + ".csv";
      write_wells_csv(wells, out_ / rel);
      files.push_back(rel);
    }
  return files;
}

std::vector<std::string> Workflow::forward_seismic() {
  std::vector<std::string> files;
  fs::create_directories(out_ / "seismic");
  for (int c = 0; c < config_.truth.cases; ++c) {
    const SeismicCube cube = seismic_forward(truth(c), config_.seismic.forward);
    const std::string rel = "seismic/case" + std::to_string(c) + ".grid";
    write_grid_file(out_ / rel, seismic_file(cube));
    files.push_back(rel);
  }
  return files;
}

std::vector<std::string> Workflow::sample_prior_stage() {
  const Generator& gen = generator();
  const auto zs = sample_prior(config_.samples, gen.latent_dim(), run_seed(config_.seed, "prior"));
  std::vector<ModelGrid> grids(zs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t i = 0; i < zs.size(); ++i)
    grids[i] = gen.generate(zs[i], gen.default_labels(), config_.inversion.precision);
  fs::create_directories(out_ / "prior");
  write_grid_file(out_ / "prior/prior.grid", ensemble_file(grids));
  json lat = json::array();
  for (const auto& z : zs) lat.push_back(z.values);
  write_text(out_ / "prior/latents.json", json{{"latents", lat}}.dump(1));
  return {"prior/prior.grid", "prior/latents.json"};
}

std::vector<std::string> Workflow::invert() {
  const Generator& gen = generator();
  const auto& inv = config_.inversion;
  std::vector<std::string> files;
  fs::create_directories(out_ / "invert");
  for (const RunKey& run : runs()) {
    const Observations obs = observations(run);
    const std::uint64_t seed = run_seed(config_.seed, run.name());
    InversionResult result;
    if (inv.method == "latent-opt") {
      LatentOptConfig c;
      c.restarts = config_.samples;
      c.iterations = inv.iterations;
      c.lr = inv.lr;
      c.ball_radius = inv.ball_radius;
      c.loss = loss_config(config_, run);
      c.precision = inv.precision;
      c.seed = seed;
      c.keep_history = false;
      result = latent_optimize(gen, obs, c);
    } else if (inv.method == "inference-net") {
      InferenceNetConfig c;
      c.hidden = inv.hidden;
      c.iterations = inv.iterations;
      c.batch = inv.batch;
      c.lr = inv.lr;
      c.loss = loss_config(config_, run);
      c.precision = inv.precision;
      c.seed = seed;
      c.samples = config_.samples;
      result = train_inference_network(gen, obs, c).result;
    } else if (inv.method == "flow") {
      FlowConfig c;
      c.layers = inv.flow_layers;
      c.hidden = inv.flow_hidden;
      c.iterations = inv.iterations;
      c.batch = inv.batch;
      c.lr = inv.lr;
      c.well_sigma = inv.well_sigma;
      c.seismic_sigma = inv.seismic_sigma;
      c.use_seismic = run.seismic;
      c.precision = inv.precision;
      c.seed = seed;
      c.samples = config_.samples;
      result = variational_infer(gen, obs, c).result;
    } else {
      DreamConfig dc;
      dc.chains = inv.chains;
      dc.generations = inv.generations;
      dc.burn_in = inv.burn_in;
      dc.seed = seed;
      dc.validate(gen.latent_dim());
      FlowConfig noise;
      noise.well_sigma = inv.well_sigma;
      noise.seismic_sigma = inv.seismic_sigma;
      noise.use_seismic = run.seismic;
      noise.precision = inv.precision;
      const ChainEnsemble ens = dream_zs(latent_log_posterior(gen, obs, noise), gen.latent_dim(), dc);
      const auto post = ens.posterior();
      const DataLoss loss(gen, obs, loss_config(config_, run));
      result.method = "dream-zs";
      result.seed = seed;
      result.samples.resize(static_cast<std::size_t>(config_.samples));
#pragma omp parallel for schedule(dynamic, 4)
      for (int i = 0; i < config_.samples; ++i) {
        const std::size_t k = static_cast<std::size_t>(i) * post.size() / static_cast<std::size_t>(config_.samples);
        LossWeights w;
        result.samples[static_cast<std::size_t>(i)] =
            loss.evaluate(LatentVector{post[k]}, gen.default_labels(), w, inv.precision);
      }
      const auto rhat = gelman_rubin(ens);
      const double worst = *std::max_element(rhat.begin(), rhat.end());
      if (!(worst < 1.2))
        result.warnings.push_back("dream-zs: max R-hat " + std::to_string(worst) + " (chains not converged)");
    }
    if (usable(result).empty()) throw StageError("invert", run.name() + ": every sample failed");
    const std::string rel = "invert/" + run.name() + ".json";
    write_text(out_ / rel, result.to_json());
    files.push_back(rel);
  }
  return files;
}

std::vector<std::string> Workflow::tune() {
  const Generator& gen = generator();
  const auto& t = config_.tuning;
  std::vector<std::string> files;
  fs::create_directories(out_ / "tune");
  for (const RunKey& run : runs()) {
    const InversionResult inv = inversion(run);
    std::vector<std::size_t> idx = usable(inv);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return inv.samples[a].well_mae < inv.samples[b].well_mae; });
    idx.resize(std::min(idx.size(), static_cast<std::size_t>(t.pivots)));
    std::vector<LatentVector> pivots;
    std::vector<LabelVector> labels;
    for (std::size_t i : idx) {
      pivots.push_back(inv.samples[i].z);
      labels.push_back(inv.samples[i].labels);
    }
    PivotalConfig pc;
    pc.steps = t.steps;
    pc.lr = t.lr;
    pc.locality_weight = t.locality_weight;
    pc.anchors_per_step = t.anchors;
    pc.per_pivot = t.per_pivot;
    pc.loss = loss_config(config_, run);
    pc.precision = config_.inversion.precision;
    pc.seed = run_seed(config_.seed, "tune/" + run.name());
    const PivotalResult res = pivotal_tune(gen, pivots, labels, observations(run), pc);
    json j = json::parse(res.result.to_json());
    j["pivot_indices"] = idx;
    j["mae_before"] = res.mae_before;
    const std::string rel = "tune/" + run.name() + ".json";
    write_text(out_ / rel, j.dump(1));
    files.push_back(rel);
    for (std::size_t k = 0; k < res.weights.size(); ++k) {
      const std::string wrel = "tune/" + run.name() + "_" + std::to_string(k) + ".wts";
      save_weights(res.weights[k], out_ / wrel);
      files.push_back(wrel);
    }
  }
  return files;
}

std::vector<std::string> Workflow::metrics() {
  const Generator& gen = generator();
  const Precision precision = config_.inversion.precision;
  std::vector<ErrorRow> rows;
  json summary = json::array();
  std::string swd_csv = "run,method,distance";
  for (int l = 0; l < config_.metrics.swd.levels; ++l) swd_csv += ",level" + std::to_string(l);
  swd_csv += "\n";
  std::vector<std::string> files;
  fs::create_directories(out_ / "metrics");

  std::vector<ModelGrid> prior;
  if (fs::exists(out_ / "prior/prior.grid")) prior = ensemble_grids(read_grid_file(out_ / "prior/prior.grid"));
  SwdConfig swd = config_.metrics.swd;
  swd.seed = run_seed(config_.seed, "swd");

  auto record = [&](const RunKey& run, const std::string& method, const std::vector<ModelGrid>& grids,
                    const ModelGrid& truth, const WellDataset& wells) {
    const ErrorReport rep = error_report(grids, wells, truth);
    const auto r = error_rows(rep, "case" + std::to_string(run.case_index), run.wells, run.seismic, method);
    rows.insert(rows.end(), r.begin(), r.end());
    std::size_t strict = 0, useful = 0;
    for (const auto& e : rep.samples) {
      strict += e.inversion_strict();
      useful += e.inversion_useful();
    }
    json s = {{"run", run.name()},
              {"method", method},
              {"samples", rep.samples.size()},
              {"median_inv_err", rep.inversion.median},
              {"median_gen_err_frac", rep.gen_coarse.median},
              {"median_gen_err_time", rep.gen_depo.median},
              {"inv_strict_fraction", double(strict) / double(rep.samples.size())},
              {"inv_useful_fraction", double(useful) / double(rep.samples.size())}};
    if (!prior.empty()) {
      const SwdResult d = swd_multiscale(grids, prior, swd);
      s["swd_to_prior"] = d.distance;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", d.distance);
      swd_csv += run.name() + "," + method + "," + buf;
      for (double v : d.per_level) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        swd_csv += buf;
      }
      swd_csv += "\n";
    }
    summary.push_back(std::move(s));
    if (grids.size() >= 2) {
      const EnsembleStats st = ensemble_stats(grids);
      GridFile f = to_grid_file(grids[0]);
      f.channels = {"coarse_mean", "coarse_std", "depo_mean", "depo_std"};
      f.data = {st.coarse_mean, st.coarse_std, st.depo_mean, st.depo_std};
      const std::string rel = "metrics/" + run.name() + "_" + method + "_stats.grid";
      write_grid_file(out_ / rel, f);
      files.push_back(rel);
    }
  };

  for (const RunKey& run : runs()) {
    const ModelGrid truth_grid = truth(run.case_index);
    const Observations obs = observations(run);
    const InversionResult inv = inversion(run);
    record(run, inv.method, generate_all(gen, inv, usable(inv), precision), truth_grid, *obs.wells);
    if (fs::exists(out_ / "tune" / (run.name() + ".json"))) {
      const InversionResult tuned_result = tuned(run);
      const auto weights = tuned_weights(run);
      std::vector<std::unique_ptr<Generator>> gens;
      for (const auto& w : weights) gens.push_back(gen.with_weights(w));
      std::vector<ModelGrid> grids;
      for (std::size_t i = 0; i < tuned_result.samples.size(); ++i) {
        const SampleResult& s = tuned_result.samples[i];
        if (s.failed) continue;
        const Generator& g = *gens[gens.size() == 1 ? 0 : i];
        grids.push_back(g.generate(s.z, s.labels.size() ? s.labels : g.default_labels(), precision));
      }
      if (!grids.empty()) record(run, "tuned", grids, truth_grid, *obs.wells);
    }
  }
  std::ofstream csv(out_ / "metrics/errors.csv", std::ios::trunc);
  write_error_csv(csv, rows);
  csv.close();
  files.insert(files.begin(), "metrics/errors.csv");
  write_text(out_ / "metrics/summary.json", summary.dump(1));
  files.push_back("metrics/summary.json");
  if (!prior.empty()) {
    write_text(out_ / "metrics/swd.csv", swd_csv);
    files.push_back("metrics/swd.csv");
  }
  return files;
}

std::vector<std::string> Workflow::landscape() {
  const Generator& gen = generator();
  std::vector<std::string> files;
  fs::create_directories(out_ / "landscape");
  for (const RunKey& run : runs()) {
    const InversionResult inv = inversion(run);
    const auto idx = usable(inv);
    std::vector<LatentVector> zs;
    for (std::size_t i : idx) zs.push_back(inv.samples[i].z);
    if (zs.size() < 3 || gen.latent_dim() < 2) continue;
    const auto [d1, d2] = pca_directions(zs);
    LandscapeConfig lc = config_.metrics.landscape;
    lc.precision = config_.inversion.precision;
    const Observations obs = observations(run);
    const LandscapeGrid grid = error_landscape(gen, *obs.wells, mean_latent(zs), d1, d2, lc);
    std::ostringstream ls;
    write_landscape_csv(ls, grid);
    const std::string rel = "landscape/" + run.name() + ".csv";
    write_text(out_ / rel, ls.str());
    files.push_back(rel);

    // MDS of the truth and inverted samples under the coarse-fraction MAE.
    std::vector<ModelGrid> grids{truth(run.case_index)};
    std::vector<std::string> labels{"truth"};
    std::vector<std::size_t> head(idx.begin(), idx.begin() + std::min<std::ptrdiff_t>(idx.size(), config_.metrics.mds_samples));
    for (auto& g : generate_all(gen, inv, head, lc.precision)) {
      grids.push_back(std::move(g));
      labels.push_back(inv.method);
    }
    const std::size_t n = grids.size();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        dist[i][j] = dist[j][i] = mae(grids[i].coarse_fraction.data(), grids[j].coarse_fraction.data());
    const MdsResult mds = classical_mds(dist, 2);
    std::ostringstream ms;
    write_mds_csv(ms, mds, labels);
    const std::string mrel = "landscape/" + run.name() + "_mds.csv";
    write_text(out_ / mrel, ms.str());
    files.push_back(mrel);
  }
  return files;
}

std::string Workflow::write_manifest(const std::string& command, const std::vector<std::string>& files,
                                     int threads) const {
  json list = json::array();
  for (const auto& f : files) {
    const std::string bytes = read_text(out_ / f);
    list.push_back({{"path", f}, {"bytes", bytes.size()}, {"fnv1a", hex64(fnv1a(bytes))}});
  }
  const json m = {{"command", command},
                  {"version", kVersion},
                  {"config", json::parse(config_.to_json())},
                  {"config_hash", hex64(config_.hash())},
                  {"seed", config_.seed},
                  {"threads", threads},
                  {"files", list}};
  const std::string rel = "manifest_" + command + ".json";
  write_text(out_ / rel, m.dump(1) + "\n");
  return rel;
}

}  // namespace fluvinv
