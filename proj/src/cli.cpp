#include <omp.h>

#include <fstream>
#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "fluvinv/cli_io.hpp"

namespace fluvinv {

namespace fs = std::filesystem;

int run_cli(int argc, char** argv) {
  CLI::App app{"fluvinv: generative-model inversion of fluvial deposits"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "experiment config (JSON)");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--threads", threads, "worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);

  std::map<std::string, std::function<std::vector<std::string>(Workflow&)>> stages;
  auto stage = [&](const std::string& name, const std::string& help, auto fn) {
    stages[name] = fn;
    return app.add_subcommand(name, help);
  };
  stage("gen-truth", "generate ground-truth grids", [](Workflow& w) { return w.gen_truth(); });
  stage("place-wells", "place wells and extract well logs", [](Workflow& w) { return w.place_wells_stage(); });
  stage("forward-seismic", "forward-model seismic cubes", [](Workflow& w) { return w.forward_seismic(); });
  stage("sample-prior", "draw unconditional samples", [](Workflow& w) { return w.sample_prior_stage(); });
  CLI::App* inv = stage("invert", "run the configured inversion for every case", [](Workflow& w) { return w.invert(); });
  stage("tune", "pivotal tuning around the best inverted latents", [](Workflow& w) { return w.tune(); });
  stage("metrics", "error reports, ensemble statistics and SWD", [](Workflow& w) { return w.metrics(); });
  stage("landscape", "error landscapes and MDS layouts", [](Workflow& w) { return w.landscape(); });
  CLI::App* vtk = app.add_subcommand("export-vtk", "convert a grid file to legacy VTK");

  std::string method;
  int chains = 0;
  CLI::Option* chains_opt = inv->add_option("--chains", chains, "DREAM chains");
  inv->add_option("--method", method, "latent-opt | inference-net | flow | dream-zs");
  std::string vtk_in, vtk_name;
  vtk->add_option("--in", vtk_in, "grid file")->required();
  vtk->add_option("--vtk", vtk_name, "output file name inside the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (seed_opt->count()) cfg.seed = seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!method.empty()) cfg.inversion.method = method;
    if (chains_opt->count()) cfg.inversion.chains = chains;
    cfg.validate();
    if (threads > 0) omp_set_num_threads(threads);
    Workflow wf(cfg, cfg.output_dir);
    fs::create_directories(wf.out_dir());

    std::vector<std::string> files;
    try {
      if (command == "export-vtk") {
        const GridFile g = read_grid_file(vtk_in);
        const std::string name = vtk_name.empty() ? fs::path(vtk_in).stem().string() + ".vtk" : vtk_name;
        std::ofstream f(wf.out_dir() / name, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + (wf.out_dir() / name).string());
        write_vtk(f, g);
        files.push_back(name);
      } else {
        files = stages.at(command)(wf);
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const FormatError&) {
      throw;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(command, e.what());
    }
    const std::string manifest = wf.write_manifest(command, files, omp_get_max_threads());
    for (const auto& f : files) std::cout << (wf.out_dir() / f).string() << '\n';
    std::cout << (wf.out_dir() / manifest).string() << '\n';
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "fluvinv " << command << ": " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "fluvinv " << command << ": " << e.what() << '\n';
    return 1;
  } catch (const StageError& e) {
    std::cerr << "fluvinv: stage '" << e.stage() << "' failed: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fluvinv: stage '" << command << "' failed: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace fluvinv
