#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "mvmesh/commands.hpp"
#include "mvmesh/errors.hpp"

namespace {

mvmesh::RunConfig load_or_default(const std::string& path) {
  if (path.empty()) return mvmesh::RunConfig{};
  return mvmesh::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view human mesh recovery toolkit"};
  app.require_subcommand(1);

  std::string config_path, dataset_dir, out_dir, results_dir, csv_path;
  std::string mode, target, grid_path, out_pgm;
  std::uint64_t seed = 0;
  int n_samples = 0, n_views = 0, grid_g = 0, max_iters = 0, samples_per_point = 0;
  int workers = 1;
  double cube_edge = 0.0;
  int axis = 2, slice_index = 0, channel = 0;
  bool dump_grids = false;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic multi-view dataset");
  synth->add_option("--config", config_path, "JSON config file");
  synth->add_option("--out", out_dir, "dataset directory")->required();
  CLI::Option* synth_seed = synth->add_option("--seed", seed, "run seed");
  CLI::Option* synth_n = synth->add_option("--n-samples", n_samples, "sample count");
  CLI::Option* synth_views = synth->add_option("--views", n_views, "camera count");

  CLI::App* fit = app.add_subcommand("fit", "fit the body model to every dataset sample");
  fit->add_option("--config", config_path, "JSON config file");
  fit->add_option("--dataset", dataset_dir, "dataset directory")->required();
  fit->add_option("--out", out_dir, "results directory")->required();
  CLI::Option* fit_mode = fit->add_option("--mode", mode, "progressive or naive");
  CLI::Option* fit_grid = fit->add_option("--grid-g", grid_g, "fusion grid resolution");
  CLI::Option* fit_cube = fit->add_option("--cube-l", cube_edge, "grid edge length in meters");
  CLI::Option* fit_iters = fit->add_option("--max-iters", max_iters, "solver iteration cap");
  fit->add_option("--workers", workers, "worker threads");
  fit->add_flag("--dump-grids", dump_grids, "save per-sample calibration grids");

  CLI::App* eval = app.add_subcommand("eval", "score fit results against ground truth");
  eval->add_option("--config", config_path, "JSON config file");
  eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
  eval->add_option("--results", results_dir, "fit results directory")->required();
  eval->add_option("--csv", csv_path, "output CSV path (default: <results>/eval.csv)");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "stage-plan variant matrix plus the perturbation sweep");
  ablate->add_option("--config", config_path, "JSON config file");
  ablate->add_option("--dataset", dataset_dir, "dataset directory")->required();
  ablate->add_option("--out", out_dir, "report directory")->required();
  CLI::Option* ablate_target = ablate->add_option("--target", target, "mask or joints");
  CLI::Option* ablate_spp =
      ablate->add_option("--samples-per-point", samples_per_point, "trials per sweep point");
  CLI::Option* ablate_grid = ablate->add_option("--grid-g", grid_g, "fusion grid resolution");
  CLI::Option* ablate_cube =
      ablate->add_option("--cube-l", cube_edge, "grid edge length in meters");
  CLI::Option* ablate_iters =
      ablate->add_option("--max-iters", max_iters, "solver iteration cap");
  ablate->add_option("--workers", workers, "worker threads");

  CLI::App* inspect = app.add_subcommand("inspect-grid", "dump a voxel grid slice as PGM");
  inspect->add_option("--grid", grid_path, "grid file")->required();
  inspect->add_option("--axis", axis, "slice axis, 0..2");
  inspect->add_option("--index", slice_index, "slice position along the axis");
  inspect->add_option("--channel", channel, "grid channel");
  inspect->add_option("--out", out_pgm, "output PGM path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (inspect->parsed())
      return mvmesh::cmd_inspect_grid(grid_path, axis, slice_index, channel, out_pgm);

    mvmesh::RunConfig cfg = load_or_default(config_path);
    if (synth->parsed()) {
      if (*synth_seed) cfg.seed = seed;
      if (*synth_n) cfg.n_samples = n_samples;
      if (*synth_views) cfg.synth.n_views = n_views;
      return mvmesh::cmd_synth(cfg, out_dir);
    }
    if (fit->parsed()) {
      if (*fit_mode) {
        cfg.mode = mode;
        cfg.solver.stages = mvmesh::stages_for_mode(mode);
      }
      if (*fit_grid) cfg.solver.grid_g = grid_g;
      if (*fit_cube) cfg.solver.cube_edge = cube_edge;
      if (*fit_iters) cfg.solver.max_iters = max_iters;
      return mvmesh::cmd_fit(cfg, dataset_dir, out_dir, workers, dump_grids);
    }
    if (eval->parsed()) {
      if (csv_path.empty()) csv_path = results_dir + "/eval.csv";
      return mvmesh::cmd_eval(cfg, dataset_dir, results_dir, csv_path);
    }
    if (ablate->parsed()) {
      if (*ablate_target) cfg.sweep.target = target;
      if (*ablate_spp) cfg.sweep.samples_per_point = samples_per_point;
      if (*ablate_grid) cfg.solver.grid_g = grid_g;
      if (*ablate_cube) cfg.solver.cube_edge = cube_edge;
      if (*ablate_iters) cfg.solver.max_iters = max_iters;
      return mvmesh::cmd_ablate(cfg, dataset_dir, out_dir, workers);
    }
  } catch (const mvmesh::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mvmesh::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const mvmesh::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
