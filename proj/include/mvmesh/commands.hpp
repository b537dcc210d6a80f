#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvmesh/dataset.hpp"
#include "mvmesh/solver.hpp"
#include "mvmesh/synth.hpp"

namespace mvmesh {

struct SweepConfig {
  std::string target = "mask";  // mask | joints
  std::vector<double> probabilities = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int samples_per_point = 50;

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int n_samples = 10;
  std::string mode = "progressive";  // progressive | naive
  TemplateConfig body;
  SynthConfig synth;
  SolverConfig solver;
  SweepConfig sweep;

  void validate() const;
};

// Strict parsing: unknown keys anywhere reject the config.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::string& path);
Json run_config_to_json(const RunConfig& cfg);

// Stage plans for a mode name, overridable through the config's solver.stages.
std::array<StagePlan, 3> stages_for_mode(const std::string& mode);

// Sweep corruption model: occluders erase regions from both the silhouette
// and the heatmaps (mask target), or joints are jittered/dropped with the
// given probability (joints target). Ground truth stays untouched.
TrainingSample corrupt_sample(const TrainingSample& sample, const SynthConfig& synth,
                              const std::string& target, double probability, Rng& rng);

int cmd_synth(const RunConfig& cfg, const std::string& out_dir);
int cmd_fit(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
            int workers, bool dump_grids);
int cmd_eval(const RunConfig& cfg, const std::string& dataset_dir,
             const std::string& results_dir, const std::string& csv_path);
int cmd_ablate(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
               int workers);
int cmd_inspect_grid(const std::string& grid_path, int axis, int index, int channel,
                     const std::string& out_pgm);

// Sweep outcome shared between cmd_ablate and the acceptance harness.
struct SweepPoint {
  double probability = 0.0;
  double mean_pmpjpe_prog = 0.0;
  double mean_pmpjpe_naive = 0.0;
  double mean_mpjpe_prog = 0.0;
  double mean_mpjpe_naive = 0.0;
  int completed = 0;  // trials where both modes produced a fit
  int wins_prog = 0;  // trials with progressive pmpjpe <= naive
};

struct SweepTrial {
  int point = 0;
  int sample = 0;
  bool ok = false;  // both modes produced a fit
  double pmpjpe_prog = 0.0;
  double pmpjpe_naive = 0.0;
  double mpjpe_prog = 0.0;
  double mpjpe_naive = 0.0;
};

struct SweepOutcome {
  std::vector<SweepPoint> points;
  std::vector<SweepTrial> trials;
  double spearman_prog = 0.0;
  double spearman_naive = 0.0;
  int points_won = 0;  // sweep points where progressive mean <= naive mean
};

SweepOutcome run_sweep(const RunConfig& cfg, int workers);

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace mvmesh
