#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvmesh/metrics.hpp"
#include "mvmesh/solver.hpp"
#include "mvmesh/synth.hpp"

namespace mvmesh {

using Json = nlohmann::json;

std::string sample_dir_name(int index);

// Per-sample directory layout: gt.json, rig.json, and per view
// view{n}_mask.pgm, view{n}_occ.pgm, view{n}_heat.f64, view{n}_meta.json.
void write_sample(const std::string& dir, const TrainingSample& sample);

// Reads everything fit/eval need; augmentation-support fields stay empty.
TrainingSample read_sample(const std::string& dir, int n_views);

// Ground truth alone, skipping the per-view maps.
struct SampleTruth {
  BodyParams params;
  Points3 joints;
  Points3 vertices;
  Extrinsics world_from_human;
  std::uint64_t seed = 0;
};

SampleTruth read_sample_truth(const std::string& dir);

struct DatasetManifest {
  int format = 1;
  std::uint64_t seed = 0;
  int n_samples = 0;
  int n_views = 0;
  Json config = Json::object();
};

void write_manifest(const std::string& dir, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& dir);

// Hash over the sample's serialized bytes, used by fit resume and the synth
// idempotency check.
std::uint64_t sample_input_hash(const std::string& dir, int n_views);

struct StoredFit {
  FitResult result;
  std::uint64_t input_hash = 0;
  std::string mode;
};

void write_fit_result(const std::string& path, const FitResult& result,
                      std::uint64_t input_hash, const std::string& mode);
StoredFit read_fit_result(const std::string& path);

// One row per sample plus a trailing aggregate row labeled "mean".
void write_eval_csv(const std::string& path, const EvalReport& report);

}  // namespace mvmesh
