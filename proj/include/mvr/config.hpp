#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mvr/loss.hpp"
#include "mvr/params.hpp"
#include "mvr/sampling.hpp"

namespace mvr {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct RunConfig {
  std::string scene_path;  // empty -> generated suite
  int suite_scenes = 5;
  std::string modality_name = "camera";
  int image_block = 32;
  double image_ratio = 0.3;
  int bev_block = 8;
  double point_ratio = 0.8;
  RayBudget budget;
  LossWeights weights;
  OptimizerConfig optim;
  ModelDims dims;
  int lidar_azimuths = 256;
  int lidar_rows = 24;
  bool oracle_depth_supervision = false;
  int steps = 500;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;
  int checkpoint_every = 100;
  int eval_every = 50;
  int eval_interval = 8;
  bool deterministic_timing = false;

  Modality modality() const { return modality_from_string(modality_name); }
  void validate() const;
};

// Strict JSON: every key must be known, types must match. Missing keys keep
// their defaults.
RunConfig parse_config_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// MVR_-prefixed environment variables override file values (see docs for the
// key list). Returns the number of applied overrides.
int apply_env_overrides(RunConfig& cfg);

std::string config_to_json(const RunConfig& cfg);

}  // namespace mvr
