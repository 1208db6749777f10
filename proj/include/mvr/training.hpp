#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvr/config.hpp"
#include "mvr/pipeline.hpp"

namespace mvr {

struct OptimizerState {
  OptimizerConfig cfg;
  std::uint64_t step = 0;
  std::vector<double> m;  // first moments, param_views order
  std::vector<double> v;  // second moments

  static OptimizerState init(const ModelParams& params, const OptimizerConfig& cfg);
};

// AdamW: adaptive moments with bias correction plus decoupled weight decay.
void optimizer_step(OptimizerState& state, ModelParams& params, ModelGrads& grads);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_path;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double loss = 0.0;          // unperturbed objective
  double grad_abs_max = 0.0;  // live-gradient witness: max |analytic|
  double max_abs_err = 0.0;   // raw |analytic - numeric| before the 1e-8 floor
  bool pass = false;  // 1e-4 relative or 1e-8 absolute per element, live flow
};

// Central finite differences (eps = 1e-6) against the analytic reverse pass
// over the full pipeline on a small fused-modality config (8x8x4 volume,
// 4 rays, 8 points per ray). Normals are frozen from the unperturbed forward
// so both sides differentiate the same detached-normal objective.
GradCheckReport grad_check(std::uint64_t seed);

struct StepRow {
  int step = 0;
  double loss = 0.0;
  double rgb_l1 = 0.0;
  double depth_l1 = 0.0;
  int rays = 0;
  double seconds = 0.0;
};

struct EvalPoint {
  int step = 0;
  double rgb_l1 = 0.0;
  double depth_l1 = 0.0;
};

struct TrainResult {
  std::vector<StepRow> rows;
  std::vector<EvalPoint> evals;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::size_t peak_ray_bytes = 0;
};

// Full pre-training loop. Writes metrics.csv, eval.csv, periodic and final
// checkpoints under cfg.out_dir.
TrainResult pretrain(const RunConfig& cfg);

// Held-out probe: unmasked inputs, dilation grid, midpoint samples, oracle
// depth targets.
EvalPoint evaluate(const ModelParams& params, Modality modality,
                   const ScenePack& pack, int interval, int points_per_ray,
                   int threads);

struct BenchRow {
  std::string strategy;
  std::uint64_t seed = 0;
  double depth_l1 = 0.0;
  double rgb_l1 = 0.0;
  std::size_t ray_buffer_bytes = 0;  // peak per-step sample storage
};

// Short training runs per strategy at a matched per-view ray budget
// (H*W/I^2); one row per (strategy, seed).
std::vector<BenchRow> bench_sampling(const RunConfig& base,
                                     const std::vector<std::uint64_t>& seeds);

}  // namespace mvr
