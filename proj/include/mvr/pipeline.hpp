#pragma once

#include <vector>

#include "mvr/loss.hpp"
#include "mvr/masking.hpp"
#include "mvr/params.hpp"
#include "mvr/sampling.hpp"
#include "mvr/scenes.hpp"

namespace mvr {

// Everything the oracle can precompute for one scene: GT images, per-pixel
// oracle depth (ray-parameter t), the simulated cloud, and its z-buffered
// camera-depth maps.
struct ScenePack {
  Scene scene;
  std::vector<ImageRgb> images;
  std::vector<DepthMap> oracle_depth;  // values are ray parameters t
  std::vector<LidarPoint> cloud;
  std::vector<DepthMap> lidar_depth;   // values are camera z
  double tau = 0.0;
};

ScenePack bake_scene(const Scene& scene, int lidar_azimuths, int lidar_rows,
                     double tau, int threads = 1);

// Plan-building knobs; a strict subset of the run config.
struct PlanConfig {
  Modality modality = Modality::camera;
  int image_block = 32;
  double image_ratio = 0.3;
  int bev_block = 8;
  double point_ratio = 0.8;
  RayBudget budget;
  bool oracle_depth_supervision = false;  // random/dilation depth source
};

// One training step's frozen inputs: masks, visible points, rays, their t
// samples, and supervision. Pure function of (pack, cfg, seed, step), so the
// loss becomes a deterministic function of the parameters alone.
struct StepPlan {
  const ScenePack* pack = nullptr;
  Modality modality = Modality::camera;
  std::vector<std::vector<std::uint8_t>> pixel_masks;  // per view, H*W
  BlockMask bev_mask;
  std::vector<LidarPoint> visible_points;
  std::vector<Ray> rays;
  std::vector<Eigen::VectorXd> ts;
  RenderTargets targets;
};

StepPlan make_step_plan(const ScenePack& pack, const PlanConfig& cfg,
                        const VoxelSpec& grid, std::uint64_t seed,
                        std::uint64_t step);

// Unmasked, full-cloud plan on a fixed dilation grid with midpoint samples
// and oracle depth targets; the held-out evaluation probe.
StepPlan make_eval_plan(const ScenePack& pack, Modality modality,
                        const VoxelSpec& grid, int interval, int points_per_ray);

struct StepStats {
  double loss = 0.0;
  double rgb_l1 = 0.0;
  double depth_l1 = 0.0;
  int rays = 0;
  int depth_rays = 0;
};

struct RunOptions {
  int threads = 1;
  ModelGrads* grads = nullptr;  // accumulate parameter adjoints when set
  // Frozen per-ray normals (3 x D each); the finite-difference harness pins
  // the detached normal path with these.
  const std::vector<Eigen::MatrixXd>* normals_in = nullptr;
  std::vector<Eigen::MatrixXd>* normals_out = nullptr;  // capture for freezing
  std::vector<RayPrediction>* preds_out = nullptr;
};

// Full differentiable pipeline for one plan: encode -> volume -> projection
// -> render -> loss (and the reverse sweep when grads are requested).
StepStats run_plan(const StepPlan& plan, const ModelParams& params,
                   const LossWeights& w, const RunOptions& opts);

// Bytes held by the plan's per-ray buffers (rays, t samples, targets); the
// sampling bench reports its per-strategy peak.
std::size_t plan_ray_bytes(const StepPlan& plan);

}  // namespace mvr
