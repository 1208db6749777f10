#pragma once

#include <optional>
#include <vector>

#include "mvr/geometry.hpp"

namespace mvr {

// Per-ray ground truth. Depth targets are ray-parameter t values (camera-z
// lidar depths are converted at plan build time).
struct RenderTargets {
  std::vector<Vec3> rgb;
  std::vector<std::optional<double>> depth;

  int ray_count() const { return static_cast<int>(rgb.size()); }
  int depth_count() const;
  void validate() const;
};

struct LossWeights {
  double lambda_rgb = 10.0;
  double lambda_depth = 10.0;

  void validate() const;
};

struct RayPrediction {
  Vec3 rgb = Vec3::Zero();
  double depth = 0.0;
};

struct LossResult {
  double loss = 0.0;
  double rgb_l1 = 0.0;    // (1/K)   sum of per-ray channel-summed L1
  double depth_l1 = 0.0;  // (1/K+)  sum of |depth error|; 0 when K+ = 0
  std::vector<Vec3> rgb_residual;                  // pred - gt
  std::vector<std::optional<double>> depth_residual;
};

// L = (l_rgb/K) sum ||rgb_i - gt_i||_1 + (l_depth/K+) sum |d_i - gt_i|.
// Per-ray terms are value-sorted before compensated summation, making the
// result exactly permutation invariant.
LossResult pretrain_loss(const std::vector<RayPrediction>& preds,
                         const RenderTargets& targets, const LossWeights& w);

}  // namespace mvr
