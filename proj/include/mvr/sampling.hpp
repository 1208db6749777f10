#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "mvr/geometry.hpp"
#include "mvr/rng.hpp"

namespace mvr {

enum class RayStrategy { dilation, random, depth_aware };

RayStrategy ray_strategy_from_string(const std::string& s);
std::string to_string(RayStrategy s);

struct RayBudget {
  RayStrategy strategy = RayStrategy::depth_aware;
  int interval = 8;        // dilation stride I, px
  int rays_per_view = 512; // K
  int points_per_ray = 96; // D
  double tau = 0.0;        // depth-aware threshold; <= 0 resolves to 0.9 * diagonal
  bool stratified = true;

  void validate() const;
};

// One selected pixel, optionally carrying lidar depth supervision (camera-z).
struct PixelSample {
  int view = 0;
  Vec2 pixel = Vec2::Zero();
  std::optional<double> lidar_z;
};

// Anchor pixels (a*I + 0.5, b*I + 0.5) per view; every anchor inside the
// image counts, so even I > max(H, W) emits one ray per view.
std::vector<PixelSample> sample_dilation(const CameraRig& rig, int interval);

// K pixel centers per view, uniform without replacement.
std::vector<PixelSample> sample_random(const CameraRig& rig, int k, Rng& rng);

// K per view from the depth-map candidate set; short sets are topped up with
// random non-candidate pixels that carry no supervision.
std::vector<PixelSample> sample_depth_aware(const CameraRig& rig,
                                            const std::vector<DepthMap>& depth_maps,
                                            int k, Rng& rng);

// Sorted t values on [t_near, t_far]: one uniform draw per equal bin when
// stratified, bin midpoints otherwise.
Eigen::VectorXd sample_ray_points(double t_near, double t_far, int d, Rng& rng,
                                  bool stratified);

}  // namespace mvr
