#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "mvr/errors.hpp"

namespace mvr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p, double tol = 0.0) const;
  Vec3 extent() const { return max - min; }
  double diagonal() const { return extent().norm(); }
  void validate() const;  // min < max componentwise
};

struct CameraView {
  Mat3 intrinsics = Mat3::Identity();       // fx, fy, cx, cy; zero skew
  Mat4 lidar_to_camera = Mat4::Identity();  // rigid lidar(world) -> camera
};

struct CameraRig {
  int image_height = 0;
  int image_width = 0;
  std::vector<CameraView> views;

  int view_count() const { return static_cast<int>(views.size()); }
  // Camera center expressed in the lidar frame.
  Vec3 camera_center(int view) const;
  // Camera optical axis (+z) expressed in the lidar frame.
  Vec3 camera_forward(int view) const;
  void validate() const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::Zero();  // unit norm
  int view = -1;
  Vec2 pixel = Vec2::Zero();  // continuous (u, v) it was cast through
};

struct PixelProjection {
  Vec2 pixel;       // continuous (u, v); array index is (floor(u), floor(v))
  double depth;     // camera-frame z
  bool in_image;    // inside [0,W) x [0,H)
};

// Pinhole projection of a lidar-frame point. Empty when the point sits at or
// behind the camera plane (z <= 0); out-of-image is reported via the flag,
// not an error.
std::optional<PixelProjection> project_point(const Vec3& p,
                                             const CameraRig& rig, int view);

// World-frame unit ray through a continuous pixel. Pixel centers live at
// integer + 0.5. Throws ConfigError when the pixel is outside the image.
Ray ray_from_pixel(const CameraRig& rig, int view, const Vec2& pixel);

// Parametric interval where the ray is inside the box, entry clamped to 0
// for interior origins. Empty when the box is missed or entirely behind.
std::optional<std::pair<double, double>> ray_aabb_clip(const Ray& ray,
                                                       const Aabb& box);

struct LidarPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;
};

// Per-view sparse depth map; absent pixels hold NaN. Depths are camera-frame z.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> z;

  bool has(int u, int v) const;
  double at(int u, int v) const { return z[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return z[static_cast<std::size_t>(v) * width + u]; }
  int valid_count() const;
  // Valid pixels in row-major order; the deterministic candidate list for
  // depth-aware sampling.
  std::vector<std::pair<int, int>> valid_pixels() const;
};

// Z-buffered projection of the cloud into every view. Points at depth >= tau
// are dropped. Throws ConfigError on an empty cloud.
std::vector<DepthMap> build_depth_map(const std::vector<LidarPoint>& points,
                                      const CameraRig& rig, double tau);

// cos between a world direction and the view's optical axis; converts
// camera-z depth into ray parameter (t = z / forward_cosine).
double forward_cosine(const CameraRig& rig, int view, const Vec3& world_dir);

}  // namespace mvr
