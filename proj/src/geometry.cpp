#include "mvr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvr {

bool Aabb::contains(const Vec3& p, double tol) const {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < min[a] - tol || p[a] > max[a] + tol) return false;
  }
  return true;
}

void Aabb::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(min[a] < max[a])) throw ConfigError("aabb: min must be < max on every axis");
  }
}

Vec3 CameraRig::camera_center(int view) const {
  const Mat4& e = views[static_cast<std::size_t>(view)].lidar_to_camera;
  Mat3 r = e.block<3, 3>(0, 0);
  Vec3 t = e.block<3, 1>(0, 3);
  return -(r.transpose() * t);
}

Vec3 CameraRig::camera_forward(int view) const {
  const Mat4& e = views[static_cast<std::size_t>(view)].lidar_to_camera;
  // Third row of R is the optical axis expressed in the lidar frame.
  return e.block<3, 3>(0, 0).row(2).transpose();
}

void CameraRig::validate() const {
  if (views.empty()) throw ConfigError("rig: needs at least one view");
  if (image_height <= 0 || image_width <= 0)
    throw ConfigError("rig: image dims must be positive");
  for (const CameraView& v : views) {
    const Mat3& k = v.intrinsics;
    if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0))
      throw ConfigError("rig: focal lengths must be positive");
    if (k(0, 1) != 0.0 || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 ||
        k(2, 2) != 1.0)
      throw ConfigError("rig: intrinsics must be zero-skew pinhole");
    Mat3 r = v.lidar_to_camera.block<3, 3>(0, 0);
    if ((r * r.transpose() - Mat3::Identity()).norm() > 1e-9)
      throw ConfigError("rig: extrinsics rotation is not orthonormal");
    if ((v.lidar_to_camera.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() != 0.0)
      throw ConfigError("rig: extrinsics last row must be (0,0,0,1)");
  }
}

std::optional<PixelProjection> project_point(const Vec3& p,
                                             const CameraRig& rig, int view) {
  const CameraView& v = rig.views[static_cast<std::size_t>(view)];
  Vec3 pc = v.lidar_to_camera.block<3, 3>(0, 0) * p +
            v.lidar_to_camera.block<3, 1>(0, 3);
  if (pc.z() <= 0.0) return std::nullopt;
  const Mat3& k = v.intrinsics;
  double u = k(0, 0) * (pc.x() / pc.z()) + k(0, 2);
  double w = k(1, 1) * (pc.y() / pc.z()) + k(1, 2);
  PixelProjection out;
  out.pixel = Vec2(u, w);
  out.depth = pc.z();
  out.in_image = u >= 0.0 && u < rig.image_width && w >= 0.0 && w < rig.image_height;
  return out;
}

Ray ray_from_pixel(const CameraRig& rig, int view, const Vec2& pixel) {
  if (pixel.x() < 0.0 || pixel.x() >= rig.image_width || pixel.y() < 0.0 ||
      pixel.y() >= rig.image_height)
    throw ConfigError("ray_from_pixel: pixel outside image");
  const CameraView& v = rig.views[static_cast<std::size_t>(view)];
  const Mat3& k = v.intrinsics;
  Vec3 dc((pixel.x() - k(0, 2)) / k(0, 0), (pixel.y() - k(1, 2)) / k(1, 1), 1.0);
  Mat3 r = v.lidar_to_camera.block<3, 3>(0, 0);
  Ray ray;
  ray.origin = rig.camera_center(view);
  ray.direction = (r.transpose() * dc).normalized();
  ray.view = view;
  ray.pixel = pixel;
  return ray;
}

std::optional<std::pair<double, double>> ray_aabb_clip(const Ray& ray,
                                                       const Aabb& box) {
  double t_near = 0.0;
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double o = ray.origin[a];
    double d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.min[a] || o > box.max[a]) return std::nullopt;
      continue;
    }
    double t1 = (box.min[a] - o) / d;
    double t2 = (box.max[a] - o) / d;
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  if (!(t_near < t_far)) return std::nullopt;
  return std::make_pair(t_near, t_far);
}

bool DepthMap::has(int u, int v) const {
  if (u < 0 || u >= width || v < 0 || v >= height) return false;
  return !std::isnan(at(u, v));
}

int DepthMap::valid_count() const {
  int n = 0;
  for (double d : z) n += !std::isnan(d);
  return n;
}

std::vector<std::pair<int, int>> DepthMap::valid_pixels() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(valid_count()));
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u)
      if (!std::isnan(at(u, v))) out.emplace_back(u, v);
  return out;
}

std::vector<DepthMap> build_depth_map(const std::vector<LidarPoint>& points,
                                      const CameraRig& rig, double tau) {
  if (points.empty()) throw ConfigError("build_depth_map: empty point cloud");
  if (!(tau > 0.0)) throw ConfigError("build_depth_map: tau must be positive");
  std::vector<DepthMap> maps(static_cast<std::size_t>(rig.view_count()));
  for (DepthMap& m : maps) {
    m.height = rig.image_height;
    m.width = rig.image_width;
    m.z.assign(static_cast<std::size_t>(m.height) * m.width,
               std::numeric_limits<double>::quiet_NaN());
  }
  for (const LidarPoint& pt : points) {
    for (int view = 0; view < rig.view_count(); ++view) {
      auto proj = project_point(pt.position, rig, view);
      if (!proj || !proj->in_image) continue;
      if (proj->depth >= tau) continue;
      int u = static_cast<int>(std::floor(proj->pixel.x()));
      int v = static_cast<int>(std::floor(proj->pixel.y()));
      DepthMap& m = maps[static_cast<std::size_t>(view)];
      double& cell = m.at(u, v);
      if (std::isnan(cell) || proj->depth < cell) cell = proj->depth;
    }
  }
  return maps;
}

double forward_cosine(const CameraRig& rig, int view, const Vec3& world_dir) {
  return rig.camera_forward(view).dot(world_dir);
}

}  // namespace mvr
