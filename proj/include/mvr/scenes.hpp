#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "mvr/geometry.hpp"
#include "mvr/rng.hpp"

namespace mvr {

enum class PrimitiveKind { sphere, box, halfspace };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center = Vec3::Zero();       // sphere, box
  double radius = 0.0;              // sphere
  Vec3 half_extent = Vec3::Zero();  // box
  Vec3 normal = Vec3::UnitZ();      // halfspace (unit)
  double offset = 0.0;              // halfspace plane: dot(n, p) = offset
  Vec3 albedo = Vec3::Constant(0.5);

  double sdf(const Vec3& p) const;
  void validate() const;
};

struct Scene {
  std::uint64_t seed = 0;
  Aabb bounds;
  Vec3 background = Vec3::Zero();
  Vec3 lidar_origin = Vec3::Zero();
  std::vector<Primitive> primitives;
  CameraRig rig;

  void validate() const;
};

// Union by min; returns distance plus the albedo of the nearest primitive.
std::pair<double, Vec3> scene_sdf(const Scene& scene, const Vec3& p);
double scene_distance(const Scene& scene, const Vec3& p);

// Central-difference surface normal of the scene SDF.
Vec3 scene_normal(const Scene& scene, const Vec3& p);

struct SurfaceHit {
  double t = 0.0;  // ray parameter (distance along the unit direction)
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  Vec3 albedo = Vec3::Zero();
};

// March until |sdf| < 1e-6 or 512 steps; a stalled march still counts as a
// hit when it parked within 1e-4 of the surface.
std::optional<SurfaceHit> sphere_trace(const Scene& scene, const Vec3& origin,
                                       const Vec3& dir, double t_max);

struct OraclePixel {
  Vec3 rgb = Vec3::Zero();
  std::optional<double> depth;  // ray parameter; empty on miss
};

// Ground-truth shading: albedo * max(0, n.light) + 0.1 ambient, clamped.
OraclePixel oracle_render_pixel(const Scene& scene, int view, const Vec2& pixel);

// Regular angular grid of rays from `origin`; hits become points with
// intensity = mean albedo of the struck primitive. Misses emit nothing.
std::vector<LidarPoint> simulate_lidar(const Scene& scene, const Vec3& origin,
                                       int azimuth_count, int elevation_rows);

// Six-camera surround rig looking outward from the scene center.
CameraRig desk_rig(int image_height = 64, int image_width = 96, int view_count = 6);

// One randomized desk scene: ground plane plus 1-5 floating objects.
Scene make_scene(std::uint64_t seed);
std::vector<Scene> scene_suite(std::uint64_t seed, int count);

Scene load_scene(const std::filesystem::path& path);
void save_scene(const Scene& scene, const std::filesystem::path& path);

}  // namespace mvr
