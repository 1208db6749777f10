#include "mvr/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

namespace mvr {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTraceTol = 1e-6;
constexpr double kTraceStallTol = 1e-4;
constexpr int kTraceMaxIter = 512;
constexpr double kAmbient = 0.1;

Vec3 light_dir() { return Vec3(0.4, 0.25, 0.86).normalized(); }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double Primitive::sdf(const Vec3& p) const {
  switch (kind) {
    case PrimitiveKind::sphere:
      return (p - center).norm() - radius;
    case PrimitiveKind::box: {
      Vec3 q = (p - center).cwiseAbs() - half_extent;
      double outside = q.cwiseMax(0.0).norm();
      double inside = std::min(std::max({q.x(), q.y(), q.z()}), 0.0);
      return outside + inside;
    }
    case PrimitiveKind::halfspace:
      return normal.dot(p) - offset;
  }
  return 0.0;
}

void Primitive::validate() const {
  switch (kind) {
    case PrimitiveKind::sphere:
      if (!(radius > 0.0)) throw ConfigError("primitive: sphere radius must be positive");
      break;
    case PrimitiveKind::box:
      if (!(half_extent.minCoeff() > 0.0))
        throw ConfigError("primitive: box half extents must be positive");
      break;
    case PrimitiveKind::halfspace:
      if (std::abs(normal.norm() - 1.0) > 1e-9)
        throw ConfigError("primitive: halfspace normal must be unit length");
      break;
  }
  for (int c = 0; c < 3; ++c)
    if (albedo[c] < 0.0 || albedo[c] > 1.0)
      throw ConfigError("primitive: albedo outside [0,1]");
}

void Scene::validate() const {
  bounds.validate();
  rig.validate();
  if (primitives.empty()) throw ConfigError("scene: needs at least one primitive");
  bool any_inside = false;
  for (const Primitive& pr : primitives) {
    pr.validate();
    if (pr.kind == PrimitiveKind::halfspace) {
      // The plane must cut through the bounds box.
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (int corner = 0; corner < 8; ++corner) {
        Vec3 c(corner & 1 ? bounds.max.x() : bounds.min.x(),
               corner & 2 ? bounds.max.y() : bounds.min.y(),
               corner & 4 ? bounds.max.z() : bounds.min.z());
        double d = pr.sdf(c);
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
      if (lo <= 0.0 && hi >= 0.0) any_inside = true;
    } else if (bounds.contains(pr.center)) {
      any_inside = true;
    }
  }
  if (!any_inside) throw ConfigError("scene: no primitive inside bounds");
  for (int c = 0; c < 3; ++c)
    if (background[c] < 0.0 || background[c] > 1.0)
      throw ConfigError("scene: background outside [0,1]");
}

std::pair<double, Vec3> scene_sdf(const Scene& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 albedo = Vec3::Zero();
  for (const Primitive& pr : scene.primitives) {
    double d = pr.sdf(p);
    if (d < best) {
      best = d;
      albedo = pr.albedo;
    }
  }
  return {best, albedo};
}

double scene_distance(const Scene& scene, const Vec3& p) {
  return scene_sdf(scene, p).first;
}

Vec3 scene_normal(const Scene& scene, const Vec3& p) {
  const double h = 1e-5;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 hi = p, lo = p;
    hi[a] += h;
    lo[a] -= h;
    g[a] = (scene_distance(scene, hi) - scene_distance(scene, lo)) / (2.0 * h);
  }
  double n = g.norm();
  return n > 1e-12 ? Vec3(g / n) : Vec3::Zero();
}

std::optional<SurfaceHit> sphere_trace(const Scene& scene, const Vec3& origin,
                                       const Vec3& dir, double t_max) {
  double t = 0.0;
  double d = 0.0;
  for (int it = 0; it < kTraceMaxIter; ++it) {
    Vec3 p = origin + t * dir;
    d = scene_distance(scene, p);
    if (std::abs(d) < kTraceTol) break;
    t += d;
    if (t > t_max) return std::nullopt;
  }
  if (std::abs(d) >= kTraceStallTol) return std::nullopt;
  SurfaceHit hit;
  hit.t = t;
  hit.point = origin + t * dir;
  hit.normal = scene_normal(scene, hit.point);
  hit.albedo = scene_sdf(scene, hit.point).second;
  return hit;
}

OraclePixel oracle_render_pixel(const Scene& scene, int view, const Vec2& pixel) {
  Ray ray = ray_from_pixel(scene.rig, view, pixel);
  double t_max = 3.0 * scene.bounds.diagonal();
  auto hit = sphere_trace(scene, ray.origin, ray.direction, t_max);
  OraclePixel out;
  if (!hit) {
    out.rgb = scene.background;
    return out;
  }
  double diffuse = std::max(0.0, hit->normal.dot(light_dir()));
  for (int c = 0; c < 3; ++c) out.rgb[c] = clamp01(hit->albedo[c] * diffuse + kAmbient);
  out.depth = hit->t;
  return out;
}

std::vector<LidarPoint> simulate_lidar(const Scene& scene, const Vec3& origin,
                                       int azimuth_count, int elevation_rows) {
  const double elev_lo = -50.0 * kPi / 180.0;
  const double elev_hi = 6.0 * kPi / 180.0;
  double t_max = 3.0 * scene.bounds.diagonal();
  std::vector<LidarPoint> cloud;
  cloud.reserve(static_cast<std::size_t>(azimuth_count) * elevation_rows);
  for (int row = 0; row < elevation_rows; ++row) {
    double f = elevation_rows > 1 ? static_cast<double>(row) / (elevation_rows - 1) : 0.0;
    double elev = elev_lo + (elev_hi - elev_lo) * f;
    for (int az = 0; az < azimuth_count; ++az) {
      double theta = 2.0 * kPi * az / azimuth_count;
      Vec3 dir(std::cos(elev) * std::cos(theta), std::cos(elev) * std::sin(theta),
               std::sin(elev));
      auto hit = sphere_trace(scene, origin, dir, t_max);
      if (!hit) continue;
      LidarPoint pt;
      pt.position = hit->point;
      pt.intensity = (hit->albedo.x() + hit->albedo.y() + hit->albedo.z()) / 3.0;
      cloud.push_back(pt);
    }
  }
  return cloud;
}

CameraRig desk_rig(int image_height, int image_width, int view_count) {
  CameraRig rig;
  rig.image_height = image_height;
  rig.image_width = image_width;
  const double ring_radius = 0.8;
  const double cam_z = 1.0;
  const double pitch = 8.0 * kPi / 180.0;  // downward tilt
  double focal = image_width / 2.0;
  for (int k = 0; k < view_count; ++k) {
    double a = 2.0 * kPi * k / view_count;
    double ca = std::cos(a), sa = std::sin(a);
    double cp = std::cos(pitch), sp = std::sin(pitch);
    Vec3 center(ring_radius * ca, ring_radius * sa, cam_z);
    Vec3 fwd(cp * ca, cp * sa, -sp);
    Vec3 right(sa, -ca, 0.0);
    Vec3 down = fwd.cross(right);
    Mat3 rot;
    rot.row(0) = right.transpose();
    rot.row(1) = down.transpose();
    rot.row(2) = fwd.transpose();
    CameraView view;
    view.intrinsics = Mat3::Identity();
    view.intrinsics(0, 0) = focal;
    view.intrinsics(1, 1) = focal;
    view.intrinsics(0, 2) = image_width / 2.0;
    view.intrinsics(1, 2) = image_height / 2.0;
    view.lidar_to_camera = Mat4::Identity();
    view.lidar_to_camera.block<3, 3>(0, 0) = rot;
    view.lidar_to_camera.block<3, 1>(0, 3) = -(rot * center);
    rig.views.push_back(view);
  }
  return rig;
}

Scene make_scene(std::uint64_t seed) {
  Rng rng = derive_rng(seed, Stream::scene_gen);
  Scene scene;
  scene.seed = seed;
  scene.bounds.min = Vec3(-4.0, -4.0, 0.0);
  scene.bounds.max = Vec3(4.0, 4.0, 2.0);
  scene.lidar_origin = Vec3(0.0, 0.0, 1.2);
  scene.rig = desk_rig();
  for (int c = 0; c < 3; ++c)
    scene.background[c] = clamp01(Vec3(0.55, 0.7, 0.9)[c] + rng.uniform(-0.05, 0.05));

  Primitive ground;
  ground.kind = PrimitiveKind::halfspace;
  ground.normal = Vec3(0.0, 0.0, 1.0);
  ground.offset = 0.0;
  ground.albedo = Vec3(rng.uniform(0.25, 0.45), rng.uniform(0.3, 0.5), rng.uniform(0.2, 0.4));
  scene.primitives.push_back(ground);

  int objects = 1 + static_cast<int>(rng.next_below(5));
  for (int i = 0; i < objects; ++i) {
    Primitive pr;
    bool is_sphere = rng.next_below(2) == 0;
    // Keep centers in the inner 80% of the bounds and clear of the camera ring.
    double angle = rng.uniform(0.0, 2.0 * kPi);
    double rho = rng.uniform(1.5, 3.2);
    pr.center.x() = rho * std::cos(angle);
    pr.center.y() = rho * std::sin(angle);
    if (is_sphere) {
      pr.kind = PrimitiveKind::sphere;
      pr.radius = rng.uniform(0.25, 0.6);
      pr.center.z() = rng.uniform(0.3, 1.9 - pr.radius);
    } else {
      pr.kind = PrimitiveKind::box;
      pr.half_extent = Vec3(rng.uniform(0.2, 0.55), rng.uniform(0.2, 0.55),
                            rng.uniform(0.2, 0.55));
      pr.center.z() = rng.uniform(0.25, 1.9 - pr.half_extent.z());
    }
    pr.albedo = Vec3(rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95),
                     rng.uniform(0.15, 0.95));
    scene.primitives.push_back(pr);
  }
  scene.validate();
  return scene;
}

std::vector<Scene> scene_suite(std::uint64_t seed, int count) {
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(make_scene(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(i))));
  return out;
}

namespace {

void require_keys(const json& j, std::initializer_list<const char*> keys,
                  const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
  for (const char* k : keys)
    if (!j.contains(k)) throw ConfigError(where + ": missing key '" + std::string(k) + "'");
}

Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json primitive_to(const Primitive& pr) {
  json j;
  j["albedo"] = vec3_to(pr.albedo);
  switch (pr.kind) {
    case PrimitiveKind::sphere:
      j["kind"] = "sphere";
      j["center"] = vec3_to(pr.center);
      j["radius"] = pr.radius;
      break;
    case PrimitiveKind::box:
      j["kind"] = "box";
      j["center"] = vec3_to(pr.center);
      j["half_extent"] = vec3_to(pr.half_extent);
      break;
    case PrimitiveKind::halfspace:
      j["kind"] = "halfspace";
      j["normal"] = vec3_to(pr.normal);
      j["offset"] = pr.offset;
      break;
  }
  return j;
}

Primitive primitive_from(const json& j) {
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("primitive: missing 'kind'");
  std::string kind = j.at("kind").get<std::string>();
  Primitive pr;
  if (kind == "sphere") {
    require_keys(j, {"kind", "center", "radius", "albedo"}, "primitive(sphere)");
    pr.kind = PrimitiveKind::sphere;
    pr.center = vec3_from(j.at("center"), "primitive.center");
    pr.radius = j.at("radius").get<double>();
  } else if (kind == "box") {
    require_keys(j, {"kind", "center", "half_extent", "albedo"}, "primitive(box)");
    pr.kind = PrimitiveKind::box;
    pr.center = vec3_from(j.at("center"), "primitive.center");
    pr.half_extent = vec3_from(j.at("half_extent"), "primitive.half_extent");
  } else if (kind == "halfspace") {
    require_keys(j, {"kind", "normal", "offset", "albedo"}, "primitive(halfspace)");
    pr.kind = PrimitiveKind::halfspace;
    pr.normal = vec3_from(j.at("normal"), "primitive.normal");
    pr.offset = j.at("offset").get<double>();
  } else {
    throw ConfigError("primitive: unknown kind '" + kind + "'");
  }
  pr.albedo = vec3_from(j.at("albedo"), "primitive.albedo");
  return pr;
}

}  // namespace

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("scene parse failure in " + path.string() + ": " + e.what());
  }
  require_keys(j, {"version", "seed", "bounds", "background", "lidar_origin",
                   "primitives", "rig"},
               "scene");
  if (j.at("version").get<int>() != 1) throw ConfigError("scene: unsupported version");
  Scene scene;
  scene.seed = j.at("seed").get<std::uint64_t>();
  require_keys(j.at("bounds"), {"min", "max"}, "scene.bounds");
  scene.bounds.min = vec3_from(j.at("bounds").at("min"), "bounds.min");
  scene.bounds.max = vec3_from(j.at("bounds").at("max"), "bounds.max");
  scene.background = vec3_from(j.at("background"), "scene.background");
  scene.lidar_origin = vec3_from(j.at("lidar_origin"), "scene.lidar_origin");
  if (!j.at("primitives").is_array()) throw ConfigError("scene.primitives: expected array");
  for (const json& pj : j.at("primitives")) scene.primitives.push_back(primitive_from(pj));
  const json& rj = j.at("rig");
  require_keys(rj, {"image_height", "image_width", "views"}, "scene.rig");
  scene.rig.image_height = rj.at("image_height").get<int>();
  scene.rig.image_width = rj.at("image_width").get<int>();
  if (!rj.at("views").is_array()) throw ConfigError("rig.views: expected array");
  for (const json& vj : rj.at("views")) {
    require_keys(vj, {"intrinsics", "lidar_to_camera"}, "rig.view");
    const json& kj = vj.at("intrinsics");
    const json& ej = vj.at("lidar_to_camera");
    if (!kj.is_array() || kj.size() != 9) throw ConfigError("rig.view: intrinsics needs 9 values");
    if (!ej.is_array() || ej.size() != 16)
      throw ConfigError("rig.view: lidar_to_camera needs 16 values");
    CameraView view;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        view.intrinsics(r, c) = kj[static_cast<std::size_t>(r * 3 + c)].get<double>();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        view.lidar_to_camera(r, c) = ej[static_cast<std::size_t>(r * 4 + c)].get<double>();
    scene.rig.views.push_back(view);
  }
  scene.validate();
  return scene;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  json j;
  j["version"] = 1;
  j["seed"] = scene.seed;
  j["bounds"] = {{"min", vec3_to(scene.bounds.min)}, {"max", vec3_to(scene.bounds.max)}};
  j["background"] = vec3_to(scene.background);
  j["lidar_origin"] = vec3_to(scene.lidar_origin);
  json prims = json::array();
  for (const Primitive& pr : scene.primitives) prims.push_back(primitive_to(pr));
  j["primitives"] = prims;
  json views = json::array();
  for (const CameraView& v : scene.rig.views) {
    json kj = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) kj.push_back(v.intrinsics(r, c));
    json ej = json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) ej.push_back(v.lidar_to_camera(r, c));
    views.push_back({{"intrinsics", kj}, {"lidar_to_camera", ej}});
  }
  j["rig"] = {{"image_height", scene.rig.image_height},
              {"image_width", scene.rig.image_width},
              {"views", views}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failure: " + path.string());
}

}  // namespace mvr
