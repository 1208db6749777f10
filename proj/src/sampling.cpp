#include "mvr/sampling.hpp"

#include <algorithm>
#include <numeric>

namespace mvr {

RayStrategy ray_strategy_from_string(const std::string& s) {
  if (s == "dilation") return RayStrategy::dilation;
  if (s == "random") return RayStrategy::random;
  if (s == "depth_aware") return RayStrategy::depth_aware;
  throw ConfigError("unknown ray strategy '" + s + "'");
}

std::string to_string(RayStrategy s) {
  switch (s) {
    case RayStrategy::dilation: return "dilation";
    case RayStrategy::random: return "random";
    case RayStrategy::depth_aware: return "depth_aware";
  }
  return "?";
}

void RayBudget::validate() const {
  if (interval < 1) throw ConfigError("ray budget: interval must be >= 1");
  if (rays_per_view < 1) throw ConfigError("ray budget: rays_per_view must be >= 1");
  if (points_per_ray < 2) throw ConfigError("ray budget: points_per_ray must be >= 2");
}

std::vector<PixelSample> sample_dilation(const CameraRig& rig, int interval) {
  if (interval < 1) throw ConfigError("sample_dilation: interval must be >= 1");
  std::vector<PixelSample> out;
  for (int view = 0; view < rig.view_count(); ++view) {
    for (int b = 0; b * interval + 0.5 < rig.image_height; ++b) {
      for (int a = 0; a * interval + 0.5 < rig.image_width; ++a) {
        PixelSample s;
        s.view = view;
        s.pixel = Vec2(a * interval + 0.5, b * interval + 0.5);
        out.push_back(s);
      }
    }
  }
  return out;
}

namespace {

// Partial Fisher-Yates: the first k entries of a shuffled [0, n) index range.
std::vector<int> draw_without_replacement(int n, int k, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Vec2 pixel_center(int u, int v) { return Vec2(u + 0.5, v + 0.5); }

}  // namespace

std::vector<PixelSample> sample_random(const CameraRig& rig, int k, Rng& rng) {
  int total = rig.image_height * rig.image_width;
  if (k > total) throw ConfigError("sample_random: budget exceeds pixel count");
  std::vector<PixelSample> out;
  out.reserve(static_cast<std::size_t>(k) * static_cast<std::size_t>(rig.view_count()));
  for (int view = 0; view < rig.view_count(); ++view) {
    for (int i : draw_without_replacement(total, k, rng)) {
      PixelSample s;
      s.view = view;
      s.pixel = pixel_center(i % rig.image_width, i / rig.image_width);
      out.push_back(s);
    }
  }
  return out;
}

std::vector<PixelSample> sample_depth_aware(const CameraRig& rig,
                                            const std::vector<DepthMap>& depth_maps,
                                            int k, Rng& rng) {
  if (depth_maps.size() != static_cast<std::size_t>(rig.view_count()))
    throw ConfigError("sample_depth_aware: depth map count mismatch");
  int total = rig.image_height * rig.image_width;
  if (k > total) throw ConfigError("sample_depth_aware: budget exceeds pixel count");
  std::vector<PixelSample> out;
  for (int view = 0; view < rig.view_count(); ++view) {
    const DepthMap& map = depth_maps[static_cast<std::size_t>(view)];
    auto candidates = map.valid_pixels();
    int n_cand = static_cast<int>(candidates.size());
    int take = std::min(k, n_cand);
    std::vector<int> order(static_cast<std::size_t>(n_cand));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int i = 0; i < take; ++i) {
      auto [u, v] = candidates[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      PixelSample s;
      s.view = view;
      s.pixel = pixel_center(u, v);
      s.lidar_z = map.at(u, v);
      out.push_back(s);
    }
    int fill = k - take;
    if (fill > 0) {
      // Uniform over the complement of the candidate set, no supervision.
      std::vector<int> pool;
      pool.reserve(static_cast<std::size_t>(total - n_cand));
      for (int v = 0; v < rig.image_height; ++v)
        for (int u = 0; u < rig.image_width; ++u)
          if (!map.has(u, v)) pool.push_back(v * rig.image_width + u);
      rng.shuffle(pool);
      for (int i = 0; i < fill && i < static_cast<int>(pool.size()); ++i) {
        PixelSample s;
        s.view = view;
        s.pixel = pixel_center(pool[static_cast<std::size_t>(i)] % rig.image_width,
                               pool[static_cast<std::size_t>(i)] / rig.image_width);
        out.push_back(s);
      }
    }
  }
  return out;
}

Eigen::VectorXd sample_ray_points(double t_near, double t_far, int d, Rng& rng,
                                  bool stratified) {
  if (!(t_near < t_far)) throw NumericError("sample_ray_points: degenerate interval");
  if (d < 1) throw ConfigError("sample_ray_points: need at least one point");
  Eigen::VectorXd t(d);
  double width = (t_far - t_near) / d;
  for (int j = 0; j < d; ++j) {
    double u = stratified ? rng.uniform() : 0.5;
    t(j) = t_near + (j + u) * width;
  }
  // Guard against equal neighbors from draws at bin edges.
  for (int j = 1; j < d; ++j)
    if (!(t(j) > t(j - 1))) t(j) = std::nextafter(t(j - 1), t_far + width);
  return t;
}

}  // namespace mvr
