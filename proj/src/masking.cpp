#include "mvr/masking.hpp"

#include <cmath>
#include <numeric>

namespace mvr {

int BlockMask::masked_count() const {
  int n = 0;
  for (std::uint8_t v : masked) n += v != 0;
  return n;
}

BlockMask generate_block_mask(int rows, int cols, double ratio, int block_size,
                              Rng& rng) {
  if (rows <= 0 || cols <= 0) throw ConfigError("block mask: grid dims must be positive");
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("block mask: ratio outside [0,1]");
  if (block_size < 1) throw ConfigError("block mask: block size must be >= 1");
  BlockMask mask;
  mask.rows = rows;
  mask.cols = cols;
  mask.block_size = block_size;
  mask.ratio = ratio;
  mask.masked.assign(static_cast<std::size_t>(rows) * cols, 0);
  int total = rows * cols;
  int want = static_cast<int>(std::lround(ratio * total));
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (int i = 0; i < want; ++i) mask.masked[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return mask;
}

std::vector<std::uint8_t> upsample_mask(const BlockMask& mask, int factor) {
  if (factor != mask.block_size)
    throw ConfigError("upsample_mask: factor must equal the mask block size");
  int h = mask.rows * factor;
  int w = mask.cols * factor;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w, 0);
  for (int v = 0; v < h; ++v) {
    int br = v / factor;
    for (int u = 0; u < w; ++u)
      out[static_cast<std::size_t>(v) * w + u] = mask.at(br, u / factor) ? 1 : 0;
  }
  return out;
}

ImageRgb mask_image(const ImageRgb& img, const std::vector<std::uint8_t>& pixel_mask) {
  if (pixel_mask.size() != static_cast<std::size_t>(img.height) * img.width)
    throw ConfigError("mask_image: mask size mismatch");
  ImageRgb out = img;
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      if (pixel_mask[static_cast<std::size_t>(v) * img.width + u] != 0) {
        double* px = out.at(u, v);
        px[0] = px[1] = px[2] = 0.0;
      }
  return out;
}

std::vector<LidarPoint> mask_points(const std::vector<LidarPoint>& points,
                                    const BlockMask& bev_mask, const VoxelSpec& spec) {
  Vec3 cell = spec.voxel_size();
  std::vector<LidarPoint> kept;
  kept.reserve(points.size());
  for (const LidarPoint& pt : points) {
    double gx = (pt.position.x() - spec.bounds.min.x()) / cell.x();
    double gy = (pt.position.y() - spec.bounds.min.y()) / cell.y();
    int ix = static_cast<int>(std::floor(gx));
    int iy = static_cast<int>(std::floor(gy));
    bool in_grid = ix >= 0 && ix < spec.resolution.x() && iy >= 0 && iy < spec.resolution.y();
    if (in_grid) {
      int br = ix / bev_mask.block_size;
      int bc = iy / bev_mask.block_size;
      if (br < bev_mask.rows && bc < bev_mask.cols && bev_mask.at(br, bc)) continue;
    }
    kept.push_back(pt);
  }
  return kept;
}

}  // namespace mvr
