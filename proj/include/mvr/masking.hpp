#pragma once

#include <cstdint>
#include <vector>

#include "mvr/image.hpp"
#include "mvr/rng.hpp"
#include "mvr/voxelgrid.hpp"

namespace mvr {

// Block-grid mask; true cells are hidden from the encoders.
struct BlockMask {
  int rows = 0;
  int cols = 0;
  int block_size = 1;   // pixels (image) or voxels (BEV) per block side
  double ratio = 0.0;   // requested fraction

  std::vector<std::uint8_t> masked;  // rows * cols

  bool at(int r, int c) const {
    return masked[static_cast<std::size_t>(r) * cols + c] != 0;
  }
  int masked_count() const;
};

// Exactly round(ratio * rows * cols) cells masked, chosen uniformly without
// replacement via a seeded shuffle.
BlockMask generate_block_mask(int rows, int cols, double ratio, int block_size,
                              Rng& rng);

// Nearest-neighbor expansion to a (rows*factor) x (cols*factor) pixel mask.
// factor must equal the mask's block_size.
std::vector<std::uint8_t> upsample_mask(const BlockMask& mask, int factor);

// Masked pixels zeroed, visible pixels untouched.
ImageRgb mask_image(const ImageRgb& img, const std::vector<std::uint8_t>& pixel_mask);

// Drops points whose (x, y) voxel falls in a masked BEV block (grid rows
// follow the voxel X axis, cols the Y axis). Points outside the grid pass
// through untouched.
std::vector<LidarPoint> mask_points(const std::vector<LidarPoint>& points,
                                    const BlockMask& bev_mask, const VoxelSpec& spec);

}  // namespace mvr
