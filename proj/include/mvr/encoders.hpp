#pragma once

#include <cstdint>
#include <vector>

#include "mvr/conv.hpp"
#include "mvr/image.hpp"
#include "mvr/masking.hpp"
#include "mvr/voxelgrid.hpp"

namespace mvr {

// Two-layer image branch plus embed/voxelize/convolve point branch. The same
// struct doubles as the gradient accumulator.
struct ToyEncoderParams {
  Conv2dParams img_conv1;   // C_f <- 3
  Conv2dParams img_conv2;   // C_f <- C_f
  Tensor embed_w;           // (C, 2) over (intensity, height)
  Tensor embed_b;           // (C)
  Conv3dParams point_conv;  // C <- C

  static ToyEncoderParams make(int cf, int c);
  int image_channels() const { return img_conv1.out_channels(); }
  int point_channels() const { return point_conv.out_channels(); }
  void validate() const;
};

struct ImageEncodeCtx {
  int height = 0;
  int width = 0;
  std::vector<double> x0;  // masked input, H*W*3
  std::vector<double> z1;  // first layer output, re-zeroed, pre max(0,.)
  std::vector<double> r1;  // post max(0,.)
};

// Mask-zero / convolve / re-zero per layer: outputs at masked positions are
// exactly zero and visible outputs never read masked pixel contents.
ImageFeatureMap encode_image_sparse(const ImageRgb& img,
                                    const std::vector<std::uint8_t>& pixel_mask,
                                    const ToyEncoderParams& params,
                                    ImageEncodeCtx* ctx = nullptr);

void encode_image_backward(const ImageFeatureMap& dout,
                           const std::vector<std::uint8_t>& pixel_mask,
                           const ToyEncoderParams& params, const ImageEncodeCtx& ctx,
                           ToyEncoderParams& grads);

struct PointEncodeCtx {
  std::vector<LidarPoint> points;
  std::vector<double> embedded;    // n * C
  VoxelizeResult vox;              // pre-conv volume + bookkeeping
  std::vector<std::uint8_t> site;  // voxels the convolution is evaluated at
  std::vector<std::uint8_t> bev_hidden;  // voxels zeroed by the BEV mask
};

// embed -> voxelize -> 3x3x3 convolution evaluated only where the occupancy
// dilation reaches; masked BEV blocks zeroed after the convolution when a
// mask is given.
FeatureVolume encode_points(const std::vector<LidarPoint>& visible_points,
                            const VoxelSpec& spec, const ToyEncoderParams& params,
                            const BlockMask* bev_mask = nullptr,
                            PointEncodeCtx* ctx = nullptr);

void encode_points_backward(const FeatureVolume& dout, const ToyEncoderParams& params,
                            const PointEncodeCtx& ctx, ToyEncoderParams& grads);

}  // namespace mvr
