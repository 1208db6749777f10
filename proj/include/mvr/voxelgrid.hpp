#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mvr/conv.hpp"
#include "mvr/geometry.hpp"
#include "mvr/tensor.hpp"

namespace mvr {

struct VoxelSpec {
  Eigen::Vector3i resolution = Eigen::Vector3i::Zero();  // X, Y, Z
  Aabb bounds;
  int feature_dim = 0;

  Vec3 voxel_size() const;
  Vec3 voxel_center(int ix, int iy, int iz) const;
  std::size_t voxel_count() const;
  void validate() const;
};

// Dense X x Y x Z x C feature grid; features live at voxel centers.
// Memory order: x outermost, then y, z, channel.
struct FeatureVolume {
  VoxelSpec spec;
  std::vector<double> data;

  static FeatureVolume zeros(const VoxelSpec& spec);
  std::size_t flat_voxel(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * spec.resolution.y() + iy) *
               spec.resolution.z() +
           iz;
  }
  double* at(int ix, int iy, int iz) {
    return data.data() + flat_voxel(ix, iy, iz) * spec.feature_dim;
  }
  const double* at(int ix, int iy, int iz) const {
    return data.data() + flat_voxel(ix, iy, iz) * spec.feature_dim;
  }
};

// Per-view feature plane, H_f x W_f x C with channel fastest. `stride` maps
// input pixel coordinates to feature coordinates (1 at desk scale).
struct ImageFeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;
  std::vector<double> data;

  static ImageFeatureMap zeros(int h, int w, int c, int stride = 1);
  double* at(int u, int v) {
    return data.data() + (static_cast<std::size_t>(v) * width + u) * channels;
  }
  const double* at(int u, int v) const {
    return data.data() + (static_cast<std::size_t>(v) * width + u) * channels;
  }
};

// C-vector blend of the 8 voxel centers around p. p must be inside bounds
// (1e-9 tolerance band); border cells extrapolate their trilinear function.
void trilinear_sample(const FeatureVolume& vol, const Vec3& p, double* out);

// Blend plus its analytic Jacobian w.r.t. p; jac is C x 3 row-major.
void trilinear_sample_grad(const FeatureVolume& vol, const Vec3& p, double* out,
                           double* jac);

// Adjoint of trilinear_sample: distributes dval onto the 8 corner features.
void trilinear_scatter(FeatureVolume& dvol, const Vec3& p, const double* dval);

// Bilinear blend at continuous input-pixel coordinates uv.
void bilinear_sample(const ImageFeatureMap& map, const Vec2& uv, double* out);
void bilinear_scatter(ImageFeatureMap& dmap, const Vec2& uv, const double* dval);

// The four feature-grid taps and weights used by bilinear_sample at uv.
struct BilinearTaps {
  int u0 = 0, v0 = 0;  // low corner (clamped)
  double fu = 0.0, fv = 0.0;
  double weight(int du, int dv) const {
    return (du ? fu : 1.0 - fu) * (dv ? fv : 1.0 - fv);
  }
};
BilinearTaps bilinear_taps(const ImageFeatureMap& map, const Vec2& uv);

// 1x1 conv + softmax over depth bins, evaluated per feature-map pixel.
// Bin centers are cell midpoints of [bin_min, bin_max] split into `bins`.
struct DepthHeadParams {
  Tensor w;  // (bins, channels)
  Tensor b;  // (bins)
  double bin_min = 0.0;
  double bin_max = 0.0;

  static DepthHeadParams make(int bins, int channels);
  int bins() const { return static_cast<int>(b.shape[0]); }
  double bin_center(int i) const;
  void validate() const;
};

std::vector<ImageFeatureMap> depth_distributions(const std::vector<ImageFeatureMap>& maps,
                                                 const DepthHeadParams& head);
void depth_distributions_backward(const std::vector<ImageFeatureMap>& maps,
                                  const std::vector<ImageFeatureMap>& dists,
                                  const std::vector<ImageFeatureMap>& ddists,
                                  const DepthHeadParams& head,
                                  std::vector<ImageFeatureMap>& dmaps, Tensor& dw,
                                  Tensor& db);

// Lift-splat accumulation: every voxel center projects into each view,
// gathers its bilinear feature, scales it by the depth-distribution value at
// the voxel's camera depth (bilinear over pixels, linear over bins), and
// averages over the views that see it. Linear in `maps` for fixed `dists`.
FeatureVolume lift_with_distributions(const std::vector<ImageFeatureMap>& maps,
                                      const std::vector<ImageFeatureMap>& dists,
                                      const CameraRig& rig, const VoxelSpec& spec,
                                      const DepthHeadParams& head);
void lift_backward(const FeatureVolume& dvol, const std::vector<ImageFeatureMap>& maps,
                   const std::vector<ImageFeatureMap>& dists, const CameraRig& rig,
                   const VoxelSpec& spec, const DepthHeadParams& head,
                   std::vector<ImageFeatureMap>& dmaps,
                   std::vector<ImageFeatureMap>& ddists);

// Convenience composition: distributions from the head, then the lift.
FeatureVolume lift_image_features(const std::vector<ImageFeatureMap>& maps,
                                  const CameraRig& rig, const VoxelSpec& spec,
                                  const DepthHeadParams& head);

struct VoxelizeResult {
  FeatureVolume volume;
  std::vector<int> count;           // points per voxel
  std::vector<int> voxel_of_point;  // flat voxel index, -1 when outside bounds
};

// Scatter-mean of per-point features into voxels. Contributions are value-
// sorted before compensated summation, so the result is exactly permutation
// invariant. The Z axis is a normal grid axis, never pooled.
VoxelizeResult voxelize_points(const std::vector<Vec3>& positions,
                               const std::vector<double>& features,
                               const VoxelSpec& spec);

// Single 3x3x3 convolution mapping the fused volume to the render feature
// width; zero-padded borders.
FeatureVolume projection_layer(const FeatureVolume& vol, const Conv3dParams& params);
void projection_layer_backward(const FeatureVolume& dout, const FeatureVolume& in,
                               const Conv3dParams& params, FeatureVolume* din,
                               Conv3dParams* dparams);

}  // namespace mvr
