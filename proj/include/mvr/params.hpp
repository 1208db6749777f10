#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvr/encoders.hpp"
#include "mvr/renderer.hpp"
#include "mvr/rng.hpp"
#include "mvr/voxelgrid.hpp"

namespace mvr {

enum class Modality { camera, lidar, fused };

Modality modality_from_string(const std::string& s);
std::string to_string(Modality m);

// Width/shape knobs; everything downstream derives from these plus bounds.
struct ModelDims {
  int image_channels = 16;   // C_f
  int point_channels = 16;   // C (must equal C_f under fused)
  int depth_bins = 32;       // D_b
  int render_channels = 32;  // projection output width
  int mlp_width = 32;
  int sdf_layers = 6;
  int rgb_layers = 4;
  int geo_dim = 15;
  Eigen::Vector3i voxel_resolution{32, 32, 8};

  void validate() const;
};

struct ModelParams {
  ModelDims dims;
  Aabb bounds;  // scene/volume bounds, shared with the scene suite
  ToyEncoderParams encoder;
  DepthHeadParams depth_head;
  Conv3dParams projection;  // C -> render_channels
  DecoderParams decoder;
  Sharpness sharpness;

  // Allocates every tensor and draws the documented random initialization.
  static ModelParams init(const ModelDims& dims, const Aabb& bounds,
                          std::uint64_t seed);
  VoxelSpec volume_spec() const;  // feature_dim = point_channels
  VoxelSpec render_spec() const;  // feature_dim = render_channels
  void validate() const;
};

struct ModelGrads {
  ToyEncoderParams encoder;  // reused as an accumulator
  Tensor depth_w, depth_b;
  Conv3dParams projection;
  DecoderGrads decoder;  // includes sharpness_raw

  static ModelGrads zeros_like(const ModelParams& p);
  void clear();
  void add(const ModelGrads& other);
};

// Flat view of one parameter/gradient buffer; enumeration order is fixed and
// shared between ModelParams and ModelGrads so optimizers can walk them in
// lockstep.
struct ParamView {
  std::string path;
  double* data = nullptr;
  std::size_t size = 0;
  std::vector<std::size_t> shape;
};

std::vector<ParamView> param_views(ModelParams& p);
std::vector<ParamView> param_views(ModelGrads& g);
std::size_t param_count(const ModelParams& p);

}  // namespace mvr
