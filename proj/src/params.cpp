#include "mvr/params.hpp"

#include <cmath>

#include "mvr/errors.hpp"

namespace mvr {

Modality modality_from_string(const std::string& s) {
  if (s == "camera") return Modality::camera;
  if (s == "lidar") return Modality::lidar;
  if (s == "fused") return Modality::fused;
  throw ConfigError("unknown modality '" + s + "'");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::camera: return "camera";
    case Modality::lidar: return "lidar";
    case Modality::fused: return "fused";
  }
  return "?";
}

void ModelDims::validate() const {
  if (image_channels < 1 || point_channels < 1 || depth_bins < 2 ||
      render_channels < 1 || mlp_width < 1 || geo_dim < 0)
    throw ConfigError("model dims: sizes out of range");
  if (image_channels != point_channels)
    throw ConfigError("model dims: image and point channels must match "
                      "(both branches write the same voxel width)");
  if (sdf_layers < 2 || rgb_layers < 2)
    throw ConfigError("model dims: decoders need at least two layers");
  if ((voxel_resolution.array() < 2).any())
    throw ConfigError("model dims: voxel resolution components must be >= 2");
}

VoxelSpec ModelParams::volume_spec() const {
  VoxelSpec s;
  s.resolution = dims.voxel_resolution;
  s.bounds = bounds;
  s.feature_dim = dims.point_channels;
  return s;
}

VoxelSpec ModelParams::render_spec() const {
  VoxelSpec s;
  s.resolution = dims.voxel_resolution;
  s.bounds = bounds;
  s.feature_dim = dims.render_channels;
  return s;
}

void ModelParams::validate() const {
  dims.validate();
  if ((bounds.max.array() <= bounds.min.array()).any())
    throw ConfigError("model: degenerate bounds");
  encoder.validate();
  depth_head.validate();
  decoder.validate();
  if (encoder.image_channels() != dims.image_channels ||
      encoder.point_channels() != dims.point_channels)
    throw ConfigError("model: encoder channel mismatch");
  if (static_cast<int>(depth_head.w.shape[1]) != dims.image_channels ||
      depth_head.bins() != dims.depth_bins)
    throw ConfigError("model: depth head shape mismatch");
  if (projection.in_channels() != dims.point_channels ||
      projection.out_channels() != dims.render_channels)
    throw ConfigError("model: projection shape mismatch");
  if (decoder.feature_dim() != dims.render_channels ||
      decoder.geo_dim() != dims.geo_dim)
    throw ConfigError("model: decoder shape mismatch");
  if (!std::isfinite(sharpness.raw)) throw NumericError("model: non-finite sharpness");
}

namespace {

std::vector<int> mlp_dims(int input, int width, int layers, int output) {
  std::vector<int> d;
  d.push_back(input);
  for (int i = 0; i < layers - 1; ++i) d.push_back(width);
  d.push_back(output);
  return d;
}

void fill_normal(Tensor& t, double stddev, Rng& rng) {
  for (double& v : t.data) v = stddev * rng.normal();
}

}  // namespace

ModelParams ModelParams::init(const ModelDims& dims, const Aabb& bounds,
                              std::uint64_t seed) {
  dims.validate();
  ModelParams p;
  p.dims = dims;
  p.bounds = bounds;
  p.encoder = ToyEncoderParams::make(dims.image_channels, dims.point_channels);
  p.depth_head = DepthHeadParams::make(dims.depth_bins, dims.image_channels);
  double diagonal = (bounds.max - bounds.min).norm();
  p.depth_head.bin_min = 0.5;
  p.depth_head.bin_max = 1.5 * diagonal;
  p.projection = Conv3dParams::make(dims.render_channels, dims.point_channels);
  p.decoder.sdf = MlpParams::make(
      mlp_dims(3 + dims.render_channels, dims.mlp_width, dims.sdf_layers,
               1 + dims.geo_dim),
      MlpHead::affine);
  p.decoder.rgb = MlpParams::make(
      mlp_dims(3 + dims.render_channels + 3 + 3 + dims.geo_dim, dims.mlp_width,
               dims.rgb_layers, 3),
      MlpHead::logistic);
  p.sharpness.raw = std::log(10.0);

  // One stream per tensor keeps the draw independent of other tensor sizes.
  int slot = 0;
  auto draw = [&](Tensor& t, double stddev) {
    Rng r = derive_rng(seed, Stream::param_init, static_cast<std::uint64_t>(slot++));
    fill_normal(t, stddev, r);
  };
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };

  draw(p.encoder.img_conv1.w, he(3 * 9));
  draw(p.encoder.img_conv1.b, 0.0);
  draw(p.encoder.img_conv2.w, he(static_cast<std::size_t>(dims.image_channels) * 9));
  draw(p.encoder.img_conv2.b, 0.0);
  draw(p.encoder.embed_w, he(2));
  draw(p.encoder.embed_b, 0.0);
  draw(p.encoder.point_conv.w, he(static_cast<std::size_t>(dims.point_channels) * 27));
  draw(p.encoder.point_conv.b, 0.0);
  draw(p.depth_head.w, 0.1 / std::sqrt(static_cast<double>(dims.image_channels)));
  draw(p.depth_head.b, 0.0);
  draw(p.projection.w, he(static_cast<std::size_t>(dims.point_channels) * 27));
  draw(p.projection.b, 0.0);
  auto draw_mlp = [&](MlpParams& mlp, double out_scale, double out_bias) {
    int n = mlp.layer_count();
    for (int i = 0; i < n; ++i) {
      double s = he(mlp.weights[static_cast<std::size_t>(i)].shape[1]);
      if (i == n - 1) s *= out_scale;
      draw(mlp.weights[static_cast<std::size_t>(i)], s);
      draw(mlp.biases[static_cast<std::size_t>(i)], 0.0);
    }
    mlp.biases.back().data[0] += out_bias;
  };
  // Positive SDF bias starts space empty instead of solid.
  draw_mlp(p.decoder.sdf, 0.1, 0.3);
  draw_mlp(p.decoder.rgb, 0.1, 0.0);
  return p;
}

ModelGrads ModelGrads::zeros_like(const ModelParams& p) {
  ModelGrads g;
  g.encoder = ToyEncoderParams::make(p.dims.image_channels, p.dims.point_channels);
  g.depth_w = Tensor(p.depth_head.w.shape);
  g.depth_b = Tensor(p.depth_head.b.shape);
  g.projection = Conv3dParams::make(p.dims.render_channels, p.dims.point_channels);
  g.decoder = DecoderGrads::zeros_like(p.decoder);
  return g;
}

void ModelGrads::clear() {
  auto zero = [](Tensor& t) { t.fill(0.0); };
  zero(encoder.img_conv1.w);
  zero(encoder.img_conv1.b);
  zero(encoder.img_conv2.w);
  zero(encoder.img_conv2.b);
  zero(encoder.embed_w);
  zero(encoder.embed_b);
  zero(encoder.point_conv.w);
  zero(encoder.point_conv.b);
  zero(depth_w);
  zero(depth_b);
  zero(projection.w);
  zero(projection.b);
  for (auto& t : decoder.sdf.weights) t.fill(0.0);
  for (auto& t : decoder.sdf.biases) t.fill(0.0);
  for (auto& t : decoder.rgb.weights) t.fill(0.0);
  for (auto& t : decoder.rgb.biases) t.fill(0.0);
  decoder.sharpness_raw = 0.0;
}

void ModelGrads::add(const ModelGrads& other) {
  auto axpy = [](Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };
  axpy(encoder.img_conv1.w, other.encoder.img_conv1.w);
  axpy(encoder.img_conv1.b, other.encoder.img_conv1.b);
  axpy(encoder.img_conv2.w, other.encoder.img_conv2.w);
  axpy(encoder.img_conv2.b, other.encoder.img_conv2.b);
  axpy(encoder.embed_w, other.encoder.embed_w);
  axpy(encoder.embed_b, other.encoder.embed_b);
  axpy(encoder.point_conv.w, other.encoder.point_conv.w);
  axpy(encoder.point_conv.b, other.encoder.point_conv.b);
  axpy(depth_w, other.depth_w);
  axpy(depth_b, other.depth_b);
  axpy(projection.w, other.projection.w);
  axpy(projection.b, other.projection.b);
  for (std::size_t i = 0; i < decoder.sdf.weights.size(); ++i) {
    axpy(decoder.sdf.weights[i], other.decoder.sdf.weights[i]);
    axpy(decoder.sdf.biases[i], other.decoder.sdf.biases[i]);
  }
  for (std::size_t i = 0; i < decoder.rgb.weights.size(); ++i) {
    axpy(decoder.rgb.weights[i], other.decoder.rgb.weights[i]);
    axpy(decoder.rgb.biases[i], other.decoder.rgb.biases[i]);
  }
  decoder.sharpness_raw += other.decoder.sharpness_raw;
}

namespace {

void push(std::vector<ParamView>& out, const std::string& path, Tensor& t) {
  out.push_back({path, t.data.data(), t.data.size(), t.shape});
}

void push_mlp(std::vector<ParamView>& out, const std::string& prefix,
              std::vector<Tensor>& weights, std::vector<Tensor>& biases) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    std::string layer = prefix + "/layer" + std::to_string(i);
    push(out, layer + "/w", weights[i]);
    push(out, layer + "/b", biases[i]);
  }
}

}  // namespace

std::vector<ParamView> param_views(ModelParams& p) {
  std::vector<ParamView> out;
  push(out, "encoder/img_conv1/w", p.encoder.img_conv1.w);
  push(out, "encoder/img_conv1/b", p.encoder.img_conv1.b);
  push(out, "encoder/img_conv2/w", p.encoder.img_conv2.w);
  push(out, "encoder/img_conv2/b", p.encoder.img_conv2.b);
  push(out, "encoder/embed/w", p.encoder.embed_w);
  push(out, "encoder/embed/b", p.encoder.embed_b);
  push(out, "encoder/point_conv/w", p.encoder.point_conv.w);
  push(out, "encoder/point_conv/b", p.encoder.point_conv.b);
  push(out, "depth_head/w", p.depth_head.w);
  push(out, "depth_head/b", p.depth_head.b);
  push(out, "projection/w", p.projection.w);
  push(out, "projection/b", p.projection.b);
  push_mlp(out, "decoder/sdf", p.decoder.sdf.weights, p.decoder.sdf.biases);
  push_mlp(out, "decoder/rgb", p.decoder.rgb.weights, p.decoder.rgb.biases);
  out.push_back({"sharpness/raw", &p.sharpness.raw, 1, {1}});
  return out;
}

std::vector<ParamView> param_views(ModelGrads& g) {
  std::vector<ParamView> out;
  push(out, "encoder/img_conv1/w", g.encoder.img_conv1.w);
  push(out, "encoder/img_conv1/b", g.encoder.img_conv1.b);
  push(out, "encoder/img_conv2/w", g.encoder.img_conv2.w);
  push(out, "encoder/img_conv2/b", g.encoder.img_conv2.b);
  push(out, "encoder/embed/w", g.encoder.embed_w);
  push(out, "encoder/embed/b", g.encoder.embed_b);
  push(out, "encoder/point_conv/w", g.encoder.point_conv.w);
  push(out, "encoder/point_conv/b", g.encoder.point_conv.b);
  push(out, "depth_head/w", g.depth_w);
  push(out, "depth_head/b", g.depth_b);
  push(out, "projection/w", g.projection.w);
  push(out, "projection/b", g.projection.b);
  push_mlp(out, "decoder/sdf", g.decoder.sdf.weights, g.decoder.sdf.biases);
  push_mlp(out, "decoder/rgb", g.decoder.rgb.weights, g.decoder.rgb.biases);
  out.push_back({"sharpness/raw", &g.decoder.sharpness_raw, 1, {1}});
  return out;
}

std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const ParamView& v : param_views(const_cast<ModelParams&>(p))) n += v.size;
  return n;
}

}  // namespace mvr
