#include "mvr/encoders.hpp"

#include <cmath>

#include "mvr/errors.hpp"

namespace mvr {

ToyEncoderParams ToyEncoderParams::make(int cf, int c) {
  if (cf < 1 || c < 1) throw ConfigError("encoder: channel counts must be positive");
  ToyEncoderParams p;
  p.img_conv1 = Conv2dParams::make(cf, 3);
  p.img_conv2 = Conv2dParams::make(cf, cf);
  p.embed_w = Tensor({static_cast<std::size_t>(c), 2});
  p.embed_b = Tensor({static_cast<std::size_t>(c)});
  p.point_conv = Conv3dParams::make(c, c);
  return p;
}

void ToyEncoderParams::validate() const {
  if (img_conv1.in_channels() != 3 ||
      img_conv1.out_channels() != img_conv2.in_channels() ||
      img_conv2.in_channels() != img_conv2.out_channels())
    throw ConfigError("encoder: image conv shapes inconsistent");
  if (embed_w.shape.size() != 2 || embed_w.shape[1] != 2 ||
      embed_w.shape[0] != embed_b.shape[0] ||
      static_cast<int>(embed_w.shape[0]) != point_conv.in_channels() ||
      point_conv.in_channels() != point_conv.out_channels())
    throw ConfigError("encoder: point branch shapes inconsistent");
  auto finite = [](const Tensor& t) {
    for (double v : t.data)
      if (!std::isfinite(v)) return false;
    return true;
  };
  if (!finite(img_conv1.w) || !finite(img_conv1.b) || !finite(img_conv2.w) ||
      !finite(img_conv2.b) || !finite(embed_w) || !finite(embed_b) ||
      !finite(point_conv.w) || !finite(point_conv.b))
    throw NumericError("encoder: non-finite parameter");
}

namespace {

void zero_masked(double* plane, const std::vector<std::uint8_t>& mask, int channels) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0)
      for (int c = 0; c < channels; ++c) plane[i * channels + c] = 0.0;
}

}  // namespace

ImageFeatureMap encode_image_sparse(const ImageRgb& img,
                                    const std::vector<std::uint8_t>& pixel_mask,
                                    const ToyEncoderParams& params,
                                    ImageEncodeCtx* ctx) {
  int h = img.height;
  int w = img.width;
  if (pixel_mask.size() != static_cast<std::size_t>(h) * w)
    throw ConfigError("encode_image_sparse: mask size mismatch");
  int cf = params.image_channels();

  std::vector<double> x0 = img.data;
  zero_masked(x0.data(), pixel_mask, 3);

  std::vector<double> z1(static_cast<std::size_t>(h) * w * cf);
  conv2d_forward(x0.data(), h, w, params.img_conv1, z1.data());
  zero_masked(z1.data(), pixel_mask, cf);

  std::vector<double> r1(z1.size());
  for (std::size_t i = 0; i < z1.size(); ++i) r1[i] = z1[i] > 0.0 ? z1[i] : 0.0;

  ImageFeatureMap out = ImageFeatureMap::zeros(h, w, cf);
  conv2d_forward(r1.data(), h, w, params.img_conv2, out.data.data());
  zero_masked(out.data.data(), pixel_mask, cf);

  if (ctx) {
    ctx->height = h;
    ctx->width = w;
    ctx->x0 = std::move(x0);
    ctx->z1 = std::move(z1);
    ctx->r1 = std::move(r1);
  }
  return out;
}

void encode_image_backward(const ImageFeatureMap& dout,
                           const std::vector<std::uint8_t>& pixel_mask,
                           const ToyEncoderParams& params, const ImageEncodeCtx& ctx,
                           ToyEncoderParams& grads) {
  int h = ctx.height;
  int w = ctx.width;
  std::vector<double> dz2 = dout.data;
  zero_masked(dz2.data(), pixel_mask, dout.channels);

  std::vector<double> dr1(ctx.r1.size(), 0.0);
  conv2d_backward(dz2.data(), ctx.r1.data(), h, w, params.img_conv2, dr1.data(),
                  &grads.img_conv2);

  for (std::size_t i = 0; i < dr1.size(); ++i)
    if (!(ctx.z1[i] > 0.0)) dr1[i] = 0.0;
  zero_masked(dr1.data(), pixel_mask, dout.channels);

  conv2d_backward(dr1.data(), ctx.x0.data(), h, w, params.img_conv1, nullptr,
                  &grads.img_conv1);
}

FeatureVolume encode_points(const std::vector<LidarPoint>& visible_points,
                            const VoxelSpec& spec, const ToyEncoderParams& params,
                            const BlockMask* bev_mask, PointEncodeCtx* ctx) {
  spec.validate();
  int c = params.point_channels();
  if (spec.feature_dim != c) throw ConfigError("encode_points: feature_dim mismatch");
  std::size_t n = visible_points.size();

  std::vector<double> embedded(n * static_cast<std::size_t>(c));
  const double* ew = params.embed_w.data.data();
  const double* eb = params.embed_b.data.data();
  std::vector<Vec3> positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    positions[i] = visible_points[i].position;
    double in0 = visible_points[i].intensity;
    double in1 = visible_points[i].position.z();
    for (int k = 0; k < c; ++k)
      embedded[i * c + k] = ew[2 * k] * in0 + ew[2 * k + 1] * in1 + eb[k];
  }

  VoxelizeResult vox = voxelize_points(positions, embedded, spec);

  int nx = spec.resolution.x(), ny = spec.resolution.y(), nz = spec.resolution.z();
  // Convolution sites: the 3x3x3 dilation of the occupied voxel set.
  std::vector<std::uint8_t> site(spec.voxel_count(), 0);
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy)
      for (int iz = 0; iz < nz; ++iz) {
        if (vox.count[vox.volume.flat_voxel(ix, iy, iz)] == 0) continue;
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dz = -1; dz <= 1; ++dz) {
              int jx = ix + dx, jy = iy + dy, jz = iz + dz;
              if (jx < 0 || jx >= nx || jy < 0 || jy >= ny || jz < 0 || jz >= nz)
                continue;
              site[vox.volume.flat_voxel(jx, jy, jz)] = 1;
            }
      }

  FeatureVolume out = FeatureVolume::zeros(spec);
  conv3d_forward(vox.volume.data.data(), nx, ny, nz, params.point_conv,
                 out.data.data());
  for (std::size_t v = 0; v < site.size(); ++v)
    if (site[v] == 0)
      for (int k = 0; k < c; ++k) out.data[v * c + k] = 0.0;

  std::vector<std::uint8_t> bev_hidden(spec.voxel_count(), 0);
  if (bev_mask) {
    for (int ix = 0; ix < nx; ++ix) {
      int br = ix / bev_mask->block_size;
      for (int iy = 0; iy < ny; ++iy) {
        int bc = iy / bev_mask->block_size;
        if (br >= bev_mask->rows || bc >= bev_mask->cols || !bev_mask->at(br, bc))
          continue;
        for (int iz = 0; iz < nz; ++iz) {
          std::size_t v = out.flat_voxel(ix, iy, iz);
          bev_hidden[v] = 1;
          for (int k = 0; k < c; ++k) out.data[v * c + k] = 0.0;
        }
      }
    }
  }

  if (ctx) {
    ctx->points = visible_points;
    ctx->embedded = std::move(embedded);
    ctx->vox = std::move(vox);
    ctx->site = std::move(site);
    ctx->bev_hidden = std::move(bev_hidden);
  }
  return out;
}

void encode_points_backward(const FeatureVolume& dout, const ToyEncoderParams& params,
                            const PointEncodeCtx& ctx, ToyEncoderParams& grads) {
  const VoxelSpec& spec = ctx.vox.volume.spec;
  int c = params.point_channels();
  int nx = spec.resolution.x(), ny = spec.resolution.y(), nz = spec.resolution.z();

  std::vector<double> dconv_out = dout.data;
  for (std::size_t v = 0; v < ctx.site.size(); ++v)
    if (ctx.site[v] == 0 || ctx.bev_hidden[v] != 0)
      for (int k = 0; k < c; ++k) dconv_out[v * c + k] = 0.0;

  std::vector<double> dvol(ctx.vox.volume.data.size(), 0.0);
  conv3d_backward(dconv_out.data(), ctx.vox.volume.data.data(), nx, ny, nz,
                  params.point_conv, dvol.data(), &grads.point_conv);

  double* dew = grads.embed_w.data.data();
  double* deb = grads.embed_b.data.data();
  for (std::size_t i = 0; i < ctx.points.size(); ++i) {
    int v = ctx.vox.voxel_of_point[i];
    if (v < 0) continue;
    double inv_n = 1.0 / ctx.vox.count[static_cast<std::size_t>(v)];
    double in0 = ctx.points[i].intensity;
    double in1 = ctx.points[i].position.z();
    for (int k = 0; k < c; ++k) {
      double g = dvol[static_cast<std::size_t>(v) * c + k] * inv_n;
      dew[2 * k] += g * in0;
      dew[2 * k + 1] += g * in1;
      deb[k] += g;
    }
  }
}

}  // namespace mvr
