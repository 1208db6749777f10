#include "mvr/voxelgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvr {

namespace {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Kahan {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    double y = v - carry;
    double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

struct CellCoord {
  int i0[3];
  double f[3];  // fractional offset from the low corner, may leave [0,1] at borders
};

CellCoord locate(const Vec3& p, const Aabb& bounds, const Eigen::Vector3i& res,
                 const Vec3& cell, const char* who) {
  if (!bounds.contains(p, 1e-9))
    throw NumericError(std::string(who) + ": point outside bounds");
  CellCoord cc;
  for (int a = 0; a < 3; ++a) {
    double g = (p[a] - bounds.min[a]) / cell[a] - 0.5;
    int i0 = static_cast<int>(std::floor(g));
    i0 = std::clamp(i0, 0, res[a] - 2);
    cc.i0[a] = i0;
    cc.f[a] = g - i0;
  }
  return cc;
}

}  // namespace

Vec3 VoxelSpec::voxel_size() const {
  return (bounds.max - bounds.min).cwiseQuotient(resolution.cast<double>());
}

Vec3 VoxelSpec::voxel_center(int ix, int iy, int iz) const {
  Vec3 vs = voxel_size();
  return bounds.min + Vec3((ix + 0.5) * vs.x(), (iy + 0.5) * vs.y(), (iz + 0.5) * vs.z());
}

std::size_t VoxelSpec::voxel_count() const {
  return static_cast<std::size_t>(resolution.x()) * resolution.y() * resolution.z();
}

void VoxelSpec::validate() const {
  bounds.validate();
  if (resolution.minCoeff() < 2) throw ConfigError("voxel spec: resolution must be >= 2 per axis");
  if (feature_dim <= 0) throw ConfigError("voxel spec: feature_dim must be positive");
}

FeatureVolume FeatureVolume::zeros(const VoxelSpec& spec) {
  FeatureVolume vol;
  vol.spec = spec;
  vol.data.assign(spec.voxel_count() * static_cast<std::size_t>(spec.feature_dim), 0.0);
  return vol;
}

ImageFeatureMap ImageFeatureMap::zeros(int h, int w, int c, int stride) {
  ImageFeatureMap m;
  m.height = h;
  m.width = w;
  m.channels = c;
  m.stride = stride;
  m.data.assign(static_cast<std::size_t>(h) * w * c, 0.0);
  return m;
}

void trilinear_sample(const FeatureVolume& vol, const Vec3& p, double* out) {
  const VoxelSpec& spec = vol.spec;
  CellCoord cc = locate(p, spec.bounds, spec.resolution, spec.voxel_size(), "trilinear_sample");
  int c_dim = spec.feature_dim;
  std::fill(out, out + c_dim, 0.0);
  double wx[2] = {1.0 - cc.f[0], cc.f[0]};
  double wy[2] = {1.0 - cc.f[1], cc.f[1]};
  double wz[2] = {1.0 - cc.f[2], cc.f[2]};
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        double w = wx[dx] * wy[dy] * wz[dz];
        const double* src = vol.at(cc.i0[0] + dx, cc.i0[1] + dy, cc.i0[2] + dz);
        for (int c = 0; c < c_dim; ++c) out[c] += w * src[c];
      }
}

void trilinear_sample_grad(const FeatureVolume& vol, const Vec3& p, double* out,
                           double* jac) {
  const VoxelSpec& spec = vol.spec;
  Vec3 cell = spec.voxel_size();
  CellCoord cc = locate(p, spec.bounds, spec.resolution, cell, "trilinear_sample_grad");
  int c_dim = spec.feature_dim;
  std::fill(out, out + c_dim, 0.0);
  std::fill(jac, jac + static_cast<std::size_t>(c_dim) * 3, 0.0);
  double wx[2] = {1.0 - cc.f[0], cc.f[0]};
  double wy[2] = {1.0 - cc.f[1], cc.f[1]};
  double wz[2] = {1.0 - cc.f[2], cc.f[2]};
  // d(weight)/d(frac) per corner is +/- the product of the other two axes.
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        double w = wx[dx] * wy[dy] * wz[dz];
        double gx = (dx ? 1.0 : -1.0) * wy[dy] * wz[dz] / cell.x();
        double gy = (dy ? 1.0 : -1.0) * wx[dx] * wz[dz] / cell.y();
        double gz = (dz ? 1.0 : -1.0) * wx[dx] * wy[dy] / cell.z();
        const double* src = vol.at(cc.i0[0] + dx, cc.i0[1] + dy, cc.i0[2] + dz);
        for (int c = 0; c < c_dim; ++c) {
          out[c] += w * src[c];
          jac[c * 3 + 0] += gx * src[c];
          jac[c * 3 + 1] += gy * src[c];
          jac[c * 3 + 2] += gz * src[c];
        }
      }
}

void trilinear_scatter(FeatureVolume& dvol, const Vec3& p, const double* dval) {
  const VoxelSpec& spec = dvol.spec;
  CellCoord cc = locate(p, spec.bounds, spec.resolution, spec.voxel_size(), "trilinear_scatter");
  int c_dim = spec.feature_dim;
  double wx[2] = {1.0 - cc.f[0], cc.f[0]};
  double wy[2] = {1.0 - cc.f[1], cc.f[1]};
  double wz[2] = {1.0 - cc.f[2], cc.f[2]};
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        double w = wx[dx] * wy[dy] * wz[dz];
        double* dst = dvol.at(cc.i0[0] + dx, cc.i0[1] + dy, cc.i0[2] + dz);
        for (int c = 0; c < c_dim; ++c) dst[c] += w * dval[c];
      }
}

BilinearTaps bilinear_taps(const ImageFeatureMap& map, const Vec2& uv) {
  double w_in = static_cast<double>(map.width) * map.stride;
  double h_in = static_cast<double>(map.height) * map.stride;
  if (uv.x() < -1e-9 || uv.x() > w_in + 1e-9 || uv.y() < -1e-9 || uv.y() > h_in + 1e-9)
    throw NumericError("bilinear_sample: uv outside image");
  BilinearTaps t;
  double gu = uv.x() / map.stride - 0.5;
  double gv = uv.y() / map.stride - 0.5;
  int u0 = static_cast<int>(std::floor(gu));
  int v0 = static_cast<int>(std::floor(gv));
  t.u0 = std::clamp(u0, 0, map.width - 2);
  t.v0 = std::clamp(v0, 0, map.height - 2);
  t.fu = gu - t.u0;
  t.fv = gv - t.v0;
  return t;
}

void bilinear_sample(const ImageFeatureMap& map, const Vec2& uv, double* out) {
  BilinearTaps t = bilinear_taps(map, uv);
  std::fill(out, out + map.channels, 0.0);
  for (int dv = 0; dv < 2; ++dv)
    for (int du = 0; du < 2; ++du) {
      double w = t.weight(du, dv);
      const double* src = map.at(t.u0 + du, t.v0 + dv);
      for (int c = 0; c < map.channels; ++c) out[c] += w * src[c];
    }
}

void bilinear_scatter(ImageFeatureMap& dmap, const Vec2& uv, const double* dval) {
  BilinearTaps t = bilinear_taps(dmap, uv);
  for (int dv = 0; dv < 2; ++dv)
    for (int du = 0; du < 2; ++du) {
      double w = t.weight(du, dv);
      double* dst = dmap.at(t.u0 + du, t.v0 + dv);
      for (int c = 0; c < dmap.channels; ++c) dst[c] += w * dval[c];
    }
}

DepthHeadParams DepthHeadParams::make(int bins, int channels) {
  DepthHeadParams p;
  p.w = Tensor({static_cast<std::size_t>(bins), static_cast<std::size_t>(channels)});
  p.b = Tensor({static_cast<std::size_t>(bins)});
  return p;
}

double DepthHeadParams::bin_center(int i) const {
  double bw = (bin_max - bin_min) / bins();
  return bin_min + (i + 0.5) * bw;
}

void DepthHeadParams::validate() const {
  if (bins() < 2) throw ConfigError("depth head: needs at least 2 bins");
  if (!(bin_max > bin_min)) throw ConfigError("depth head: bin_max must exceed bin_min");
}

std::vector<ImageFeatureMap> depth_distributions(const std::vector<ImageFeatureMap>& maps,
                                                 const DepthHeadParams& head) {
  head.validate();
  int bins = head.bins();
  int cf = static_cast<int>(head.w.shape[1]);
  std::vector<ImageFeatureMap> out;
  out.reserve(maps.size());
  for (const ImageFeatureMap& m : maps) {
    if (m.channels != cf) throw ConfigError("depth head: channel mismatch");
    ImageFeatureMap dist = ImageFeatureMap::zeros(m.height, m.width, bins, m.stride);
    Eigen::Index px = static_cast<Eigen::Index>(m.height) * m.width;
    Eigen::Map<const RowMatrixXd> f(m.data.data(), px, cf);
    Eigen::Map<const RowMatrixXd> w(head.w.ptr(), bins, cf);
    Eigen::Map<RowMatrixXd> logits(dist.data.data(), px, bins);
    logits.noalias() = f * w.transpose();
    logits.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(head.b.ptr(), bins);
    for (Eigen::Index r = 0; r < px; ++r) {
      double mx = logits.row(r).maxCoeff();
      double total = 0.0;
      for (int k = 0; k < bins; ++k) {
        double e = std::exp(logits(r, k) - mx);
        logits(r, k) = e;
        total += e;
      }
      logits.row(r) /= total;
    }
    out.push_back(std::move(dist));
  }
  return out;
}

void depth_distributions_backward(const std::vector<ImageFeatureMap>& maps,
                                  const std::vector<ImageFeatureMap>& dists,
                                  const std::vector<ImageFeatureMap>& ddists,
                                  const DepthHeadParams& head,
                                  std::vector<ImageFeatureMap>& dmaps, Tensor& dw,
                                  Tensor& db) {
  int bins = head.bins();
  int cf = static_cast<int>(head.w.shape[1]);
  for (std::size_t view = 0; view < maps.size(); ++view) {
    const ImageFeatureMap& m = maps[view];
    Eigen::Index px = static_cast<Eigen::Index>(m.height) * m.width;
    Eigen::Map<const RowMatrixXd> f(m.data.data(), px, cf);
    Eigen::Map<const RowMatrixXd> p(dists[view].data.data(), px, bins);
    Eigen::Map<const RowMatrixXd> dp(ddists[view].data.data(), px, bins);
    // Softmax adjoint per pixel: dl = p .* (dp - <dp, p>).
    RowMatrixXd dl = p.cwiseProduct(dp);
    Eigen::VectorXd inner = dl.rowwise().sum();
    dl -= (p.array().colwise() * inner.array()).matrix();
    Eigen::Map<const RowMatrixXd> w(head.w.ptr(), bins, cf);
    Eigen::Map<RowMatrixXd> dwm(dw.ptr(), bins, cf);
    dwm.noalias() += dl.transpose() * f;
    Eigen::Map<Eigen::RowVectorXd>(db.ptr(), bins) += dl.colwise().sum();
    Eigen::Map<RowMatrixXd> df(dmaps[view].data.data(), px, cf);
    df.noalias() += dl * w;
  }
}

namespace {

struct BinInterp {
  int lo;
  double f;
};

BinInterp bin_interp(const DepthHeadParams& head, double depth) {
  int bins = head.bins();
  double bw = (head.bin_max - head.bin_min) / bins;
  double c0 = head.bin_center(0);
  double clast = head.bin_center(bins - 1);
  double d = std::clamp(depth, c0, clast);
  double g = (d - c0) / bw;
  int lo = std::min(static_cast<int>(std::floor(g)), bins - 2);
  return {lo, g - lo};
}

}  // namespace

FeatureVolume lift_with_distributions(const std::vector<ImageFeatureMap>& maps,
                                      const std::vector<ImageFeatureMap>& dists,
                                      const CameraRig& rig, const VoxelSpec& spec,
                                      const DepthHeadParams& head) {
  spec.validate();
  if (maps.size() != static_cast<std::size_t>(rig.view_count()) || maps.size() != dists.size())
    throw ConfigError("lift: per-view map count mismatch");
  for (const ImageFeatureMap& m : maps)
    if (m.channels != spec.feature_dim) throw ConfigError("lift: feature dim mismatch");
  FeatureVolume vol = FeatureVolume::zeros(spec);
  int c_dim = spec.feature_dim;
  std::vector<double> feat(static_cast<std::size_t>(c_dim));
  for (int ix = 0; ix < spec.resolution.x(); ++ix)
    for (int iy = 0; iy < spec.resolution.y(); ++iy)
      for (int iz = 0; iz < spec.resolution.z(); ++iz) {
        Vec3 center = spec.voxel_center(ix, iy, iz);
        double* acc = vol.at(ix, iy, iz);
        int visible = 0;
        for (int view = 0; view < rig.view_count(); ++view) {
          auto proj = project_point(center, rig, view);
          if (!proj || !proj->in_image) continue;
          ++visible;
          const ImageFeatureMap& fmap = maps[static_cast<std::size_t>(view)];
          const ImageFeatureMap& dmap = dists[static_cast<std::size_t>(view)];
          bilinear_sample(fmap, proj->pixel, feat.data());
          BilinearTaps taps = bilinear_taps(dmap, proj->pixel);
          BinInterp bi = bin_interp(head, proj->depth);
          double score = 0.0;
          for (int dv = 0; dv < 2; ++dv)
            for (int du = 0; du < 2; ++du) {
              const double* p = dmap.at(taps.u0 + du, taps.v0 + dv);
              score += taps.weight(du, dv) * (p[bi.lo] * (1.0 - bi.f) + p[bi.lo + 1] * bi.f);
            }
          for (int c = 0; c < c_dim; ++c) acc[c] += feat[c] * score;
        }
        if (visible > 1)
          for (int c = 0; c < c_dim; ++c) acc[c] /= visible;
      }
  return vol;
}

void lift_backward(const FeatureVolume& dvol, const std::vector<ImageFeatureMap>& maps,
                   const std::vector<ImageFeatureMap>& dists, const CameraRig& rig,
                   const VoxelSpec& spec, const DepthHeadParams& head,
                   std::vector<ImageFeatureMap>& dmaps,
                   std::vector<ImageFeatureMap>& ddists) {
  int c_dim = spec.feature_dim;
  std::vector<double> feat(static_cast<std::size_t>(c_dim));
  std::vector<double> dfeat(static_cast<std::size_t>(c_dim));
  for (int ix = 0; ix < spec.resolution.x(); ++ix)
    for (int iy = 0; iy < spec.resolution.y(); ++iy)
      for (int iz = 0; iz < spec.resolution.z(); ++iz) {
        Vec3 center = spec.voxel_center(ix, iy, iz);
        const double* dacc = dvol.at(ix, iy, iz);
        int visible = 0;
        for (int view = 0; view < rig.view_count(); ++view) {
          auto proj = project_point(center, rig, view);
          if (proj && proj->in_image) ++visible;
        }
        if (visible == 0) continue;
        double inv = 1.0 / visible;
        for (int view = 0; view < rig.view_count(); ++view) {
          auto proj = project_point(center, rig, view);
          if (!proj || !proj->in_image) continue;
          const ImageFeatureMap& fmap = maps[static_cast<std::size_t>(view)];
          const ImageFeatureMap& dmap = dists[static_cast<std::size_t>(view)];
          bilinear_sample(fmap, proj->pixel, feat.data());
          BilinearTaps taps = bilinear_taps(dmap, proj->pixel);
          BinInterp bi = bin_interp(head, proj->depth);
          double score = 0.0;
          for (int dv = 0; dv < 2; ++dv)
            for (int du = 0; du < 2; ++du) {
              const double* p = dmap.at(taps.u0 + du, taps.v0 + dv);
              score += taps.weight(du, dv) * (p[bi.lo] * (1.0 - bi.f) + p[bi.lo + 1] * bi.f);
            }
          double dscore = 0.0;
          for (int c = 0; c < c_dim; ++c) {
            dfeat[c] = dacc[c] * score * inv;
            dscore += dacc[c] * feat[c];
          }
          dscore *= inv;
          bilinear_scatter(dmaps[static_cast<std::size_t>(view)], proj->pixel, dfeat.data());
          ImageFeatureMap& dd = ddists[static_cast<std::size_t>(view)];
          for (int dv = 0; dv < 2; ++dv)
            for (int du = 0; du < 2; ++du) {
              double* p = dd.at(taps.u0 + du, taps.v0 + dv);
              double w = taps.weight(du, dv) * dscore;
              p[bi.lo] += w * (1.0 - bi.f);
              p[bi.lo + 1] += w * bi.f;
            }
        }
      }
}

FeatureVolume lift_image_features(const std::vector<ImageFeatureMap>& maps,
                                  const CameraRig& rig, const VoxelSpec& spec,
                                  const DepthHeadParams& head) {
  return lift_with_distributions(maps, depth_distributions(maps, head), rig, spec, head);
}

VoxelizeResult voxelize_points(const std::vector<Vec3>& positions,
                               const std::vector<double>& features,
                               const VoxelSpec& spec) {
  spec.validate();
  int c_dim = spec.feature_dim;
  std::size_t n = positions.size();
  if (features.size() != n * static_cast<std::size_t>(c_dim))
    throw ConfigError("voxelize: feature array size mismatch");
  VoxelizeResult res;
  res.volume = FeatureVolume::zeros(spec);
  res.count.assign(spec.voxel_count(), 0);
  res.voxel_of_point.assign(n, -1);

  Vec3 cell = spec.voxel_size();
  std::vector<std::vector<int>> bucket(spec.voxel_count());
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = positions[i];
    bool inside = true;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      double g = (p[a] - spec.bounds.min[a]) / cell[a];
      int k = static_cast<int>(std::floor(g));
      if (k < 0 || k >= spec.resolution[a]) {
        inside = false;
        break;
      }
      idx[a] = k;
    }
    if (!inside) continue;
    std::size_t flat = res.volume.flat_voxel(idx[0], idx[1], idx[2]);
    res.voxel_of_point[i] = static_cast<int>(flat);
    bucket[flat].push_back(static_cast<int>(i));
  }

  // Value-sorted compensated summation: the per-voxel mean depends only on
  // the multiset of contributions, never on input order.
  auto by_value = [&](int a, int b) {
    const double* fa = features.data() + static_cast<std::size_t>(a) * c_dim;
    const double* fb = features.data() + static_cast<std::size_t>(b) * c_dim;
    for (int c = 0; c < c_dim; ++c)
      if (fa[c] != fb[c]) return fa[c] < fb[c];
    for (int axis = 0; axis < 3; ++axis)
      if (positions[static_cast<std::size_t>(a)][axis] != positions[static_cast<std::size_t>(b)][axis])
        return positions[static_cast<std::size_t>(a)][axis] < positions[static_cast<std::size_t>(b)][axis];
    return false;
  };
  for (std::size_t v = 0; v < bucket.size(); ++v) {
    std::vector<int>& members = bucket[v];
    if (members.empty()) continue;
    std::sort(members.begin(), members.end(), by_value);
    res.count[v] = static_cast<int>(members.size());
    double* dst = res.volume.data.data() + v * static_cast<std::size_t>(c_dim);
    for (int c = 0; c < c_dim; ++c) {
      Kahan acc;
      for (int i : members) acc.add(features[static_cast<std::size_t>(i) * c_dim + c]);
      dst[c] = acc.sum / members.size();
    }
  }
  return res;
}

FeatureVolume projection_layer(const FeatureVolume& vol, const Conv3dParams& params) {
  if (vol.spec.feature_dim != params.in_channels())
    throw ConfigError("projection layer: input channel mismatch");
  VoxelSpec out_spec = vol.spec;
  out_spec.feature_dim = params.out_channels();
  FeatureVolume out = FeatureVolume::zeros(out_spec);
  conv3d_forward(vol.data.data(), vol.spec.resolution.x(), vol.spec.resolution.y(),
                 vol.spec.resolution.z(), params, out.data.data());
  return out;
}

void projection_layer_backward(const FeatureVolume& dout, const FeatureVolume& in,
                               const Conv3dParams& params, FeatureVolume* din,
                               Conv3dParams* dparams) {
  conv3d_backward(dout.data.data(), in.data.data(), in.spec.resolution.x(),
                  in.spec.resolution.y(), in.spec.resolution.z(), params,
                  din != nullptr ? din->data.data() : nullptr, dparams);
}

}  // namespace mvr
