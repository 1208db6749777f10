#include "mvr/renderer.hpp"

#include <algorithm>

namespace mvr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void DecoderParams::validate() const {
  sdf.validate();
  rgb.validate();
  if (sdf.head != MlpHead::affine) throw ConfigError("decoder: sdf head must be affine");
  if (rgb.head != MlpHead::logistic)
    throw ConfigError("decoder: rgb head must be logistic");
  if (sdf.output_dim() < 1) throw ConfigError("decoder: sdf output too small");
  if (rgb.output_dim() != 3) throw ConfigError("decoder: rgb output must be 3");
  int c = feature_dim();
  if (rgb.input_dim() != 3 + c + 3 + 3 + geo_dim())
    throw ConfigError("decoder: rgb input dim does not match (p,f,d,n,h)");
}

SdfOutput sdf_decode(const MlpParams& sdf_mlp, const Vec3& p, const Eigen::VectorXd& f) {
  VectorXd x(3 + f.size());
  x.head<3>() = p;
  x.tail(f.size()) = f;
  VectorXd y = mlp_forward_single(sdf_mlp, x);
  SdfOutput out;
  out.sdf = y(0);
  out.geo = y.tail(y.size() - 1);
  return out;
}

Vec3 sdf_normal(const MlpParams& sdf_mlp, const FeatureVolume& vol, const Vec3& p) {
  int c = vol.spec.feature_dim;
  VectorXd f(c);
  MatrixXd jac(c, 3);
  {
    std::vector<double> fb(static_cast<std::size_t>(c));
    std::vector<double> jb(static_cast<std::size_t>(c) * 3);
    trilinear_sample_grad(vol, p, fb.data(), jb.data());
    for (int i = 0; i < c; ++i) {
      f(i) = fb[static_cast<std::size_t>(i)];
      for (int a = 0; a < 3; ++a) jac(i, a) = jb[static_cast<std::size_t>(i) * 3 + a];
    }
  }
  VectorXd x(3 + c);
  x.head<3>() = p;
  x.tail(c) = f;
  MlpCtx ctx;
  mlp_forward(sdf_mlp, x, ctx);
  MatrixXd din = mlp_input_gradient(sdf_mlp, ctx, 0);  // (3+c) x 1
  Vec3 g = din.block<3, 1>(0, 0);
  g += jac.transpose() * din.col(0).tail(c);
  double n = g.norm();
  if (n < 1e-8) return Vec3::Zero();
  return g / n;
}

Vec3 rgb_decode(const MlpParams& rgb_mlp, const Vec3& p, const Eigen::VectorXd& f,
                const Vec3& d, const Vec3& n, const Eigen::VectorXd& h) {
  VectorXd x(3 + f.size() + 3 + 3 + h.size());
  Eigen::Index o = 0;
  x.segment(o, 3) = p;
  o += 3;
  x.segment(o, f.size()) = f;
  o += f.size();
  x.segment(o, 3) = d;
  o += 3;
  x.segment(o, 3) = n;
  o += 3;
  x.segment(o, h.size()) = h;
  VectorXd y = mlp_forward_single(rgb_mlp, x);
  return Vec3(y(0), y(1), y(2));
}

double alpha_from_sdf(double sdf, double sdf_next, const Sharpness& sharpness) {
  double s = sharpness.value();
  double ratio = std::exp(log_logistic(s * sdf_next) - log_logistic(s * sdf));
  return std::max(1.0 - ratio, 0.0);
}

CompositeResult composite(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& colors,
                          const Eigen::VectorXd& t) {
  Eigen::Index d = alpha.size();
  CompositeResult res;
  res.weight.resize(d);
  res.transmittance.resize(d);
  double trans = 1.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    res.transmittance(j) = trans;
    res.weight(j) = trans * alpha(j);
    trans *= 1.0 - alpha(j);
  }
  res.rgb = colors * res.weight;
  res.depth = t.dot(res.weight);
  return res;
}

namespace {

void gather_features(const FeatureVolume& vol, const MatrixXd& points, MatrixXd& feats,
                     MatrixXd* jacs) {
  int c = vol.spec.feature_dim;
  Eigen::Index d = points.cols();
  feats.resize(c, d);
  if (jacs != nullptr) jacs->resize(static_cast<Eigen::Index>(c) * 3, d);
  std::vector<double> fb(static_cast<std::size_t>(c));
  std::vector<double> jb(static_cast<std::size_t>(c) * 3);
  for (Eigen::Index j = 0; j < d; ++j) {
    Vec3 p = points.col(j);
    if (jacs != nullptr) {
      trilinear_sample_grad(vol, p, fb.data(), jb.data());
      for (int i = 0; i < c * 3; ++i) (*jacs)(i, j) = jb[static_cast<std::size_t>(i)];
    } else {
      trilinear_sample(vol, p, fb.data());
    }
    for (int i = 0; i < c; ++i) feats(i, j) = fb[static_cast<std::size_t>(i)];
  }
}

}  // namespace

RayRender render_ray(const Ray& ray, const Eigen::VectorXd& t_samples,
                     const FeatureVolume& vol, const DecoderParams& dec,
                     const Sharpness& sharpness, RayCtx& ctx,
                     const Eigen::MatrixXd* normals_override) {
  Eigen::Index d = t_samples.size();
  if (d < 2) throw NumericError("render_ray: needs at least 2 samples");
  for (Eigen::Index j = 1; j < d; ++j)
    if (!(t_samples(j) > t_samples(j - 1)))
      throw NumericError("render_ray: t samples must strictly increase");

  RaySampleBatch& s = ctx.samples;
  s.t = t_samples;
  s.points.resize(3, d);
  for (Eigen::Index j = 0; j < d; ++j)
    s.points.col(j) = ray.origin + t_samples(j) * ray.direction;

  int c = vol.spec.feature_dim;
  int geo = dec.geo_dim();
  MatrixXd jacs;
  gather_features(vol, s.points, s.features, normals_override == nullptr ? &jacs : nullptr);

  // SDF decode over all samples at once, assembled in place.
  MatrixXd& xin = ctx.sdf_ctx.input;
  xin.resize(3 + c, d);
  xin.topRows(3) = s.points;
  xin.bottomRows(c) = s.features;
  mlp_forward_prefilled(dec.sdf, ctx.sdf_ctx);
  s.sdf = ctx.sdf_ctx.output.row(0).transpose();
  s.geo = ctx.sdf_ctx.output.bottomRows(geo);

  // Opacity and weights depend only on the SDF, so they can gate the color
  // work: only live samples (weight > 0) can reach the rendered outputs.
  s.alpha.resize(d);
  for (Eigen::Index j = 0; j + 1 < d; ++j)
    s.alpha(j) = alpha_from_sdf(s.sdf(j), s.sdf(j + 1), sharpness);
  s.alpha(d - 1) = 0.0;
  s.weight.resize(d);
  s.transmittance.resize(d);
  double trans = 1.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    s.transmittance(j) = trans;
    s.weight(j) = trans * s.alpha(j);
    trans *= 1.0 - s.alpha(j);
  }
  ctx.live.clear();
  for (Eigen::Index j = 0; j < d; ++j)
    if (s.weight(j) > 0.0) ctx.live.push_back(j);
  Eigen::Index m = static_cast<Eigen::Index>(ctx.live.size());

  if (normals_override != nullptr) {
    s.normals = *normals_override;
  } else {
    // Spatial gradient: direct p rows plus the feature Jacobian path.
    MatrixXd din = mlp_input_gradient_cols(dec.sdf, ctx.sdf_ctx, 0, ctx.live);
    s.normals = MatrixXd::Zero(3, d);
    for (Eigen::Index k = 0; k < m; ++k) {
      Eigen::Index j = ctx.live[static_cast<std::size_t>(k)];
      Vec3 g = din.block<3, 1>(0, k);
      for (int a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (int i = 0; i < c; ++i) acc += jacs(static_cast<Eigen::Index>(i) * 3 + a, j) * din(3 + i, k);
        g[a] += acc;
      }
      double n = g.norm();
      s.normals.col(j) = n < 1e-8 ? Vec3::Zero() : Vec3(g / n);
    }
  }

  MatrixXd& xrgb = ctx.rgb_ctx.input;
  xrgb.resize(3 + c + 3 + 3 + geo, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    Eigen::Index j = ctx.live[static_cast<std::size_t>(k)];
    xrgb.block<3, 1>(0, k) = s.points.col(j);
    xrgb.col(k).segment(3, c) = s.features.col(j);
    xrgb.col(k).segment(3 + c, 3) = ray.direction;
    xrgb.col(k).segment(3 + c + 3, 3) = s.normals.col(j);
    xrgb.col(k).tail(geo) = s.geo.col(j);
  }
  mlp_forward_prefilled(dec.rgb, ctx.rgb_ctx);
  s.colors = MatrixXd::Zero(3, d);
  for (Eigen::Index k = 0; k < m; ++k)
    s.colors.col(ctx.live[static_cast<std::size_t>(k)]) = ctx.rgb_ctx.output.col(k);

  RayRender out;
  out.rgb = s.colors * s.weight;
  out.depth = s.t.dot(s.weight);
  return out;
}

RayRender render_ray(const Ray& ray, const Eigen::VectorXd& t_samples,
                     const FeatureVolume& vol, const DecoderParams& dec,
                     const Sharpness& sharpness) {
  RayCtx ctx;
  return render_ray(ray, t_samples, vol, dec, sharpness, ctx);
}

std::vector<RayRender> render_batch(const std::vector<Ray>& rays,
                                    const std::vector<Eigen::VectorXd>& t_samples,
                                    const FeatureVolume& vol, const DecoderParams& dec,
                                    const Sharpness& sharpness) {
  if (rays.size() != t_samples.size())
    throw ConfigError("render_batch: rays/samples size mismatch");
  std::vector<RayRender> out(rays.size());
  RayCtx ctx;
  for (std::size_t i = 0; i < rays.size(); ++i)
    out[i] = render_ray(rays[i], t_samples[i], vol, dec, sharpness, ctx);
  return out;
}

DecoderGrads DecoderGrads::zeros_like(const DecoderParams& dec) {
  DecoderGrads g;
  g.sdf = MlpGrads::zeros_like(dec.sdf);
  g.rgb = MlpGrads::zeros_like(dec.rgb);
  return g;
}

void render_ray_backward(const RayCtx& ctx, const Vec3& drgb, double ddepth,
                         const DecoderParams& dec, const Sharpness& sharpness,
                         DecoderGrads& grads, FeatureVolume& dvol) {
  const RaySampleBatch& s = ctx.samples;
  Eigen::Index d = s.t.size();
  int c = dec.feature_dim();
  int geo = dec.geo_dim();

  // Composite adjoint: per-sample scalar g_j = c_j . drgb + t_j * ddepth;
  // d alpha_j = T_j g_j - (sum_{m>j} w_m g_m) / (1 - alpha_j).
  VectorXd g(d);
  for (Eigen::Index j = 0; j < d; ++j)
    g(j) = s.colors.col(j).dot(drgb) + s.t(j) * ddepth;
  VectorXd dalpha = VectorXd::Zero(d);
  double suffix = 0.0;
  for (Eigen::Index j = d - 1; j >= 0; --j) {
    double denom = 1.0 - s.alpha(j);
    double occl = denom > 0.0 ? suffix / denom : 0.0;
    dalpha(j) = s.transmittance(j) * g(j) - occl;
    suffix += s.weight(j) * g(j);
  }

  // Color adjoint feeds the rgb decoder (live columns only; dead ones carry
  // an exact zero weight and so an exact zero adjoint).
  Eigen::Index m = static_cast<Eigen::Index>(ctx.live.size());
  MatrixXd dcolors(3, m);
  for (Eigen::Index k = 0; k < m; ++k)
    dcolors.col(k) = s.weight(ctx.live[static_cast<std::size_t>(k)]) * drgb;

  // Alpha adjoint -> SDF samples and the sharpness raw parameter.
  VectorXd dsdf = VectorXd::Zero(d);
  double sharp = sharpness.value();
  double draw = 0.0;
  for (Eigen::Index j = 0; j + 1 < d; ++j) {
    if (s.alpha(j) <= 0.0) continue;  // clamped branch: subgradient 0
    double a = sharp * s.sdf(j);
    double b = sharp * s.sdf(j + 1);
    double sig_a = logistic(a);
    double sig_b = logistic(b);
    // alpha = 1 - sig(b)/sig(a)
    double ratio = std::exp(log_logistic(b) - log_logistic(a));
    double da = dalpha(j);
    // d alpha / d a = ratio * sig(-a) ... derivative of -log sig(a) is -(1-sig(a))
    double dda = da * ratio * (1.0 - sig_a);
    double ddb = -da * ratio * (1.0 - sig_b);
    dsdf(j) += dda * sharp;
    dsdf(j + 1) += ddb * sharp;
    draw += (dda * s.sdf(j) + ddb * s.sdf(j + 1)) * sharp;
  }
  grads.sharpness_raw += draw;

  // Color decoder backward; p, d, n rows are constants here. The adjoints
  // scatter from live columns back to full sample width.
  MatrixXd dfeat = MatrixXd::Zero(c, d);
  MatrixXd dsdf_out = MatrixXd::Zero(1 + geo, d);
  dsdf_out.row(0) = dsdf.transpose();
  if (m > 0) {
    MatrixXd dxrgb;
    mlp_backward(dec.rgb, ctx.rgb_ctx, dcolors, grads.rgb, &dxrgb);
    for (Eigen::Index k = 0; k < m; ++k) {
      Eigen::Index j = ctx.live[static_cast<std::size_t>(k)];
      dfeat.col(j) = dxrgb.col(k).segment(3, c);
      dsdf_out.col(j).tail(geo) = dxrgb.col(k).tail(geo);
    }
  }
  MatrixXd dxin;
  mlp_backward(dec.sdf, ctx.sdf_ctx, dsdf_out, grads.sdf, &dxin);
  dfeat += dxin.bottomRows(c);

  // Feature adjoints scatter back onto the voxel grid.
  std::vector<double> dval(static_cast<std::size_t>(c));
  for (Eigen::Index j = 0; j < d; ++j) {
    for (int i = 0; i < c; ++i) dval[static_cast<std::size_t>(i)] = dfeat(i, j);
    trilinear_scatter(dvol, s.points.col(j), dval.data());
  }
}

void render_group(const Ray* rays, const Eigen::VectorXd* t_samples, int count,
                  const FeatureVolume& vol, const DecoderParams& dec,
                  const Sharpness& sharpness, GroupCtx& ctx, RayRender* out,
                  const Eigen::MatrixXd* normals_in) {
  int c = vol.spec.feature_dim;
  int geo = dec.geo_dim();
  ctx.offsets.resize(static_cast<std::size_t>(count) + 1);
  ctx.offsets[0] = 0;
  for (int r = 0; r < count; ++r) {
    const Eigen::VectorXd& ts = t_samples[r];
    Eigen::Index d = ts.size();
    if (d < 2) throw NumericError("render_group: needs at least 2 samples");
    for (Eigen::Index j = 1; j < d; ++j)
      if (!(ts(j) > ts(j - 1)))
        throw NumericError("render_group: t samples must strictly increase");
    ctx.offsets[static_cast<std::size_t>(r) + 1] = ctx.offsets[static_cast<std::size_t>(r)] + d;
  }
  Eigen::Index n = ctx.offsets[static_cast<std::size_t>(count)];

  ctx.t.resize(n);
  ctx.points.resize(3, n);
  for (int r = 0; r < count; ++r) {
    Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
    const Eigen::VectorXd& ts = t_samples[r];
    for (Eigen::Index j = 0; j < ts.size(); ++j) {
      ctx.t(lo + j) = ts(j);
      ctx.points.col(lo + j) = rays[r].origin + ts(j) * rays[r].direction;
    }
  }

  // Assemble the SDF batch in place; the trilinear gather writes straight
  // into the feature rows of each input column.
  bool want_jacs = normals_in == nullptr;
  MatrixXd& xin = ctx.sdf_ctx.input;
  xin.resize(3 + c, n);
  if (want_jacs)
    ctx.jacs.resize(static_cast<Eigen::Index>(c) * 3, n);
  else
    ctx.jacs.resize(0, 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    Vec3 p = ctx.points.col(j);
    xin.block<3, 1>(0, j) = p;
    double* fb = xin.data() + j * (3 + c) + 3;
    if (want_jacs)
      trilinear_sample_grad(vol, p, fb, ctx.jacs.data() + j * (static_cast<Eigen::Index>(c) * 3));
    else
      trilinear_sample(vol, p, fb);
  }
  mlp_forward_prefilled(dec.sdf, ctx.sdf_ctx);
  ctx.sdf = ctx.sdf_ctx.output.row(0).transpose();

  // Opacity, weights, and the live set, ray by ray.
  ctx.alpha.resize(n);
  ctx.weight.resize(n);
  ctx.transmittance.resize(n);
  ctx.live.clear();
  ctx.live_slot.assign(static_cast<std::size_t>(n), -1);
  for (int r = 0; r < count; ++r) {
    Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
    Eigen::Index hi = ctx.offsets[static_cast<std::size_t>(r) + 1];
    for (Eigen::Index j = lo; j + 1 < hi; ++j)
      ctx.alpha(j) = alpha_from_sdf(ctx.sdf(j), ctx.sdf(j + 1), sharpness);
    ctx.alpha(hi - 1) = 0.0;
    double trans = 1.0;
    for (Eigen::Index j = lo; j < hi; ++j) {
      ctx.transmittance(j) = trans;
      ctx.weight(j) = trans * ctx.alpha(j);
      trans *= 1.0 - ctx.alpha(j);
    }
    for (Eigen::Index j = lo; j < hi; ++j)
      if (ctx.weight(j) > 0.0) {
        ctx.live_slot[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(ctx.live.size());
        ctx.live.push_back(j);
      }
  }
  Eigen::Index m = static_cast<Eigen::Index>(ctx.live.size());

  if (normals_in != nullptr) {
    ctx.normals.resize(3, n);
    for (int r = 0; r < count; ++r) {
      Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
      Eigen::Index hi = ctx.offsets[static_cast<std::size_t>(r) + 1];
      ctx.normals.middleCols(lo, hi - lo) = normals_in[r];
    }
  } else {
    MatrixXd din = mlp_input_gradient_cols(dec.sdf, ctx.sdf_ctx, 0, ctx.live);
    ctx.normals = MatrixXd::Zero(3, n);
    for (Eigen::Index k = 0; k < m; ++k) {
      Eigen::Index j = ctx.live[static_cast<std::size_t>(k)];
      Vec3 g = din.block<3, 1>(0, k);
      for (int a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (int i = 0; i < c; ++i)
          acc += ctx.jacs(static_cast<Eigen::Index>(i) * 3 + a, j) * din(3 + i, k);
        g[a] += acc;
      }
      double norm = g.norm();
      ctx.normals.col(j) = norm < 1e-8 ? Vec3::Zero() : Vec3(g / norm);
    }
  }

  MatrixXd& xrgb = ctx.rgb_ctx.input;
  xrgb.resize(3 + c + 3 + 3 + geo, m);
  for (int r = 0; r < count; ++r) {
    Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
    Eigen::Index hi = ctx.offsets[static_cast<std::size_t>(r) + 1];
    for (Eigen::Index j = lo; j < hi; ++j) {
      Eigen::Index k = ctx.live_slot[static_cast<std::size_t>(j)];
      if (k < 0) continue;
      xrgb.block<3, 1>(0, k) = ctx.points.col(j);
      xrgb.col(k).segment(3, c) = xin.col(j).segment(3, c);
      xrgb.col(k).segment(3 + c, 3) = rays[r].direction;
      xrgb.col(k).segment(3 + c + 3, 3) = ctx.normals.col(j);
      xrgb.col(k).tail(geo) = ctx.sdf_ctx.output.col(j).tail(geo);
    }
  }
  mlp_forward_prefilled(dec.rgb, ctx.rgb_ctx);

  // Composite per ray through the same expressions render_ray uses, so the
  // outputs stay bitwise equal to the per-ray path.
  for (int r = 0; r < count; ++r) {
    Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
    Eigen::Index d = ctx.offsets[static_cast<std::size_t>(r) + 1] - lo;
    ctx.colors_full = MatrixXd::Zero(3, d);
    for (Eigen::Index j = lo; j < lo + d; ++j) {
      Eigen::Index k = ctx.live_slot[static_cast<std::size_t>(j)];
      if (k >= 0) ctx.colors_full.col(j - lo) = ctx.rgb_ctx.output.col(k);
    }
    ctx.w_full = ctx.weight.segment(lo, d);
    ctx.t_full = ctx.t.segment(lo, d);
    out[r].rgb = ctx.colors_full * ctx.w_full;
    out[r].depth = ctx.t_full.dot(ctx.w_full);
  }
}

void render_group_backward(GroupCtx& ctx, const Vec3* drgb,
                           const double* ddepth, const DecoderParams& dec,
                           const Sharpness& sharpness, DecoderGrads& grads,
                           FeatureVolume& dvol) {
  int count = static_cast<int>(ctx.offsets.size()) - 1;
  Eigen::Index n = ctx.offsets[static_cast<std::size_t>(count)];
  int c = dec.feature_dim();
  int geo = dec.geo_dim();
  Eigen::Index m = static_cast<Eigen::Index>(ctx.live.size());

  // Per-ray composite and alpha adjoints, exactly as render_ray_backward
  // computes them; only the decoder-parameter reductions below fuse.
  VectorXd dsdf = VectorXd::Zero(n);
  MatrixXd dcolors(3, m);
  double sharp = sharpness.value();
  VectorXd g;
  VectorXd dalpha;
  for (int r = 0; r < count; ++r) {
    Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
    Eigen::Index d = ctx.offsets[static_cast<std::size_t>(r) + 1] - lo;
    g.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      Eigen::Index k = ctx.live_slot[static_cast<std::size_t>(lo + j)];
      double color_term = k >= 0 ? ctx.rgb_ctx.output.col(k).dot(drgb[r]) : 0.0;
      g(j) = color_term + ctx.t(lo + j) * ddepth[r];
    }
    dalpha.resize(d);
    double suffix = 0.0;
    for (Eigen::Index j = d - 1; j >= 0; --j) {
      double denom = 1.0 - ctx.alpha(lo + j);
      double occl = denom > 0.0 ? suffix / denom : 0.0;
      dalpha(j) = ctx.transmittance(lo + j) * g(j) - occl;
      suffix += ctx.weight(lo + j) * g(j);
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      Eigen::Index k = ctx.live_slot[static_cast<std::size_t>(lo + j)];
      if (k >= 0) dcolors.col(k) = ctx.weight(lo + j) * drgb[r];
    }
    double draw = 0.0;
    for (Eigen::Index j = 0; j + 1 < d; ++j) {
      if (ctx.alpha(lo + j) <= 0.0) continue;  // clamped branch: subgradient 0
      double a = sharp * ctx.sdf(lo + j);
      double b = sharp * ctx.sdf(lo + j + 1);
      double sig_a = logistic(a);
      double sig_b = logistic(b);
      double ratio = std::exp(log_logistic(b) - log_logistic(a));
      double da = dalpha(j);
      double dda = da * ratio * (1.0 - sig_a);
      double ddb = -da * ratio * (1.0 - sig_b);
      dsdf(lo + j) += dda * sharp;
      dsdf(lo + j + 1) += ddb * sharp;
      draw += (dda * ctx.sdf(lo + j) + ddb * ctx.sdf(lo + j + 1)) * sharp;
    }
    grads.sharpness_raw += draw;
  }

  MatrixXd dxrgb;
  if (m > 0) mlp_backward(dec.rgb, ctx.rgb_ctx, dcolors, grads.rgb, &dxrgb);

  // The SDF backward only visits columns whose output adjoint can be nonzero:
  // the support of dsdf plus the live columns (geo adjoints). Every other
  // column carries an exactly zero adjoint and would add exact zeros to the
  // parameter gradients and the voxel scatter.
  ctx.bwd_cols.clear();
  for (Eigen::Index j = 0; j < n; ++j)
    if (dsdf(j) != 0.0 || ctx.live_slot[static_cast<std::size_t>(j)] >= 0)
      ctx.bwd_cols.push_back(j);
  Eigen::Index u = static_cast<Eigen::Index>(ctx.bwd_cols.size());
  if (u == 0) return;

  MatrixXd& dout = ctx.bwd_dout;
  dout = MatrixXd::Zero(1 + geo, u);
  for (Eigen::Index k = 0; k < u; ++k) {
    Eigen::Index j = ctx.bwd_cols[static_cast<std::size_t>(k)];
    dout(0, k) = dsdf(j);
    Eigen::Index slot = ctx.live_slot[static_cast<std::size_t>(j)];
    if (slot >= 0) dout.col(k).tail(geo) = dxrgb.col(slot).tail(geo);
  }
  mlp_gather_cols(ctx.sdf_ctx, ctx.bwd_cols, ctx.sdf_bwd_ctx);
  mlp_backward(dec.sdf, ctx.sdf_bwd_ctx, dout, grads.sdf, &ctx.bwd_dx);

  std::vector<double> dval(static_cast<std::size_t>(c));
  for (Eigen::Index k = 0; k < u; ++k) {
    Eigen::Index j = ctx.bwd_cols[static_cast<std::size_t>(k)];
    Eigen::Index slot = ctx.live_slot[static_cast<std::size_t>(j)];
    if (slot >= 0)
      for (int i = 0; i < c; ++i)
        dval[static_cast<std::size_t>(i)] = dxrgb(3 + i, slot) + ctx.bwd_dx(3 + i, k);
    else
      for (int i = 0; i < c; ++i) dval[static_cast<std::size_t>(i)] = ctx.bwd_dx(3 + i, k);
    trilinear_scatter(dvol, ctx.points.col(j), dval.data());
  }
}

}  // namespace mvr
