#include "mvr/pipeline.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <thread>

#include "mvr/encoders.hpp"
#include "mvr/errors.hpp"
#include "mvr/renderer.hpp"

namespace mvr {

namespace {

// Rays per fused render group. Wide enough that the decoder GEMMs amortize
// their packing cost, small enough that a group's activations stay cache-warm.
constexpr std::size_t kGroupRays = 24;

void parallel_chunks(int n, int threads, const std::function<void(int, int, int)>& body) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    body(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  int base = n / threads;
  int extra = n % threads;
  int begin = 0;
  for (int w = 0; w < threads; ++w) {
    int len = base + (w < extra ? 1 : 0);
    pool.emplace_back(body, w, begin, begin + len);
    begin += len;
  }
  for (auto& t : pool) t.join();
}

}  // namespace

ScenePack bake_scene(const Scene& scene, int lidar_azimuths, int lidar_rows,
                     double tau, int threads) {
  if (tau <= 0.0) tau = 0.9 * scene.bounds.diagonal();
  ScenePack pack;
  pack.scene = scene;
  pack.tau = tau;
  const CameraRig& rig = scene.rig;
  int h = rig.image_height, w = rig.image_width;
  pack.images.resize(static_cast<std::size_t>(rig.view_count()));
  pack.oracle_depth.resize(static_cast<std::size_t>(rig.view_count()));
  for (int view = 0; view < rig.view_count(); ++view) {
    ImageRgb& img = pack.images[static_cast<std::size_t>(view)];
    img = ImageRgb::zeros(h, w);
    DepthMap& dm = pack.oracle_depth[static_cast<std::size_t>(view)];
    dm.height = h;
    dm.width = w;
    dm.z.assign(static_cast<std::size_t>(h) * w,
                std::numeric_limits<double>::quiet_NaN());
    parallel_chunks(h, threads, [&](int, int v0, int v1) {
      for (int v = v0; v < v1; ++v)
        for (int u = 0; u < w; ++u) {
          OraclePixel px = oracle_render_pixel(scene, view, Vec2(u + 0.5, v + 0.5));
          double* dst = img.at(u, v);
          dst[0] = px.rgb.x();
          dst[1] = px.rgb.y();
          dst[2] = px.rgb.z();
          if (px.depth)
            dm.z[static_cast<std::size_t>(v) * w + u] = *px.depth;
        }
    });
  }
  pack.cloud = simulate_lidar(scene, scene.lidar_origin, lidar_azimuths, lidar_rows);
  pack.lidar_depth = build_depth_map(pack.cloud, rig, tau);
  return pack;
}

namespace {

BlockMask open_bev_mask(const VoxelSpec& grid) {
  BlockMask m;
  m.rows = 1;
  m.cols = 1;
  m.block_size = std::max(grid.resolution.x(), grid.resolution.y());
  m.ratio = 0.0;
  m.masked.assign(1, 0);
  return m;
}

Vec3 image_pixel(const ImageRgb& img, const Vec2& pixel) {
  int u = static_cast<int>(std::floor(pixel.x()));
  int v = static_cast<int>(std::floor(pixel.y()));
  const double* p = img.at(u, v);
  return Vec3(p[0], p[1], p[2]);
}

// Appends the ray, its stratified/midpoint t samples, and its supervision;
// rays that miss the volume entirely are dropped.
void push_ray(StepPlan& plan, const PixelSample& s, const ScenePack& pack,
              bool oracle_depth, int points_per_ray, bool stratified, Rng& rng) {
  const CameraRig& rig = pack.scene.rig;
  Ray ray = ray_from_pixel(rig, s.view, s.pixel);
  auto clip = ray_aabb_clip(ray, pack.scene.bounds);
  if (!clip) return;
  plan.rays.push_back(ray);
  plan.ts.push_back(
      sample_ray_points(clip->first, clip->second, points_per_ray, rng, stratified));
  plan.targets.rgb.push_back(image_pixel(pack.images[static_cast<std::size_t>(s.view)],
                                         s.pixel));
  std::optional<double> depth_t;
  if (oracle_depth) {
    const DepthMap& om = pack.oracle_depth[static_cast<std::size_t>(s.view)];
    int u = static_cast<int>(std::floor(s.pixel.x()));
    int v = static_cast<int>(std::floor(s.pixel.y()));
    if (om.has(u, v)) depth_t = om.at(u, v);
  } else {
    std::optional<double> z = s.lidar_z;
    if (!z) {
      const DepthMap& lm = pack.lidar_depth[static_cast<std::size_t>(s.view)];
      int u = static_cast<int>(std::floor(s.pixel.x()));
      int v = static_cast<int>(std::floor(s.pixel.y()));
      if (lm.has(u, v)) z = lm.at(u, v);
    }
    if (z) {
      double cosine = forward_cosine(rig, s.view, ray.direction);
      if (cosine > 1e-6) depth_t = *z / cosine;
    }
  }
  plan.targets.depth.push_back(depth_t);
}

}  // namespace

StepPlan make_step_plan(const ScenePack& pack, const PlanConfig& cfg,
                        const VoxelSpec& grid, std::uint64_t seed,
                        std::uint64_t step) {
  cfg.budget.validate();
  const CameraRig& rig = pack.scene.rig;
  if (rig.image_height % cfg.image_block != 0 || rig.image_width % cfg.image_block != 0)
    throw ConfigError("step plan: image dims not divisible by the mask block");
  if (grid.resolution.x() % cfg.bev_block != 0 || grid.resolution.y() % cfg.bev_block != 0)
    throw ConfigError("step plan: voxel grid not divisible by the BEV block");

  StepPlan plan;
  plan.pack = &pack;
  plan.modality = cfg.modality;

  plan.pixel_masks.resize(static_cast<std::size_t>(rig.view_count()));
  for (int view = 0; view < rig.view_count(); ++view) {
    Rng rng = derive_rng(seed, Stream::image_mask, step, static_cast<std::uint64_t>(view));
    BlockMask m = generate_block_mask(rig.image_height / cfg.image_block,
                                      rig.image_width / cfg.image_block,
                                      cfg.image_ratio, cfg.image_block, rng);
    plan.pixel_masks[static_cast<std::size_t>(view)] = upsample_mask(m, cfg.image_block);
  }
  {
    Rng rng = derive_rng(seed, Stream::point_mask, step);
    plan.bev_mask = generate_block_mask(grid.resolution.x() / cfg.bev_block,
                                        grid.resolution.y() / cfg.bev_block,
                                        cfg.point_ratio, cfg.bev_block, rng);
  }
  plan.visible_points = mask_points(pack.cloud, plan.bev_mask, grid);

  std::vector<PixelSample> samples;
  Rng ray_rng = derive_rng(seed, Stream::ray_select, step);
  switch (cfg.budget.strategy) {
    case RayStrategy::dilation:
      samples = sample_dilation(rig, cfg.budget.interval);
      break;
    case RayStrategy::random:
      samples = sample_random(rig, cfg.budget.rays_per_view, ray_rng);
      break;
    case RayStrategy::depth_aware:
      samples = sample_depth_aware(rig, pack.lidar_depth, cfg.budget.rays_per_view,
                                   ray_rng);
      break;
  }

  Rng point_rng = derive_rng(seed, Stream::ray_points, step);
  bool oracle_depth =
      cfg.oracle_depth_supervision && cfg.budget.strategy != RayStrategy::depth_aware;
  for (const PixelSample& s : samples)
    push_ray(plan, s, pack, oracle_depth, cfg.budget.points_per_ray,
             cfg.budget.stratified, point_rng);
  plan.targets.validate();
  return plan;
}

StepPlan make_eval_plan(const ScenePack& pack, Modality modality,
                        const VoxelSpec& grid, int interval, int points_per_ray) {
  const CameraRig& rig = pack.scene.rig;
  StepPlan plan;
  plan.pack = &pack;
  plan.modality = modality;
  plan.pixel_masks.assign(
      static_cast<std::size_t>(rig.view_count()),
      std::vector<std::uint8_t>(
          static_cast<std::size_t>(rig.image_height) * rig.image_width, 0));
  plan.bev_mask = open_bev_mask(grid);
  plan.visible_points = pack.cloud;
  Rng unused = derive_rng(0, Stream::heldout);
  for (const PixelSample& s : sample_dilation(rig, interval))
    push_ray(plan, s, pack, /*oracle_depth=*/true, points_per_ray,
             /*stratified=*/false, unused);
  plan.targets.validate();
  return plan;
}

namespace {

double sign_or_zero(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void add_mlp_grads(MlpGrads& into, const MlpGrads& from) {
  for (std::size_t i = 0; i < into.weights.size(); ++i) {
    for (std::size_t j = 0; j < into.weights[i].data.size(); ++j)
      into.weights[i].data[j] += from.weights[i].data[j];
    for (std::size_t j = 0; j < into.biases[i].data.size(); ++j)
      into.biases[i].data[j] += from.biases[i].data[j];
  }
}

}  // namespace

std::size_t plan_ray_bytes(const StepPlan& plan) {
  std::size_t bytes = plan.rays.size() * sizeof(Ray);
  for (const Eigen::VectorXd& t : plan.ts)
    bytes += static_cast<std::size_t>(t.size()) * sizeof(double);
  bytes += plan.targets.rgb.size() * sizeof(Vec3);
  bytes += plan.targets.depth.size() * sizeof(std::optional<double>);
  return bytes;
}

StepStats run_plan(const StepPlan& plan, const ModelParams& params,
                   const LossWeights& w, const RunOptions& opts) {
  params.validate();
  w.validate();
  const ScenePack& pack = *plan.pack;
  const CameraRig& rig = pack.scene.rig;
  bool want_grads = opts.grads != nullptr;
  bool use_camera = plan.modality != Modality::lidar;
  bool use_points = plan.modality != Modality::camera;

  VoxelSpec vspec = params.volume_spec();

  std::vector<ImageFeatureMap> feats;
  std::vector<ImageFeatureMap> dists;
  std::vector<ImageEncodeCtx> img_ctx;
  PointEncodeCtx pt_ctx;
  FeatureVolume fused = FeatureVolume::zeros(vspec);

  if (use_camera) {
    feats.resize(static_cast<std::size_t>(rig.view_count()));
    img_ctx.resize(static_cast<std::size_t>(rig.view_count()));
    for (int view = 0; view < rig.view_count(); ++view) {
      const auto& mask = plan.pixel_masks[static_cast<std::size_t>(view)];
      ImageRgb masked = mask_image(pack.images[static_cast<std::size_t>(view)], mask);
      feats[static_cast<std::size_t>(view)] =
          encode_image_sparse(masked, mask, params.encoder,
                              want_grads ? &img_ctx[static_cast<std::size_t>(view)]
                                         : nullptr);
    }
    dists = depth_distributions(feats, params.depth_head);
    FeatureVolume lifted =
        lift_with_distributions(feats, dists, rig, vspec, params.depth_head);
    fused.data = std::move(lifted.data);
  }
  if (use_points) {
    FeatureVolume pvol =
        encode_points(plan.visible_points, vspec, params.encoder, &plan.bev_mask,
                      want_grads ? &pt_ctx : nullptr);
    if (use_camera) {
      for (std::size_t i = 0; i < fused.data.size(); ++i)
        fused.data[i] += pvol.data[i];
    } else {
      fused.data = std::move(pvol.data);
    }
  }

  FeatureVolume rvol = projection_layer(fused, params.projection);

  int k = static_cast<int>(plan.rays.size());
  StepStats stats;
  stats.rays = k;
  stats.depth_rays = plan.targets.depth_count();
  if (k == 0) return stats;

  double rgb_scale = w.lambda_rgb / k;
  double depth_scale =
      stats.depth_rays > 0 ? w.lambda_depth / stats.depth_rays : 0.0;

  std::vector<RayPrediction> preds(static_cast<std::size_t>(k));
  if (opts.normals_out)
    opts.normals_out->assign(static_cast<std::size_t>(k), Eigen::MatrixXd());

  int threads = std::max(1, opts.threads);
  int chunks = std::min(threads, k);
  std::vector<DecoderGrads> dec_grads;
  std::vector<FeatureVolume> dvols;
  if (want_grads) {
    dec_grads.reserve(static_cast<std::size_t>(chunks));
    dvols.reserve(static_cast<std::size_t>(chunks));
    for (int i = 0; i < chunks; ++i) {
      dec_grads.push_back(DecoderGrads::zeros_like(params.decoder));
      dvols.push_back(FeatureVolume::zeros(rvol.spec));
    }
  }

  // Rays march in fixed-width fused groups so the decoder MLPs run a few wide
  // GEMMs per group instead of narrow per-ray ones. The width is a constant
  // (not tied to the thread count), which keeps the group boundaries — and so
  // every per-group reduction — identical from run to run.
  parallel_chunks(k, chunks, [&](int worker, int begin, int end) {
    GroupCtx ctx;
    std::vector<RayRender> rendered(kGroupRays);
    std::vector<Vec3> drgb(kGroupRays);
    std::vector<double> ddepth(kGroupRays);
    for (int g0 = begin; g0 < end; g0 += static_cast<int>(kGroupRays)) {
      int count = std::min(static_cast<int>(kGroupRays), end - g0);
      const Eigen::MatrixXd* frozen =
          opts.normals_in ? &(*opts.normals_in)[static_cast<std::size_t>(g0)] : nullptr;
      render_group(&plan.rays[static_cast<std::size_t>(g0)],
                   &plan.ts[static_cast<std::size_t>(g0)], count, rvol,
                   params.decoder, params.sharpness, ctx, rendered.data(), frozen);
      for (int r = 0; r < count; ++r) {
        std::size_t i = static_cast<std::size_t>(g0 + r);
        const RayRender& rr = rendered[static_cast<std::size_t>(r)];
        preds[i] = {rr.rgb, rr.depth};
        if (opts.normals_out) {
          Eigen::Index lo = ctx.offsets[static_cast<std::size_t>(r)];
          Eigen::Index d = ctx.offsets[static_cast<std::size_t>(r) + 1] - lo;
          (*opts.normals_out)[i] = ctx.normals.middleCols(lo, d);
        }
        if (want_grads) {
          const Vec3& gt = plan.targets.rgb[i];
          for (int c = 0; c < 3; ++c)
            drgb[static_cast<std::size_t>(r)](c) =
                rgb_scale * sign_or_zero(rr.rgb(c) - gt(c));
          const auto& gt_depth = plan.targets.depth[i];
          ddepth[static_cast<std::size_t>(r)] =
              gt_depth ? depth_scale * sign_or_zero(rr.depth - *gt_depth) : 0.0;
        }
      }
      if (want_grads)
        render_group_backward(ctx, drgb.data(), ddepth.data(), params.decoder,
                              params.sharpness,
                              dec_grads[static_cast<std::size_t>(worker)],
                              dvols[static_cast<std::size_t>(worker)]);
    }
  });

  LossResult lr = pretrain_loss(preds, plan.targets, w);
  stats.loss = lr.loss;
  stats.rgb_l1 = lr.rgb_l1;
  stats.depth_l1 = lr.depth_l1;
  if (opts.preds_out) *opts.preds_out = std::move(preds);
  if (!std::isfinite(stats.loss)) throw NumericError("run_plan: non-finite loss");

  if (!want_grads) return stats;

  ModelGrads& grads = *opts.grads;
  for (int i = 0; i < chunks; ++i) {
    add_mlp_grads(grads.decoder.sdf, dec_grads[static_cast<std::size_t>(i)].sdf);
    add_mlp_grads(grads.decoder.rgb, dec_grads[static_cast<std::size_t>(i)].rgb);
    grads.decoder.sharpness_raw += dec_grads[static_cast<std::size_t>(i)].sharpness_raw;
  }
  FeatureVolume dvol = std::move(dvols[0]);
  for (int i = 1; i < chunks; ++i)
    for (std::size_t j = 0; j < dvol.data.size(); ++j)
      dvol.data[j] += dvols[static_cast<std::size_t>(i)].data[j];

  FeatureVolume dfused = FeatureVolume::zeros(vspec);
  projection_layer_backward(dvol, fused, params.projection, &dfused,
                            &grads.projection);

  if (use_points) encode_points_backward(dfused, params.encoder, pt_ctx, grads.encoder);
  if (use_camera) {
    std::vector<ImageFeatureMap> dmaps;
    std::vector<ImageFeatureMap> ddists;
    dmaps.reserve(feats.size());
    ddists.reserve(feats.size());
    for (const ImageFeatureMap& f : feats) {
      dmaps.push_back(ImageFeatureMap::zeros(f.height, f.width, f.channels, f.stride));
      ddists.push_back(
          ImageFeatureMap::zeros(f.height, f.width, params.depth_head.bins(), f.stride));
    }
    lift_backward(dfused, feats, dists, rig, vspec, params.depth_head, dmaps,
                  ddists);
    depth_distributions_backward(feats, dists, ddists, params.depth_head, dmaps,
                                 grads.depth_w, grads.depth_b);
    for (int view = 0; view < rig.view_count(); ++view)
      encode_image_backward(dmaps[static_cast<std::size_t>(view)],
                            plan.pixel_masks[static_cast<std::size_t>(view)],
                            params.encoder, img_ctx[static_cast<std::size_t>(view)],
                            grads.encoder);
  }
  return stats;
}

}  // namespace mvr
