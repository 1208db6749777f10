#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mvr/geometry.hpp"
#include "mvr/mlp.hpp"
#include "mvr/voxelgrid.hpp"

namespace mvr {

// Learnable sigmoid bandwidth, kept positive by construction.
struct Sharpness {
  double raw = std::log(10.0);
  double value() const { return std::exp(raw); }
};

struct DecoderParams {
  MlpParams sdf;  // input (p, f); output (sdf, geo...)
  MlpParams rgb;  // input (p, f, d, n, h); logistic output in [0,1]^3

  int feature_dim() const { return sdf.input_dim() - 3; }
  int geo_dim() const { return sdf.output_dim() - 1; }
  void validate() const;
};

struct SdfOutput {
  double sdf = 0.0;
  Eigen::VectorXd geo;
};

SdfOutput sdf_decode(const MlpParams& sdf_mlp, const Vec3& p, const Eigen::VectorXd& f);

// Analytic spatial gradient of sdf_decode(p, trilinear(vol, p)), normalized;
// zero vector when the gradient norm is under 1e-8.
Vec3 sdf_normal(const MlpParams& sdf_mlp, const FeatureVolume& vol, const Vec3& p);

Vec3 rgb_decode(const MlpParams& rgb_mlp, const Vec3& p, const Eigen::VectorXd& f,
                const Vec3& d, const Vec3& n, const Eigen::VectorXd& h);

// alpha = max((sig(s*sdf) - sig(s*sdf_next)) / sig(s*sdf), 0), evaluated in
// log space so opposing large SDF magnitudes cannot overflow.
double alpha_from_sdf(double sdf, double sdf_next, const Sharpness& sharpness);

struct CompositeResult {
  Vec3 rgb = Vec3::Zero();
  double depth = 0.0;
  Eigen::VectorXd weight;
  Eigen::VectorXd transmittance;
};

// T_j = prod_{k<j}(1 - alpha_k), w_j = T_j alpha_j, rgb = sum w_j c_j,
// depth = sum w_j t_j. colors is 3 x D.
CompositeResult composite(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& colors,
                          const Eigen::VectorXd& t);

struct RaySampleBatch {
  Eigen::VectorXd t;
  Eigen::MatrixXd points;    // 3 x D
  Eigen::MatrixXd features;  // C x D
  Eigen::VectorXd sdf;
  Eigen::MatrixXd geo;      // geo x D
  Eigen::MatrixXd normals;  // 3 x D
  Eigen::MatrixXd colors;   // 3 x D
  Eigen::VectorXd alpha;
  Eigen::VectorXd weight;
  Eigen::VectorXd transmittance;
};

// Forward records kept for the backward pass; reusable across rays to avoid
// reallocation. Color decoding and normals run only on the live samples
// (weight > 0); dead columns of colors/normals stay zero, which leaves every
// rendered output bitwise unchanged since they enter weighted by exact zeros.
struct RayCtx {
  RaySampleBatch samples;
  MlpCtx sdf_ctx;
  MlpCtx rgb_ctx;                 // columns correspond to `live`
  std::vector<Eigen::Index> live;  // sample indices with weight > 0
};

struct RayRender {
  Vec3 rgb = Vec3::Zero();
  double depth = 0.0;
};

// Full per-ray pipeline: trilinear features -> SDF decode -> normals ->
// color decode -> alpha -> composite. The last sample's alpha is pinned to 0.
// `normals_override` (3 x D) replaces the analytic normals when given — the
// finite-difference harness uses it to hold the detached path constant.
RayRender render_ray(const Ray& ray, const Eigen::VectorXd& t_samples,
                     const FeatureVolume& vol, const DecoderParams& dec,
                     const Sharpness& sharpness, RayCtx& ctx,
                     const Eigen::MatrixXd* normals_override = nullptr);

// Convenience wrapper allocating its own ctx.
RayRender render_ray(const Ray& ray, const Eigen::VectorXd& t_samples,
                     const FeatureVolume& vol, const DecoderParams& dec,
                     const Sharpness& sharpness);

// Pure reorganization of N render_ray calls (bitwise identical results).
std::vector<RayRender> render_batch(const std::vector<Ray>& rays,
                                    const std::vector<Eigen::VectorXd>& t_samples,
                                    const FeatureVolume& vol, const DecoderParams& dec,
                                    const Sharpness& sharpness);

struct DecoderGrads {
  MlpGrads sdf;
  MlpGrads rgb;
  double sharpness_raw = 0.0;

  static DecoderGrads zeros_like(const DecoderParams& dec);
};

// Forward records for a fused group of rays. Ray r owns the flat sample
// columns [offsets[r], offsets[r+1]); decoder work runs as one wide GEMM per
// MLP layer over the whole group instead of one narrow GEMM per ray, which is
// where the per-ray renderer loses most of its time. Per sample column the
// arithmetic matches render_ray exactly; only parameter-gradient reductions
// reassociate (they sum over the group at once).
struct GroupCtx {
  std::vector<Eigen::Index> offsets;  // count + 1 entries
  Eigen::VectorXd t;
  Eigen::VectorXd sdf;
  Eigen::VectorXd alpha;
  Eigen::VectorXd weight;
  Eigen::VectorXd transmittance;
  Eigen::MatrixXd points;   // 3 x N
  Eigen::MatrixXd normals;  // 3 x N, zero at dead samples
  Eigen::MatrixXd jacs;     // (3C) x N, empty when normals were overridden
  MlpCtx sdf_ctx;           // all N samples; input rows (p, f)
  MlpCtx rgb_ctx;           // live columns only
  std::vector<Eigen::Index> live;       // flat sample columns with weight > 0
  std::vector<Eigen::Index> live_slot;  // N entries; rgb column or -1 when dead
  // per-ray composite scratch, kept to mirror render_ray's expressions
  Eigen::MatrixXd colors_full;
  Eigen::VectorXd t_full;
  Eigen::VectorXd w_full;
  // backward scratch: the SDF backward runs on the columns whose output
  // adjoint is structurally nonzero (dsdf support plus live geo columns)
  std::vector<Eigen::Index> bwd_cols;
  MlpCtx sdf_bwd_ctx;
  Eigen::MatrixXd bwd_dout;
  Eigen::MatrixXd bwd_dx;
};

// Renders `count` consecutive rays through the fused group path. A group of
// one reproduces render_ray bitwise; wider groups match it to within the
// floating-point reassociation of the fused decoder products. `normals_in`,
// when non-null, points at `count` per-ray 3 x D_r override matrices (the
// detached-normals hook the finite-difference harness uses).
void render_group(const Ray* rays, const Eigen::VectorXd* t_samples, int count,
                  const FeatureVolume& vol, const DecoderParams& dec,
                  const Sharpness& sharpness, GroupCtx& ctx, RayRender* out,
                  const Eigen::MatrixXd* normals_in = nullptr);

// Reverse-mode pass over one rendered group; drgb/ddepth hold `count` per-ray
// output adjoints. Accumulates into `grads` and `dvol` like
// render_ray_backward, with parameter reductions fused across the group.
// Reuses ctx scratch; the forward records it read stay intact, so it can run
// repeatedly on the same rendered group.
void render_group_backward(GroupCtx& ctx, const Vec3* drgb,
                           const double* ddepth, const DecoderParams& dec,
                           const Sharpness& sharpness, DecoderGrads& grads,
                           FeatureVolume& dvol);

// Reverse-mode pass for one rendered ray. Adjoints accumulate into `grads`
// and `dvol`; the normal inputs of the color decoder are treated as
// constants.
void render_ray_backward(const RayCtx& ctx, const Vec3& drgb, double ddepth,
                         const DecoderParams& dec, const Sharpness& sharpness,
                         DecoderGrads& grads, FeatureVolume& dvol);

}  // namespace mvr
