#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mvr/errors.hpp"
#include "mvr/tensor.hpp"

namespace mvr {

// Smooth rectifier used on hidden layers. The sharpness-100 softplus is close
// enough to relu for decoding while staying differentiable everywhere, which
// the analytic-normal path and the finite-difference harness both need.
double softplus100(double x);
double softplus100_deriv(double x);
double logistic(double x);
// log(logistic(x)), stable for large |x|.
double log_logistic(double x);

enum class MlpHead { affine, logistic };

struct MlpParams {
  std::vector<Tensor> weights;  // (out x in) row-major per layer
  std::vector<Tensor> biases;   // (out) per layer
  MlpHead head = MlpHead::affine;

  // dims = {in, hidden..., out}; layer count = dims.size() - 1.
  static MlpParams make(const std::vector<int>& dims, MlpHead head);
  int layer_count() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return static_cast<int>(weights.front().shape[1]); }
  int output_dim() const { return static_cast<int>(weights.back().shape[0]); }
  void validate() const;
};

struct MlpGrads {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static MlpGrads zeros_like(const MlpParams& p);
};

// Forward records for one batch; samples are columns.
struct MlpCtx {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> post;  // hidden activations
  std::vector<Eigen::MatrixXd> dact;  // activation derivatives, cached forward
  Eigen::MatrixXd head_pre;
  Eigen::MatrixXd output;
  Eigen::MatrixXd scratch;  // preactivation workspace, reused across layers
};

void mlp_forward(const MlpParams& p, const Eigen::MatrixXd& x, MlpCtx& ctx);
// Same, but reads the batch from ctx.input, letting callers assemble it there
// and skip one full copy.
void mlp_forward_prefilled(const MlpParams& p, MlpCtx& ctx);
Eigen::VectorXd mlp_forward_single(const MlpParams& p, const Eigen::VectorXd& x);

// Accumulates parameter adjoints into g; writes the input adjoint when dx is
// non-null.
void mlp_backward(const MlpParams& p, const MlpCtx& ctx, const Eigen::MatrixXd& dout,
                  MlpGrads& g, Eigen::MatrixXd* dx);

// Copies the selected sample columns of src's forward records (input, post,
// dact, output) into dst, so a backward pass can run on a column subset.
// Columns whose dout is exactly zero add exact zeros to every adjoint, so
// dropping them leaves mlp_backward's results unchanged.
void mlp_gather_cols(const MlpCtx& src, const std::vector<Eigen::Index>& cols,
                     MlpCtx& dst);

// d output[output_row] / d input for every sample column; result is in x n.
Eigen::MatrixXd mlp_input_gradient(const MlpParams& p, const MlpCtx& ctx,
                                   int output_row);

// Same, restricted to the selected sample columns; result is in x |cols|.
Eigen::MatrixXd mlp_input_gradient_cols(const MlpParams& p, const MlpCtx& ctx,
                                        int output_row,
                                        const std::vector<Eigen::Index>& cols);

}  // namespace mvr
