#include "mvr/mlp.hpp"

#include <cmath>

namespace mvr {

namespace {

using Eigen::MatrixXd;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrixXd> wmap(const Tensor& w) {
  return Eigen::Map<const RowMatrixXd>(w.ptr(), static_cast<Eigen::Index>(w.shape[0]),
                                       static_cast<Eigen::Index>(w.shape[1]));
}

Eigen::Map<RowMatrixXd> wmap(Tensor& w) {
  return Eigen::Map<RowMatrixXd>(w.ptr(), static_cast<Eigen::Index>(w.shape[0]),
                                 static_cast<Eigen::Index>(w.shape[1]));
}

Eigen::Map<const Eigen::VectorXd> bmap(const Tensor& b) {
  return Eigen::Map<const Eigen::VectorXd>(b.ptr(), static_cast<Eigen::Index>(b.shape[0]));
}

using Packet = Eigen::internal::packet_traits<double>::type;
constexpr Eigen::Index kPacketSize = Eigen::internal::unpacket_traits<Packet>::size;

// One pass over a column: h = softplus100(z + b), dact = sigma(100 (z + b)).
// Fusing the bias add, the shared e = exp(-100 |zb|), and both outputs into a
// single sweep keeps the layer memory-bound work at three matrix images
// (read z, write h, write dact) instead of one per intermediate.
void bias_softplus_column(const double* z, const double* b, double* h, double* d,
                          Eigen::Index rows) {
  namespace ei = Eigen::internal;
  const Packet zero = ei::pset1<Packet>(0.0);
  const Packet one = ei::pset1<Packet>(1.0);
  const Packet neg100 = ei::pset1<Packet>(-100.0);
  const Packet hundred = ei::pset1<Packet>(100.0);
  Eigen::Index r = 0;
  for (; r + kPacketSize <= rows; r += kPacketSize) {
    Packet zb = ei::padd(ei::ploadu<Packet>(z + r), ei::ploadu<Packet>(b + r));
    Packet e = ei::pexp(ei::pmul(ei::pabs(zb), neg100));
    Packet onep = ei::padd(one, e);
    Packet hv = ei::padd(ei::pmax(zb, zero), ei::pdiv(ei::plog(onep), hundred));
    Packet inv = ei::pdiv(one, onep);
    Packet nonneg = ei::pcmp_le(zero, zb);
    ei::pstoreu(h + r, hv);
    ei::pstoreu(d + r, ei::pselect(nonneg, inv, ei::psub(one, inv)));
  }
  for (; r < rows; ++r) {
    double zb = z[r] + b[r];
    double e = std::exp(-100.0 * std::abs(zb));
    double onep = 1.0 + e;
    h[r] = std::max(zb, 0.0) + std::log(onep) / 100.0;
    double inv = 1.0 / onep;
    d[r] = zb >= 0.0 ? inv : 1.0 - inv;
  }
}

// out = logistic(x), one fused sweep.
void logistic_pass(const double* x, double* out, Eigen::Index n) {
  namespace ei = Eigen::internal;
  const Packet zero = ei::pset1<Packet>(0.0);
  const Packet one = ei::pset1<Packet>(1.0);
  Eigen::Index i = 0;
  for (; i + kPacketSize <= n; i += kPacketSize) {
    Packet v = ei::ploadu<Packet>(x + i);
    Packet e = ei::pexp(ei::pnegate(ei::pabs(v)));
    Packet inv = ei::pdiv(one, ei::padd(one, e));
    Packet nonneg = ei::pcmp_le(zero, v);
    ei::pstoreu(out + i, ei::pselect(nonneg, inv, ei::psub(one, inv)));
  }
  for (; i < n; ++i) {
    double e = std::exp(-std::abs(x[i]));
    double inv = 1.0 / (1.0 + e);
    out[i] = x[i] >= 0.0 ? inv : 1.0 - inv;
  }
}

}  // namespace

double softplus100(double x) {
  // (1/100) log(1 + e^{100 x}) without overflow on either side.
  if (x > 0.0) return x + std::log1p(std::exp(-100.0 * x)) / 100.0;
  return std::log1p(std::exp(100.0 * x)) / 100.0;
}

double softplus100_deriv(double x) { return logistic(100.0 * x); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double log_logistic(double x) {
  // -softplus(-x)
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

MlpParams MlpParams::make(const std::vector<int>& dims, MlpHead head) {
  if (dims.size() < 2) throw ConfigError("mlp: needs at least one layer");
  MlpParams p;
  p.head = head;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.weights.push_back(Tensor({static_cast<std::size_t>(dims[l + 1]),
                                static_cast<std::size_t>(dims[l])}));
    p.biases.push_back(Tensor({static_cast<std::size_t>(dims[l + 1])}));
  }
  return p;
}

void MlpParams::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    throw ConfigError("mlp: inconsistent layer lists");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].shape.size() != 2 || biases[l].shape.size() != 1 ||
        weights[l].shape[0] != biases[l].shape[0])
      throw ConfigError("mlp: layer shape mismatch");
    if (l > 0 && weights[l].shape[1] != weights[l - 1].shape[0])
      throw ConfigError("mlp: layer dims do not chain");
  }
}

MlpGrads MlpGrads::zeros_like(const MlpParams& p) {
  MlpGrads g;
  for (const Tensor& w : p.weights) g.weights.push_back(Tensor(w.shape));
  for (const Tensor& b : p.biases) g.biases.push_back(Tensor(b.shape));
  return g;
}

void mlp_forward_prefilled(const MlpParams& p, MlpCtx& ctx) {
  if (ctx.input.rows() != p.input_dim())
    throw ConfigError("mlp_forward: input dim mismatch");
  int layers = p.layer_count();
  int hidden = layers - 1;
  Eigen::Index n = ctx.input.cols();
  ctx.post.resize(static_cast<std::size_t>(hidden));
  ctx.dact.resize(static_cast<std::size_t>(hidden));
  const MatrixXd* a = &ctx.input;
  MatrixXd& z = ctx.scratch;
  for (int l = 0; l < hidden; ++l) {
    const Tensor& w = p.weights[static_cast<std::size_t>(l)];
    Eigen::Index rows = static_cast<Eigen::Index>(w.shape[0]);
    z.resize(rows, n);
    z.noalias() = wmap(w) * (*a);
    MatrixXd& h = ctx.post[static_cast<std::size_t>(l)];
    MatrixXd& d = ctx.dact[static_cast<std::size_t>(l)];
    h.resize(rows, n);
    d.resize(rows, n);
    const double* b = p.biases[static_cast<std::size_t>(l)].ptr();
    for (Eigen::Index col = 0; col < n; ++col)
      bias_softplus_column(z.data() + col * rows, b, h.data() + col * rows,
                           d.data() + col * rows, rows);
    a = &h;
  }
  ctx.head_pre.noalias() = wmap(p.weights.back()) * (*a);
  ctx.head_pre.colwise() += bmap(p.biases.back());
  if (p.head == MlpHead::logistic) {
    ctx.output.resize(ctx.head_pre.rows(), ctx.head_pre.cols());
    logistic_pass(ctx.head_pre.data(), ctx.output.data(), ctx.head_pre.size());
  } else {
    ctx.output = ctx.head_pre;
  }
}

void mlp_forward(const MlpParams& p, const MatrixXd& x, MlpCtx& ctx) {
  ctx.input = x;
  mlp_forward_prefilled(p, ctx);
}

Eigen::VectorXd mlp_forward_single(const MlpParams& p, const Eigen::VectorXd& x) {
  MlpCtx ctx;
  mlp_forward(p, x, ctx);
  return ctx.output.col(0);
}

void mlp_backward(const MlpParams& p, const MlpCtx& ctx, const MatrixXd& dout,
                  MlpGrads& g, MatrixXd* dx) {
  int layers = p.layer_count();
  int hidden = layers - 1;
  MatrixXd grad = dout;
  if (p.head == MlpHead::logistic)
    grad.array() *= ctx.output.array() * (1.0 - ctx.output.array());
  const MatrixXd& last_in = hidden > 0 ? ctx.post.back() : ctx.input;
  // dW lands in a col-major temporary first: accumulating straight into the
  // row-major tensor map falls off Eigen's blocked-GEMM path.
  MatrixXd dw;
  dw.noalias() = grad * last_in.transpose();
  wmap(g.weights.back()) += dw;
  Eigen::Map<Eigen::VectorXd>(g.biases.back().ptr(),
                              static_cast<Eigen::Index>(g.biases.back().size())) +=
      grad.rowwise().sum();
  MatrixXd down;
  down.noalias() = wmap(p.weights.back()).transpose() * grad;
  for (int l = hidden - 1; l >= 0; --l) {
    down.array() *= ctx.dact[static_cast<std::size_t>(l)].array();
    const MatrixXd& in = l > 0 ? ctx.post[static_cast<std::size_t>(l - 1)] : ctx.input;
    dw.noalias() = down * in.transpose();
    wmap(g.weights[static_cast<std::size_t>(l)]) += dw;
    Eigen::Map<Eigen::VectorXd>(
        g.biases[static_cast<std::size_t>(l)].ptr(),
        static_cast<Eigen::Index>(g.biases[static_cast<std::size_t>(l)].size())) +=
        down.rowwise().sum();
    if (l > 0 || dx != nullptr) {
      MatrixXd next;
      next.noalias() = wmap(p.weights[static_cast<std::size_t>(l)]).transpose() * down;
      down.swap(next);
    }
  }
  if (dx != nullptr) *dx = down;
}

void mlp_gather_cols(const MlpCtx& src, const std::vector<Eigen::Index>& cols,
                     MlpCtx& dst) {
  Eigen::Index m = static_cast<Eigen::Index>(cols.size());
  auto gather = [&](const MatrixXd& from, MatrixXd& to) {
    to.resize(from.rows(), m);
    for (Eigen::Index k = 0; k < m; ++k)
      to.col(k) = from.col(cols[static_cast<std::size_t>(k)]);
  };
  gather(src.input, dst.input);
  dst.post.resize(src.post.size());
  dst.dact.resize(src.dact.size());
  for (std::size_t l = 0; l < src.post.size(); ++l) {
    gather(src.post[l], dst.post[l]);
    gather(src.dact[l], dst.dact[l]);
  }
  gather(src.output, dst.output);
}

Eigen::MatrixXd mlp_input_gradient(const MlpParams& p, const MlpCtx& ctx,
                                   int output_row) {
  if (p.head != MlpHead::affine)
    throw ConfigError("mlp_input_gradient: affine head only");
  int hidden = p.layer_count() - 1;
  Eigen::Index n = ctx.input.cols();
  auto w_last = wmap(p.weights.back());
  MatrixXd grad = w_last.row(output_row).transpose().replicate(1, n);
  for (int l = hidden - 1; l >= 0; --l) {
    grad.array() *= ctx.dact[static_cast<std::size_t>(l)].array();
    MatrixXd next;
    next.noalias() = wmap(p.weights[static_cast<std::size_t>(l)]).transpose() * grad;
    grad.swap(next);
  }
  return grad;
}

Eigen::MatrixXd mlp_input_gradient_cols(const MlpParams& p, const MlpCtx& ctx,
                                        int output_row,
                                        const std::vector<Eigen::Index>& cols) {
  if (p.head != MlpHead::affine)
    throw ConfigError("mlp_input_gradient: affine head only");
  int hidden = p.layer_count() - 1;
  Eigen::Index m = static_cast<Eigen::Index>(cols.size());
  auto w_last = wmap(p.weights.back());
  MatrixXd grad = w_last.row(output_row).transpose().replicate(1, m);
  MatrixXd next;
  for (int l = hidden - 1; l >= 0; --l) {
    const MatrixXd& dact = ctx.dact[static_cast<std::size_t>(l)];
    for (Eigen::Index k = 0; k < m; ++k)
      grad.col(k).array() *= dact.col(cols[static_cast<std::size_t>(k)]).array();
    next.noalias() = wmap(p.weights[static_cast<std::size_t>(l)]).transpose() * grad;
    grad.swap(next);
  }
  return grad;
}

}  // namespace mvr
