#include "mvr/conv.hpp"

#include <Eigen/Dense>

namespace mvr {

namespace {

using Eigen::MatrixXd;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// im2col for 2D: one row per output pixel, columns (ci, dv, du).
MatrixXd im2col2d(const double* in, int h, int w, int ci) {
  MatrixXd col(static_cast<Eigen::Index>(h) * w, static_cast<Eigen::Index>(ci) * 9);
  col.setZero();
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      Eigen::Index row = static_cast<Eigen::Index>(v) * w + u;
      for (int dv = 0; dv < 3; ++dv) {
        int sv = v - 1 + dv;
        if (sv < 0 || sv >= h) continue;
        for (int du = 0; du < 3; ++du) {
          int su = u - 1 + du;
          if (su < 0 || su >= w) continue;
          const double* px = in + (static_cast<std::size_t>(sv) * w + su) * ci;
          for (int c = 0; c < ci; ++c)
            col(row, static_cast<Eigen::Index>(c) * 9 + dv * 3 + du) = px[c];
        }
      }
    }
  }
  return col;
}

// Scatter-add of the column gradient back onto the input plane.
void col2im2d(const MatrixXd& dcol, int h, int w, int ci, double* din) {
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      Eigen::Index row = static_cast<Eigen::Index>(v) * w + u;
      for (int dv = 0; dv < 3; ++dv) {
        int sv = v - 1 + dv;
        if (sv < 0 || sv >= h) continue;
        for (int du = 0; du < 3; ++du) {
          int su = u - 1 + du;
          if (su < 0 || su >= w) continue;
          double* px = din + (static_cast<std::size_t>(sv) * w + su) * ci;
          for (int c = 0; c < ci; ++c)
            px[c] += dcol(row, static_cast<Eigen::Index>(c) * 9 + dv * 3 + du);
        }
      }
    }
  }
}

MatrixXd im2col3d(const double* in, int nx, int ny, int nz, int ci) {
  Eigen::Index sites = static_cast<Eigen::Index>(nx) * ny * nz;
  MatrixXd col(sites, static_cast<Eigen::Index>(ci) * 27);
  col.setZero();
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      for (int z = 0; z < nz; ++z) {
        Eigen::Index row = (static_cast<Eigen::Index>(x) * ny + y) * nz + z;
        for (int dx = 0; dx < 3; ++dx) {
          int sx = x - 1 + dx;
          if (sx < 0 || sx >= nx) continue;
          for (int dy = 0; dy < 3; ++dy) {
            int sy = y - 1 + dy;
            if (sy < 0 || sy >= ny) continue;
            for (int dz = 0; dz < 3; ++dz) {
              int sz = z - 1 + dz;
              if (sz < 0 || sz >= nz) continue;
              const double* vx =
                  in + ((static_cast<std::size_t>(sx) * ny + sy) * nz + sz) * ci;
              Eigen::Index tap = (static_cast<Eigen::Index>(dx) * 3 + dy) * 3 + dz;
              for (int c = 0; c < ci; ++c)
                col(row, static_cast<Eigen::Index>(c) * 27 + tap) = vx[c];
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im3d(const MatrixXd& dcol, int nx, int ny, int nz, int ci, double* din) {
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      for (int z = 0; z < nz; ++z) {
        Eigen::Index row = (static_cast<Eigen::Index>(x) * ny + y) * nz + z;
        for (int dx = 0; dx < 3; ++dx) {
          int sx = x - 1 + dx;
          if (sx < 0 || sx >= nx) continue;
          for (int dy = 0; dy < 3; ++dy) {
            int sy = y - 1 + dy;
            if (sy < 0 || sy >= ny) continue;
            for (int dz = 0; dz < 3; ++dz) {
              int sz = z - 1 + dz;
              if (sz < 0 || sz >= nz) continue;
              double* vx = din + ((static_cast<std::size_t>(sx) * ny + sy) * nz + sz) * ci;
              Eigen::Index tap = (static_cast<Eigen::Index>(dx) * 3 + dy) * 3 + dz;
              for (int c = 0; c < ci; ++c)
                vx[c] += dcol(row, static_cast<Eigen::Index>(c) * 27 + tap);
            }
          }
        }
      }
    }
  }
}

// Weight tensor reshaped as (co, ci*k) without copying: the (ci, taps) axes
// are already contiguous in that order.
Eigen::Map<const RowMatrixXd> weight_matrix(const Tensor& w, int k) {
  return Eigen::Map<const RowMatrixXd>(w.ptr(), static_cast<Eigen::Index>(w.shape[0]),
                                       static_cast<Eigen::Index>(w.shape[1]) * k);
}

}  // namespace

void conv2d_forward(const double* in, int h, int w, const Conv2dParams& p, double* out) {
  int co = p.out_channels();
  MatrixXd col = im2col2d(in, h, w, p.in_channels());
  auto wm = weight_matrix(p.w, 9);
  Eigen::Map<RowMatrixXd> om(out, col.rows(), co);
  om.noalias() = col * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(p.b.ptr(), co);
}

void conv2d_backward(const double* dout, const double* in, int h, int w,
                     const Conv2dParams& p, double* din, Conv2dParams* dp) {
  int co = p.out_channels();
  int ci = p.in_channels();
  Eigen::Map<const RowMatrixXd> dom(dout, static_cast<Eigen::Index>(h) * w, co);
  if (dp != nullptr) {
    MatrixXd col = im2col2d(in, h, w, ci);
    Eigen::Map<RowMatrixXd> dwm(dp->w.ptr(), co, static_cast<Eigen::Index>(ci) * 9);
    dwm.noalias() += dom.transpose() * col;
    Eigen::Map<Eigen::RowVectorXd>(dp->b.ptr(), co) += dom.colwise().sum();
  }
  if (din != nullptr) {
    auto wm = weight_matrix(p.w, 9);
    MatrixXd dcol = dom * wm;
    col2im2d(dcol, h, w, ci, din);
  }
}

void conv3d_forward(const double* in, int nx, int ny, int nz, const Conv3dParams& p,
                    double* out) {
  int co = p.out_channels();
  MatrixXd col = im2col3d(in, nx, ny, nz, p.in_channels());
  auto wm = weight_matrix(p.w, 27);
  Eigen::Map<RowMatrixXd> om(out, col.rows(), co);
  om.noalias() = col * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(p.b.ptr(), co);
}

void conv3d_backward(const double* dout, const double* in, int nx, int ny, int nz,
                     const Conv3dParams& p, double* din, Conv3dParams* dp) {
  int co = p.out_channels();
  int ci = p.in_channels();
  Eigen::Index sites = static_cast<Eigen::Index>(nx) * ny * nz;
  Eigen::Map<const RowMatrixXd> dom(dout, sites, co);
  if (dp != nullptr) {
    MatrixXd col = im2col3d(in, nx, ny, nz, ci);
    Eigen::Map<RowMatrixXd> dwm(dp->w.ptr(), co, static_cast<Eigen::Index>(ci) * 27);
    dwm.noalias() += dom.transpose() * col;
    Eigen::Map<Eigen::RowVectorXd>(dp->b.ptr(), co) += dom.colwise().sum();
  }
  if (din != nullptr) {
    auto wm = weight_matrix(p.w, 27);
    MatrixXd dcol = dom * wm;
    col2im3d(dcol, nx, ny, nz, ci, din);
  }
}

}  // namespace mvr
