#pragma once

#include "mvr/tensor.hpp"

namespace mvr {

// 3x3 convolution, stride 1, zero-padded. Weight layout (co, ci, dv, du) with
// taps dv, du in {0,1,2} offsetting (v-1+dv, u-1+du). Planes are H x W x C,
// channel fastest.
struct Conv2dParams {
  Tensor w;  // (co, ci, 3, 3)
  Tensor b;  // (co)

  static Conv2dParams make(int co, int ci) {
    Conv2dParams p;
    p.w = Tensor({static_cast<std::size_t>(co), static_cast<std::size_t>(ci), 3, 3});
    p.b = Tensor({static_cast<std::size_t>(co)});
    return p;
  }
  int out_channels() const { return static_cast<int>(w.shape[0]); }
  int in_channels() const { return static_cast<int>(w.shape[1]); }
};

// 3x3x3 convolution over X x Y x Z x C volumes (Z before C in memory),
// weight layout (co, ci, dx, dy, dz).
struct Conv3dParams {
  Tensor w;  // (co, ci, 3, 3, 3)
  Tensor b;  // (co)

  static Conv3dParams make(int co, int ci) {
    Conv3dParams p;
    p.w = Tensor({static_cast<std::size_t>(co), static_cast<std::size_t>(ci), 3, 3, 3});
    p.b = Tensor({static_cast<std::size_t>(co)});
    return p;
  }
  int out_channels() const { return static_cast<int>(w.shape[0]); }
  int in_channels() const { return static_cast<int>(w.shape[1]); }
};

void conv2d_forward(const double* in, int h, int w, const Conv2dParams& p, double* out);
// din / dp may be null to skip that adjoint.
void conv2d_backward(const double* dout, const double* in, int h, int w,
                     const Conv2dParams& p, double* din, Conv2dParams* dp);

void conv3d_forward(const double* in, int nx, int ny, int nz, const Conv3dParams& p,
                    double* out);
void conv3d_backward(const double* dout, const double* in, int nx, int ny, int nz,
                     const Conv3dParams& p, double* din, Conv3dParams* dp);

}  // namespace mvr
