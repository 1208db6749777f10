#pragma once

#include <cstddef>
#include <vector>

#include "mvr/errors.hpp"

namespace mvr {

// Row-major H x W x 3 image, values in [0,1], channel fastest.
struct ImageRgb {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static ImageRgb zeros(int h, int w) {
    ImageRgb img;
    img.height = h;
    img.width = w;
    img.data.assign(static_cast<std::size_t>(h) * w * 3, 0.0);
    return img;
  }
  double* at(int u, int v) { return data.data() + (static_cast<std::size_t>(v) * width + u) * 3; }
  const double* at(int u, int v) const {
    return data.data() + (static_cast<std::size_t>(v) * width + u) * 3;
  }
};

}  // namespace mvr
