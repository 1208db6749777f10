#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace mvr {

// Flat row-major f64 tensor. Deliberately minimal: parameter storage,
// checkpoint I/O, and gradient accumulators only — hot-path math goes
// through Eigen maps over `data`.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(element_count(shape), 0.0);
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace mvr
