#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mvr/image.hpp"

namespace mvr {

struct PpmImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // rgb, row-major
};

struct PgmImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;
  double depth_max = 0.0;  // from the sidecar; scene units
};

std::uint8_t quantize_channel(double c);  // round(255 * clamp(c, 0, 1))

// Binary P6, maxval 255.
void write_rgb_ppm(const ImageRgb& img, const std::filesystem::path& path);
PpmImage read_ppm(const std::filesystem::path& path);

// Binary P5, maxval 65535, samples MSB-first; pixel = round(65535 * d /
// depth_max) with depth_max (the finite maximum, or 1) in "<path>.max".
// Non-finite or negative depths write 0.
void write_depth_pgm(const std::vector<double>& depth, int height, int width,
                     const std::filesystem::path& path);
PgmImage read_depth_pgm(const std::filesystem::path& path);

}  // namespace mvr
