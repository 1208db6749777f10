#include "mvr/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mvr/errors.hpp"

namespace mvr {

std::uint8_t quantize_channel(double c) {
  double v = std::clamp(c, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("imageio: cannot open " + path.string() + " for writing");
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("imageio: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads one whitespace-delimited ASCII token starting at pos.
std::string next_token(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (start == pos) throw IoError("imageio: truncated header");
  return buf.substr(start, pos - start);
}

int header_int(const std::string& buf, std::size_t& pos, const char* what) {
  std::string tok = next_token(buf, pos);
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw std::invalid_argument("bad");
    return v;
  } catch (const std::exception&) {
    throw IoError(std::string("imageio: bad ") + what + " field: " + tok);
  }
}

}  // namespace

void write_rgb_ppm(const ImageRgb& img, const std::filesystem::path& path) {
  if (img.height < 1 || img.width < 1) throw ConfigError("imageio: empty image");
  std::ofstream out = open_out(path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const double* px = img.at(u, v);
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(u) * 3 + c] = quantize_channel(px[c]);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("imageio: write failed for " + path.string());
}

PpmImage read_ppm(const std::filesystem::path& path) {
  std::string buf = slurp(path);
  std::size_t pos = 0;
  if (next_token(buf, pos) != "P6") throw IoError("imageio: not a P6 file");
  PpmImage img;
  img.width = header_int(buf, pos, "width");
  img.height = header_int(buf, pos, "height");
  int maxval = header_int(buf, pos, "maxval");
  if (maxval != 255) throw IoError("imageio: unsupported PPM maxval");
  ++pos;  // single whitespace after maxval
  std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (pos + n != buf.size()) throw IoError("imageio: PPM payload size mismatch");
  img.data.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  return img;
}

void write_depth_pgm(const std::vector<double>& depth, int height, int width,
                     const std::filesystem::path& path) {
  if (height < 1 || width < 1 ||
      depth.size() != static_cast<std::size_t>(height) * width)
    throw ConfigError("imageio: depth buffer shape mismatch");
  double depth_max = 0.0;
  for (double d : depth)
    if (std::isfinite(d) && d > depth_max) depth_max = d;
  if (depth_max <= 0.0) depth_max = 1.0;

  std::ofstream out = open_out(path);
  out << "P5\n" << width << " " << height << "\n65535\n";
  for (double d : depth) {
    double frac = (std::isfinite(d) && d > 0.0) ? std::min(d / depth_max, 1.0) : 0.0;
    std::uint16_t q = static_cast<std::uint16_t>(std::lround(65535.0 * frac));
    char msb_first[2] = {static_cast<char>((q >> 8) & 0xff),
                         static_cast<char>(q & 0xff)};
    out.write(msb_first, 2);
  }
  if (!out) throw IoError("imageio: write failed for " + path.string());

  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g\n", depth_max);
  std::ofstream side = open_out(path.string() + ".max");
  side << buf;
  if (!side) throw IoError("imageio: sidecar write failed");
}

PgmImage read_depth_pgm(const std::filesystem::path& path) {
  std::string buf = slurp(path);
  std::size_t pos = 0;
  if (next_token(buf, pos) != "P5") throw IoError("imageio: not a P5 file");
  PgmImage img;
  img.width = header_int(buf, pos, "width");
  img.height = header_int(buf, pos, "height");
  int maxval = header_int(buf, pos, "maxval");
  if (maxval != 65535) throw IoError("imageio: unsupported PGM maxval");
  ++pos;
  std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (pos + 2 * n != buf.size()) throw IoError("imageio: PGM payload size mismatch");
  img.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char hi = static_cast<unsigned char>(buf[pos + 2 * i]);
    unsigned char lo = static_cast<unsigned char>(buf[pos + 2 * i + 1]);
    img.data[i] = static_cast<std::uint16_t>((hi << 8) | lo);
  }

  std::string side = slurp(path.string() + ".max");
  try {
    img.depth_max = std::stod(side);
  } catch (const std::exception&) {
    throw IoError("imageio: bad sidecar value");
  }
  return img;
}

}  // namespace mvr
