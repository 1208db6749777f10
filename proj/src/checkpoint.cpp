#include "mvr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "mvr/errors.hpp"

namespace mvr {

namespace {

constexpr char kMagic[4] = {'U', 'P', 'A', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void put_entry(std::string& out, const std::string& name,
               const std::vector<std::size_t>& shape, const double* data,
               std::size_t n) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  out.push_back(0);  // dtype f64
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_u64(out, d);
  for (std::size_t i = 0; i < n; ++i) put_f64(out, data[i]);
}

struct Entry {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

}  // namespace

void save_checkpoint(const ModelParams& params, Modality modality,
                     const std::filesystem::path& path) {
  auto views = param_views(const_cast<ModelParams&>(params));

  std::string body;
  std::uint32_t entries = static_cast<std::uint32_t>(views.size()) + 4;

  std::vector<double> meta_dims = {
      static_cast<double>(params.dims.image_channels),
      static_cast<double>(params.dims.point_channels),
      static_cast<double>(params.dims.depth_bins),
      static_cast<double>(params.dims.render_channels),
      static_cast<double>(params.dims.mlp_width),
      static_cast<double>(params.dims.sdf_layers),
      static_cast<double>(params.dims.rgb_layers),
      static_cast<double>(params.dims.geo_dim),
      static_cast<double>(static_cast<int>(modality))};
  put_entry(body, "meta/dims", {meta_dims.size()}, meta_dims.data(), meta_dims.size());

  std::vector<double> res = {static_cast<double>(params.dims.voxel_resolution.x()),
                             static_cast<double>(params.dims.voxel_resolution.y()),
                             static_cast<double>(params.dims.voxel_resolution.z())};
  put_entry(body, "meta/voxel_resolution", {3}, res.data(), 3);

  std::vector<double> bounds = {params.bounds.min.x(), params.bounds.min.y(),
                                params.bounds.min.z(), params.bounds.max.x(),
                                params.bounds.max.y(), params.bounds.max.z()};
  put_entry(body, "meta/bounds", {6}, bounds.data(), 6);

  std::vector<double> range = {params.depth_head.bin_min, params.depth_head.bin_max};
  put_entry(body, "meta/depth_bin_range", {2}, range.data(), 2);

  for (const ParamView& v : views) put_entry(body, v.path, v.shape, v.data, v.size);

  std::string head;
  head.append(kMagic, 4);
  put_u32(head, kVersion);
  put_u32(head, entries);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(4) != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic");
  std::uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t count = r.u32();

  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    r.need(1);
    char dtype = buf[r.pos++];
    if (dtype != 0) throw IoError("checkpoint: unsupported dtype in " + name);
    std::uint32_t ndim = r.u32();
    Entry e;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::uint64_t dim = r.u64();
      e.shape.push_back(static_cast<std::size_t>(dim));
      total *= static_cast<std::size_t>(dim);
    }
    if (total > buf.size()) throw IoError("checkpoint: absurd tensor size in " + name);
    e.data.resize(total);
    for (std::size_t j = 0; j < total; ++j) e.data[j] = r.f64();
    if (!entries.emplace(std::move(name), std::move(e)).second)
      throw IoError("checkpoint: duplicate tensor name");
  }
  if (r.pos != buf.size()) throw IoError("checkpoint: trailing bytes");

  auto take = [&](const std::string& name, std::size_t expect) -> std::vector<double> {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint: missing tensor " + name);
    if (it->second.data.size() != expect)
      throw IoError("checkpoint: wrong size for " + name);
    std::vector<double> v = std::move(it->second.data);
    entries.erase(it);
    return v;
  };

  std::vector<double> meta_dims = take("meta/dims", 9);
  std::vector<double> res = take("meta/voxel_resolution", 3);
  std::vector<double> bounds = take("meta/bounds", 6);
  std::vector<double> range = take("meta/depth_bin_range", 2);

  ModelDims dims;
  dims.image_channels = static_cast<int>(meta_dims[0]);
  dims.point_channels = static_cast<int>(meta_dims[1]);
  dims.depth_bins = static_cast<int>(meta_dims[2]);
  dims.render_channels = static_cast<int>(meta_dims[3]);
  dims.mlp_width = static_cast<int>(meta_dims[4]);
  dims.sdf_layers = static_cast<int>(meta_dims[5]);
  dims.rgb_layers = static_cast<int>(meta_dims[6]);
  dims.geo_dim = static_cast<int>(meta_dims[7]);
  dims.voxel_resolution =
      Eigen::Vector3i(static_cast<int>(res[0]), static_cast<int>(res[1]),
                      static_cast<int>(res[2]));
  int modality_tag = static_cast<int>(meta_dims[8]);
  if (modality_tag < 0 || modality_tag > 2)
    throw IoError("checkpoint: bad modality tag");

  Aabb box;
  box.min = Vec3(bounds[0], bounds[1], bounds[2]);
  box.max = Vec3(bounds[3], bounds[4], bounds[5]);

  Checkpoint ck;
  ck.modality = static_cast<Modality>(modality_tag);
  ck.params = ModelParams::init(dims, box, 0);
  ck.params.depth_head.bin_min = range[0];
  ck.params.depth_head.bin_max = range[1];

  for (ParamView& v : param_views(ck.params)) {
    auto it = entries.find(v.path);
    if (it == entries.end()) throw IoError("checkpoint: missing tensor " + v.path);
    if (it->second.shape != v.shape)
      throw IoError("checkpoint: shape mismatch for " + v.path);
    std::memcpy(v.data, it->second.data.data(), v.size * sizeof(double));
    entries.erase(it);
  }
  if (!entries.empty())
    throw IoError("checkpoint: unknown tensor " + entries.begin()->first);
  ck.params.validate();
  return ck;
}

}  // namespace mvr
