#pragma once

#include <filesystem>

#include "mvr/params.hpp"

namespace mvr {

struct Checkpoint {
  ModelParams params;
  Modality modality = Modality::camera;
};

// Binary container: magic "UPAD", u32 version, u32 entry count, then
// (name, dtype=f64, shape, little-endian payload) entries. Meta entries
// (dims/bounds/bin range/modality) come first, parameter tensors follow in
// param_views order, so save -> load -> save is byte-identical.
void save_checkpoint(const ModelParams& params, Modality modality,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mvr
