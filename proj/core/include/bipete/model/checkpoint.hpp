// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "bipete/model/config.hpp"
#include "bipete/model/params.hpp"

namespace bipete::model {

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  ParameterStore<float> params;
};

/// Writes manifest_path (JSON: config, seed, tensor table of name, shape,
/// dtype, byte offset) and a sibling ".bin" payload of little-endian f32.
void save_checkpoint(const std::filesystem::path& manifest_path, const ModelConfig& cfg, std::uint64_t seed,
                     const ParameterStore<float>& params);

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace bipete::model
