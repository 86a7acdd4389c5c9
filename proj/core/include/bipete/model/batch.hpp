// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bipete/datapipe/instance.hpp"

namespace bipete::model {

inline constexpr int kPadId = 0;

/// Right-padded [B, L] batch; padding positions carry mask 0 and PAD ids.
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> token_ids;
  std::vector<int> visit_idx;
  std::vector<int> days_ago;
  std::vector<std::uint8_t> mask;
  std::vector<int> labels;
  std::vector<std::size_t> lengths;
};

EncodedBatch make_batch(std::span<const EncodedInstance> instances);
EncodedBatch make_batch(std::span<const EncodedInstance> all, std::span<const std::size_t> rows);

}  // namespace bipete::model
