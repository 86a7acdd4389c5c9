// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace bipete {

/// Model input: token ids with aligned visit-ordinal and days-ago sequences.
struct EncodedInstance {
  std::string patient_id;
  int label = 0;
  std::vector<int> token_ids;
  std::vector<int> visit_idx;
  std::vector<int> days_ago;

  std::size_t size() const noexcept { return token_ids.size(); }
  bool operator==(const EncodedInstance&) const = default;
};

}  // namespace bipete
