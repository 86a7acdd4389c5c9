// SPDX-License-Identifier: Apache-2.0
#include "bipete/model/batch.hpp"

#include <algorithm>
#include <numeric>

#include "bipete/errors.hpp"

namespace bipete::model {

EncodedBatch make_batch(std::span<const EncodedInstance> instances) {
  std::vector<std::size_t> rows(instances.size());
  std::iota(rows.begin(), rows.end(), 0);
  return make_batch(instances, rows);
}

EncodedBatch make_batch(std::span<const EncodedInstance> all, std::span<const std::size_t> rows) {
  EncodedBatch b;
  b.batch = rows.size();
  for (auto r : rows) {
    const auto& inst = all[r];
    if (inst.visit_idx.size() != inst.size() || inst.days_ago.size() != inst.size()) {
      throw ShapeError("instance '" + inst.patient_id + "' has misaligned sequences");
    }
    b.length = std::max(b.length, inst.size());
  }
  const std::size_t n = b.batch * b.length;
  b.token_ids.assign(n, kPadId);
  b.visit_idx.assign(n, 0);
  b.days_ago.assign(n, 0);
  b.mask.assign(n, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& inst = all[rows[i]];
    std::copy(inst.token_ids.begin(), inst.token_ids.end(), b.token_ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
    std::copy(inst.visit_idx.begin(), inst.visit_idx.end(), b.visit_idx.begin() + static_cast<std::ptrdiff_t>(i * b.length));
    std::copy(inst.days_ago.begin(), inst.days_ago.end(), b.days_ago.begin() + static_cast<std::ptrdiff_t>(i * b.length));
    std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(i * b.length), inst.size(), std::uint8_t{1});
    b.labels.push_back(inst.label);
    b.lengths.push_back(inst.size());
  }
  return b;
}

}  // namespace bipete::model
