// SPDX-License-Identifier: Apache-2.0
#include "bipete/datapipe/split.hpp"

#include <algorithm>
#include <unordered_set>

#include "bipete/errors.hpp"
#include "bipete/rng.hpp"

namespace bipete::data {

std::vector<Fold> kfold_split(std::span<const EncodedInstance> instances, std::size_t k, std::uint64_t seed,
                              std::size_t train_parts, std::size_t val_parts) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  if (train_parts == 0) throw ConfigError("train share must be positive");
  if (instances.size() < k) {
    throw InputError("only " + std::to_string(instances.size()) + " instances for " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < instances.size(); ++i) (instances[i].label == 1 ? pos : neg).push_back(i);
  Rng rng(seed, "split");
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::size_t> order = pos;
  order.insert(order.end(), neg.begin(), neg.end());
  std::vector<std::size_t> fold_of(instances.size());
  for (std::size_t j = 0; j < order.size(); ++j) fold_of[order[j]] = j % k;

  std::vector<Fold> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> rest_pos, rest_neg;
    for (std::size_t j = 0; j < order.size(); ++j) {
      const std::size_t row = order[j];
      if (fold_of[row] == f) folds[f].test.push_back(row);
      else (instances[row].label == 1 ? rest_pos : rest_neg).push_back(row);
    }
    Rng split_rng(seed, "split-val", f);
    for (auto* cls : {&rest_pos, &rest_neg}) {
      split_rng.shuffle(*cls);
      const std::size_t n_val = (cls->size() * val_parts + (train_parts + val_parts) / 2) / (train_parts + val_parts);
      folds[f].val.insert(folds[f].val.end(), cls->begin(), cls->begin() + static_cast<std::ptrdiff_t>(n_val));
      folds[f].train.insert(folds[f].train.end(), cls->begin() + static_cast<std::ptrdiff_t>(n_val), cls->end());
    }
    std::sort(folds[f].test.begin(), folds[f].test.end());
    std::sort(folds[f].val.begin(), folds[f].val.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

std::vector<EncodedInstance> gather(std::span<const EncodedInstance> all, std::span<const std::size_t> rows) {
  std::vector<EncodedInstance> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(all[r]);
  return out;
}

std::vector<EncodedInstance> remap_unseen(std::span<const EncodedInstance> all, std::span<const std::size_t> reference,
                                          std::span<const std::size_t> rows, int unk_id, int n_reserved) {
  std::unordered_set<int> seen;
  for (auto r : reference) seen.insert(all[r].token_ids.begin(), all[r].token_ids.end());
  auto out = gather(all, rows);
  for (auto& inst : out) {
    for (auto& t : inst.token_ids) {
      if (t >= n_reserved && !seen.contains(t)) t = unk_id;
    }
  }
  return out;
}

}  // namespace bipete::data
