// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bipete/datapipe/instance.hpp"

namespace bipete::data {

/// Row indices into the instance list.
struct Fold {
  std::vector<std::size_t> train, val, test;
};

/// Stratified k-fold: each class is shuffled and dealt round-robin into k
/// test folds; for fold i the remaining rows are split train:val by
/// train_parts:val_parts within each class, using a (seed, i) shuffle.
std::vector<Fold> kfold_split(std::span<const EncodedInstance> instances, std::size_t k, std::uint64_t seed,
                              std::size_t train_parts = 7, std::size_t val_parts = 1);

/// Copy of rows with every token id that never occurs in the reference rows
/// replaced by unk_id (reserved ids below n_reserved are left alone).
std::vector<EncodedInstance> remap_unseen(std::span<const EncodedInstance> all, std::span<const std::size_t> reference,
                                          std::span<const std::size_t> rows, int unk_id, int n_reserved);

std::vector<EncodedInstance> gather(std::span<const EncodedInstance> all, std::span<const std::size_t> rows);

}  // namespace bipete::data
