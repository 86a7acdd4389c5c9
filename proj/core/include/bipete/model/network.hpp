// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "bipete/model/batch.hpp"
#include "bipete/model/config.hpp"
#include "bipete/model/params.hpp"
#include "bipete/numerics/graph.hpp"
#include "bipete/rng.hpp"

namespace bipete::model {

struct ForwardOptions {
  bool training = false;       // enables dropout
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0
  bool keep_attention = false;
};

template <typename T>
struct ForwardOutput {
  num::Var logits;  // [B]
  /// Per layer, post-softmax weights [B, n_heads, L, L] (only with keep_attention).
  std::vector<num::Tensor<T>> attention;
};

/// Token embeddings [B*L, d_model].
template <typename T>
num::Var embed_tokens(num::Graph<T>& g, const BoundParameters<T>& p, const EncodedBatch& batch);

/// Everything after the token lookup: SPE, the Pre-LN encoder stack with
/// rotary queries/keys, final layer norm, then the BiGRU head. For the bigru
/// kind the embeddings go straight to the head.
template <typename T>
ForwardOutput<T> forward_from_embeddings(num::Graph<T>& g, const BoundParameters<T>& p,
                                         const ModelConfig& cfg, num::Var embeddings,
                                         const EncodedBatch& batch, const ForwardOptions& opts = {});

template <typename T>
ForwardOutput<T> forward(num::Graph<T>& g, const BoundParameters<T>& p, const ModelConfig& cfg,
                         const EncodedBatch& batch, const ForwardOptions& opts = {});

/// Eval-mode logits for a set of instances, processed in fixed-size batches.
template <typename T>
std::vector<T> predict_logits(const ParameterStore<T>& params, const ModelConfig& cfg,
                              std::span<const EncodedInstance> instances,
                              std::size_t batch_size = 64);

template <typename T>
std::vector<T> predict_proba(const ParameterStore<T>& params, const ModelConfig& cfg,
                             std::span<const EncodedInstance> instances,
                             std::size_t batch_size = 64);

/// Overflow-free logistic function.
template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace bipete::model
