// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "bipete/numerics/graph.hpp"
#include "bipete/numerics/tensor.hpp"

/// Positional encodings: sinusoidal visit embeddings (added to token
/// embeddings, keyed on visit ordinal) and rotary days-ago embeddings
/// (rotating query/key pairs, keyed on day offsets).
namespace bipete::posenc {

inline constexpr double kDefaultBase = 10000.0;
inline constexpr std::size_t kDefaultMaxVisits = 512;

/// entry[p, 2i] = sin(p / base^(2i/d)), entry[p, 2i+1] = cos(p / base^(2i/d)).
template <typename T>
num::Tensor<T> spe_table(std::size_t max_pos, std::size_t d_model, double base = kDefaultBase);

/// out[t] = tok_emb[t] + spe_table[visits[t]] for tok_emb [L, d].
template <typename T>
num::Tensor<T> add_visit_embedding(const num::Tensor<T>& tok_emb, std::span<const int> visits,
                                   std::size_t max_pos = kDefaultMaxVisits,
                                   double base = kDefaultBase);

/// Rotates each (2i, 2i+1) pair of qk [L, d_head] by positions[t] * base^(-2i/d_head).
template <typename T>
num::Tensor<T> rope_rotate(const num::Tensor<T>& qk, std::span<const int> positions,
                           double base = kDefaultBase);

/// Differentiable rotary op on x [N, d] where every row holds d / head_dim heads
/// and row t uses positions[t]. Backward rotates the gradient by the inverse angle.
template <typename T>
num::Var rope(num::Graph<T>& g, num::Var x, std::span<const int> positions, std::size_t head_dim,
              double base = kDefaultBase);

}  // namespace bipete::posenc
