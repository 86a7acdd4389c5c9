// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <new>
#include <utility>
#include <span>
#include <vector>

#include "bipete/numerics/tensor.hpp"

namespace bipete::num {

namespace detail {

// Value-initialisation is a no-op, so buffers that are fully overwritten
// skip the zero pass.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() noexcept = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}
  template <typename U>
  void construct(U* ptr) noexcept {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    ::new (static_cast<void*>(ptr)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Tape of tensor operations with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is a topological order
/// by construction. Broadcasting is limited to leading-axis expansion: the
/// second operand of add/sub/mul may have a shape equal to a suffix of the
/// first operand's shape. A graph is single-threaded; independent graphs may
/// run concurrently.
template <typename T>
class Graph {
 public:
  /// Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Graph&, std::span<const T>)>;

  Var leaf(Tensor<T> value, bool requires_grad = false);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// a[..., n, k] x b[k, m] -> [..., n, m]; or batched a[B, n, k] x b[B, k, m].
  /// With transpose_b, b is given as [m, k] / [B, m, k].
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
  /// General axis permutation: out.shape[i] = in.shape[perm[i]].
  Var transpose(Var a, std::vector<std::size_t> perm);
  Var reshape(Var a, Shape shape);

  Var softmax(Var a);  // over the last axis
  /// Normalizes over the last axis with population variance; eps inside the sqrt.
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);  // throws DomainError on non-positive input
  Var gelu(Var a);  // erf form
  Var mean(Var a);
  Var sum(Var a);

  /// Rows of table[V, d] selected by ids -> [ids.size(), d].
  Var embedding(Var table, std::span<const int> ids);
  /// Positions where mask != 0 are replaced by fill; no gradient flows there.
  Var masked_fill(Var a, std::span<const std::uint8_t> mask, T fill);

  /// One GRU update with precomputed input gates.
  ///
  /// x_gates[B, 3H] = x W_ih + b_ih, ordered (reset, update, candidate).
  /// r = sig(x_r + h W_r + b_r), z = sig(x_z + h W_z + b_z),
  /// n = tanh(x_n + r * (h W_n + b_n)), h' = (1 - z) n + z h.
  /// With row_mask (one 0/1 value per batch row) rows with mask 0 keep h.
  Var gru_step(Var x_gates, Var h_prev, Var w_hh, Var b_hh, std::span<const T> row_mask = {});

  /// mean over the batch of max(z, 0) - z y + log(1 + exp(-|z|)).
  Var bce_with_logits(Var logits, std::span<const T> labels);

  /// Escape hatch for ops defined outside this class (e.g. rotary embedding).
  Var custom(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Zero-initialised on first access. Only valid for nodes requiring grad.
  std::span<T> grad_buffer(Var v);
  /// Like grad_buffer, but a first access returns uninitialised storage and
  /// sets fresh; the caller must then overwrite every element.
  std::span<T> write_buffer(Var v, bool& fresh);
  void accumulate_grad(Var v, std::span<const T> g);

  /// Reverse sweep from a scalar root. Gradients of earlier runs are cleared.
  void backward(Var root);
  /// d(root)/d(v) after backward(); zeros when v was not reached.
  Tensor<T> grad(Var v) const;

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T, detail::DefaultInitAllocator<T>> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward);
  Var elementwise_binary(Var a, Var b, int op);
  Var unary(Var a, int op);

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace bipete::num
