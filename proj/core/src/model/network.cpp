// SPDX-License-Identifier: Apache-2.0
#include "bipete/model/network.hpp"

#include <cmath>
#include <string>

#include "bipete/errors.hpp"
#include "bipete/posenc.hpp"

namespace bipete::model {
namespace {

using num::Graph;
using num::Tensor;
using num::Var;

constexpr double kMaskedScore = -1e9;

template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, const ForwardOptions& opts) {
  if (!opts.training || rate <= 0.0) return x;
  if (opts.dropout_rng == nullptr) throw ContractError("training forward needs a dropout rng");
  const auto& s = g.shape(x);
  std::vector<T> keep(num::shape_numel(s));
  const T scale = T(1) / static_cast<T>(1.0 - rate);
  // Drop probability quantised to 1/65536; one 64-bit draw serves four elements.
  const auto threshold = static_cast<std::uint32_t>(std::lround(rate * 65536.0));
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (i % 4 == 0) bits = opts.dropout_rng->next_u64();
    const auto u = static_cast<std::uint32_t>(bits & 0xFFFFu);
    bits >>= 16;
    keep[i] = u < threshold ? T(0) : scale;
  }
  return g.mul(x, g.constant(Tensor<T>(s, std::move(keep))));
}

template <typename T>
Var encoder_layer(Graph<T>& g, const BoundParameters<T>& p, const ModelConfig& cfg, std::size_t layer,
                  Var h, const EncodedBatch& batch, const std::vector<std::uint8_t>& score_mask,
                  const ForwardOptions& opts, std::vector<Tensor<T>>* attention) {
  const std::string pre = "layer" + std::to_string(layer) + ".";
  const std::size_t B = batch.batch, L = batch.length, d = cfg.d_model;
  const std::size_t H = cfg.n_heads, dh = cfg.head_dim();

  Var a = g.layer_norm(h, p(pre + "ln1.gamma"), p(pre + "ln1.beta"));
  Var q = g.add(g.matmul(a, p(pre + "attn.wq")), p(pre + "attn.bq"));
  Var k = g.add(g.matmul(a, p(pre + "attn.wk")), p(pre + "attn.bk"));
  Var v = g.add(g.matmul(a, p(pre + "attn.wv")), p(pre + "attn.bv"));
  if (cfg.uses_rope()) {
    q = posenc::rope(g, q, batch.days_ago, dh, cfg.rope_base);
    k = posenc::rope(g, k, batch.days_ago, dh, cfg.rope_base);
  }
  auto split_heads = [&](Var x) {
    return g.reshape(g.transpose(g.reshape(x, {B, L, H, dh}), {0, 2, 1, 3}), {B * H, L, dh});
  };
  q = split_heads(q);
  k = split_heads(k);
  v = split_heads(v);
  Var scores = g.scale(g.matmul(q, k, /*transpose_b=*/true), T(1) / std::sqrt(static_cast<T>(dh)));
  scores = g.masked_fill(scores, score_mask, static_cast<T>(kMaskedScore));
  Var weights = g.softmax(scores);
  if (attention != nullptr) attention->push_back(g.value(weights).reshaped({B, H, L, L}));
  weights = dropout(g, weights, cfg.dropout, opts);
  Var ctx = g.matmul(weights, v);
  ctx = g.reshape(g.transpose(g.reshape(ctx, {B, H, L, dh}), {0, 2, 1, 3}), {B * L, d});
  Var attn_out = g.add(g.matmul(ctx, p(pre + "attn.wo")), p(pre + "attn.bo"));
  h = g.add(h, attn_out);

  Var f = g.layer_norm(h, p(pre + "ln2.gamma"), p(pre + "ln2.beta"));
  f = g.gelu(g.add(g.matmul(f, p(pre + "ffn.w1")), p(pre + "ffn.b1")));
  f = dropout(g, f, cfg.dropout, opts);
  f = g.add(g.matmul(f, p(pre + "ffn.w2")), p(pre + "ffn.b2"));
  return g.add(h, f);
}

// Runs one GRU direction over [L, B, 3H] precomputed gates; returns the final state.
template <typename T>
Var gru_direction(Graph<T>& g, const BoundParameters<T>& p, const std::string& dir, Var gates_lb,
                  const EncodedBatch& batch, std::size_t hidden, bool reverse) {
  const std::size_t B = batch.batch, L = batch.length;
  Var h = g.constant(Tensor<T>::zeros({B, hidden}));
  const Var w_hh = p("gru." + dir + ".w_hh");
  const Var b_hh = p("gru." + dir + ".b_hh");
  std::vector<T> row_mask(B);
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = reverse ? L - 1 - step : step;
    for (std::size_t b = 0; b < B; ++b) row_mask[b] = batch.mask[b * L + t] ? T(1) : T(0);
    Var xg = g.reshape(g.slice(gates_lb, 0, t, t + 1), {B, 3 * hidden});
    h = g.gru_step(xg, h, w_hh, b_hh, row_mask);
  }
  return h;
}

template <typename T>
Var bigru_head(Graph<T>& g, const BoundParameters<T>& p, const ModelConfig& cfg, Var seq,
               const EncodedBatch& batch) {
  const std::size_t B = batch.batch, L = batch.length, H = cfg.gru_hidden;
  auto gates = [&](const std::string& dir) {
    Var x = g.add(g.matmul(seq, p("gru." + dir + ".w_ih")), p("gru." + dir + ".b_ih"));
    return g.transpose(g.reshape(x, {B, L, 3 * H}), {1, 0, 2});
  };
  Var h_fwd = gru_direction(g, p, "fwd", gates("fwd"), batch, H, false);
  Var h_bwd = gru_direction(g, p, "bwd", gates("bwd"), batch, H, true);
  const Var parts[] = {h_fwd, h_bwd};
  Var pooled = g.concat(parts, 1);
  Var logit = g.add(g.matmul(pooled, p("head.w")), p("head.b"));
  return g.reshape(logit, {B});
}

}  // namespace

template <typename T>
num::Var embed_tokens(num::Graph<T>& g, const BoundParameters<T>& p, const EncodedBatch& batch) {
  return g.embedding(p("embedding.token"), batch.token_ids);
}

template <typename T>
ForwardOutput<T> forward_from_embeddings(num::Graph<T>& g, const BoundParameters<T>& p,
                                         const ModelConfig& cfg, num::Var embeddings,
                                         const EncodedBatch& batch, const ForwardOptions& opts) {
  const std::size_t B = batch.batch, L = batch.length, d = cfg.d_model;
  if (L > cfg.max_seq_len) {
    throw RangeError("sequence length " + std::to_string(L) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  if (g.shape(embeddings) != num::Shape{B * L, d}) {
    throw ShapeError("embeddings " + num::shape_str(g.shape(embeddings)) + " for batch " +
                     std::to_string(B) + "x" + std::to_string(L));
  }
  ForwardOutput<T> out;
  // sqrt(d) keeps 0.02-scale token rows from vanishing under the unit-amplitude SPE
  Var h = g.scale(embeddings, std::sqrt(static_cast<T>(d)));
  if (cfg.uses_spe()) {
    const auto table = posenc::spe_table<T>(cfg.max_visits, d, cfg.spe_base);
    std::vector<T> rows(B * L * d);
    for (std::size_t t = 0; t < B * L; ++t) {
      const int v = batch.visit_idx[t];
      if (v < 0 || static_cast<std::size_t>(v) >= cfg.max_visits) {
        throw RangeError("visit index " + std::to_string(v) + " outside [0, " +
                         std::to_string(cfg.max_visits) + ")");
      }
      std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(v) * d), d,
                  rows.begin() + static_cast<std::ptrdiff_t>(t * d));
    }
    h = g.add(h, g.constant(Tensor<T>({B * L, d}, std::move(rows))));
  }
  h = dropout(g, h, cfg.dropout, opts);

  if (cfg.kind == ModelKind::bipete) {
    const std::size_t H = cfg.n_heads;
    std::vector<std::uint8_t> score_mask(B * H * L * L);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t hd = 0; hd < H; ++hd) {
        for (std::size_t i = 0; i < L; ++i) {
          for (std::size_t j = 0; j < L; ++j) {
            score_mask[((b * H + hd) * L + i) * L + j] = batch.mask[b * L + j] ? 0 : 1;
          }
        }
      }
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      h = encoder_layer(g, p, cfg, l, h, batch, score_mask, opts,
                        opts.keep_attention ? &out.attention : nullptr);
    }
    h = g.layer_norm(h, p("final_ln.gamma"), p("final_ln.beta"));
  }
  out.logits = bigru_head(g, p, cfg, h, batch);
  for (T z : g.value(out.logits).data()) {
    if (!std::isfinite(z)) throw NumericError("non-finite logit in forward pass");
  }
  return out;
}

template <typename T>
ForwardOutput<T> forward(num::Graph<T>& g, const BoundParameters<T>& p, const ModelConfig& cfg,
                         const EncodedBatch& batch, const ForwardOptions& opts) {
  return forward_from_embeddings(g, p, cfg, embed_tokens(g, p, batch), batch, opts);
}

template <typename T>
std::vector<T> predict_logits(const ParameterStore<T>& params, const ModelConfig& cfg,
                              std::span<const EncodedInstance> instances, std::size_t batch_size) {
  std::vector<T> out;
  out.reserve(instances.size());
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, instances.size() - start);
    const auto batch = make_batch(instances.subspan(start, n));
    Graph<T> g;
    BoundParameters<T> p(g, params, false);
    const auto res = forward(g, p, cfg, batch);
    for (T z : g.value(res.logits).data()) out.push_back(z);
  }
  return out;
}

template <typename T>
std::vector<T> predict_proba(const ParameterStore<T>& params, const ModelConfig& cfg,
                             std::span<const EncodedInstance> instances, std::size_t batch_size) {
  auto z = predict_logits(params, cfg, instances, batch_size);
  for (auto& v : z) v = sigmoid(v);
  return z;
}

#define BIPETE_NETWORK_INSTANTIATE(T)                                                            \
  template num::Var embed_tokens<T>(num::Graph<T>&, const BoundParameters<T>&,                  \
                                    const EncodedBatch&);                                        \
  template ForwardOutput<T> forward_from_embeddings<T>(num::Graph<T>&, const BoundParameters<T>&, \
                                                       const ModelConfig&, num::Var,             \
                                                       const EncodedBatch&, const ForwardOptions&); \
  template ForwardOutput<T> forward<T>(num::Graph<T>&, const BoundParameters<T>&,               \
                                       const ModelConfig&, const EncodedBatch&,                  \
                                       const ForwardOptions&);                                   \
  template std::vector<T> predict_logits<T>(const ParameterStore<T>&, const ModelConfig&,        \
                                            std::span<const EncodedInstance>, std::size_t);      \
  template std::vector<T> predict_proba<T>(const ParameterStore<T>&, const ModelConfig&,         \
                                           std::span<const EncodedInstance>, std::size_t);

BIPETE_NETWORK_INSTANTIATE(float)
BIPETE_NETWORK_INSTANTIATE(double)

}  // namespace bipete::model
