// SPDX-License-Identifier: Apache-2.0
#include "bipete/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "bipete/errors.hpp"
#include "bipete/model/batch.hpp"
#include "bipete/model/network.hpp"

namespace bipete::attr {
namespace {

// Sigmoid output for embeddings [n*L, d] of n copies of the instance.
template <typename T>
double model_output(const model::ParameterStore<T>& params, const model::ModelConfig& cfg,
                    const model::EncodedBatch& one, std::vector<T> emb, std::size_t d) {
  num::Graph<T> g;
  model::BoundParameters<T> p(g, params, false);
  const auto x = g.constant(num::Tensor<T>({one.length, d}, std::move(emb)));
  const auto out = model::forward_from_embeddings(g, p, cfg, x, one);
  return static_cast<double>(model::sigmoid(g.value(out.logits)[0]));
}

}  // namespace

template <typename T>
InstanceAttribution integrated_gradients(const model::ParameterStore<T>& params, const model::ModelConfig& cfg,
                                         const EncodedInstance& x, const IGConfig& ig) {
  if (ig.steps < 2) throw ConfigError("integrated gradients needs at least 2 steps");
  if (x.size() == 0) throw InputError("empty instance '" + x.patient_id + "'");
  const std::size_t L = x.size(), d = cfg.d_model, m = ig.steps;
  const auto& table = params.get("embedding.token");
  const auto tv = table.data();
  std::vector<T> e(L * d), base(L * d);
  for (std::size_t t = 0; t < L; ++t) {
    const int id = x.token_ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) throw RangeError("token id " + std::to_string(id));
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * d), d, e.begin() + static_cast<std::ptrdiff_t>(t * d));
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(model::kPadId * d), d, base.begin() + static_cast<std::ptrdiff_t>(t * d));
  }

  InstanceAttribution out;
  out.patient_id = x.patient_id;
  out.label = x.label;
  const EncodedInstance single = x;
  const auto one = model::make_batch(std::span<const EncodedInstance>(&single, 1));
  out.f_input = model_output(params, cfg, one, e, d);
  out.f_baseline = model_output(params, cfg, one, base, d);

  std::vector<double> grad_sum(L * d, 0.0);
  const std::size_t chunk = std::max<std::size_t>(1, ig.max_rows);
  for (std::size_t k0 = 1; k0 <= m; k0 += chunk) {
    const std::size_t n = std::min(chunk, m - k0 + 1);
    const std::vector<EncodedInstance> copies(n, x);
    const auto batch = model::make_batch(copies);
    std::vector<T> interp(n * L * d);
    for (std::size_t r = 0; r < n; ++r) {
      const double alpha = static_cast<double>(k0 + r) / static_cast<double>(m);
      for (std::size_t j = 0; j < L * d; ++j) {
        interp[r * L * d + j] = static_cast<T>(static_cast<double>(base[j]) +
                                               alpha * (static_cast<double>(e[j]) - static_cast<double>(base[j])));
      }
    }
    num::Graph<T> g;
    model::BoundParameters<T> p(g, params, false);
    const auto xv = g.leaf(num::Tensor<T>({n * L, d}, std::move(interp)), true);
    const auto res = model::forward_from_embeddings(g, p, cfg, xv, batch);
    g.backward(g.sum(g.sigmoid(res.logits)));
    const auto grad = g.grad(xv);
    const auto gv = grad.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < L * d; ++j) {
        const double v = static_cast<double>(gv[r * L * d + j]);
        if (!std::isfinite(v)) {
          throw NumericError("non-finite gradient at interpolation step " + std::to_string(k0 + r) + " of '" +
                             x.patient_id + "'");
        }
        grad_sum[j] += v;
      }
    }
  }

  for (std::size_t t = 0; t < L; ++t) {
    double a = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t j = t * d + c;
      a += (static_cast<double>(e[j]) - static_cast<double>(base[j])) * grad_sum[j] / static_cast<double>(m);
    }
    out.tokens.push_back(TokenAttribution{t, x.token_ids[t], x.visit_idx[t], a});
    out.total += a;
  }
  out.gap = std::abs(out.total - (out.f_input - out.f_baseline));
  return out;
}

RCTable relative_contribution(std::span<const InstanceAttribution> attrs, std::span<const double> probs,
                              std::span<const int> labels, double min_freq, double threshold) {
  if (attrs.size() != probs.size() || attrs.size() != labels.size()) {
    throw ShapeError("attributions, probabilities and labels differ in length");
  }
  struct Acc {
    double sum_tp = 0.0, sum_tn = 0.0;
    std::size_t n_tp = 0, n_tn = 0;
  };
  std::map<int, Acc> acc;
  RCTable table;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool tp = pred && labels[i] == 1;
    const bool tn = !pred && labels[i] == 0;
    if (!tp && !tn) continue;
    (tp ? table.n_tp : table.n_tn) += 1;
    // Average repeats within the instance before pooling.
    std::map<int, std::pair<double, std::size_t>> local;
    for (const auto& ta : attrs[i].tokens) {
      auto& [s, c] = local[ta.token_id];
      s += ta.value;
      ++c;
    }
    for (const auto& [tok, sc] : local) {
      if (tok == model::kPadId) continue;
      const double mean = sc.first / static_cast<double>(sc.second);
      auto& a = acc[tok];
      if (tp) {
        a.sum_tp += mean;
        ++a.n_tp;
      } else {
        a.sum_tn += mean;
        ++a.n_tn;
      }
    }
  }
  if (table.n_tp == 0) throw DegenerateError("no true positives at threshold " + std::to_string(threshold));
  if (table.n_tn == 0) throw DegenerateError("no true negatives at threshold " + std::to_string(threshold));
  for (const auto& [tok, a] : acc) {
    const double f_tp = static_cast<double>(a.n_tp) / static_cast<double>(table.n_tp);
    const double f_tn = static_cast<double>(a.n_tn) / static_cast<double>(table.n_tn);
    if (f_tp < min_freq || f_tn < min_freq) {
      ++table.dropped_rare;
      continue;
    }
    RCRow row;
    row.token_id = tok;
    row.n_case = a.n_tp;
    row.n_ctrl = a.n_tn;
    row.a_tp = a.sum_tp / static_cast<double>(a.n_tp);
    row.a_tn = a.sum_tn / static_cast<double>(a.n_tn);
    if (row.a_tn == 0.0) {
      row.zero_denominator = true;
    } else if ((row.a_tp > 0.0) != (row.a_tn > 0.0) || row.a_tp == 0.0) {
      row.sign_mismatch = true;
    } else {
      row.rc = row.a_tp / row.a_tn;
    }
    table.rows.push_back(row);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const RCRow& a, const RCRow& b) {
    if (a.rc.has_value() != b.rc.has_value()) return a.rc.has_value();
    if (a.rc && b.rc && *a.rc != *b.rc) return *a.rc > *b.rc;
    return a.token_id < b.token_id;
  });
  return table;
}

template InstanceAttribution integrated_gradients<float>(const model::ParameterStore<float>&,
                                                         const model::ModelConfig&, const EncodedInstance&,
                                                         const IGConfig&);
template InstanceAttribution integrated_gradients<double>(const model::ParameterStore<double>&,
                                                          const model::ModelConfig&, const EncodedInstance&,
                                                          const IGConfig&);

}  // namespace bipete::attr
