// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <algorithm>
#include <vector>

#include "bipete/model/network.hpp"
#include "bipete/posenc.hpp"
#include "bipete/rng.hpp"

namespace {

using namespace bipete;

std::vector<EncodedInstance> random_instances(std::size_t n, std::size_t len, std::size_t vocab,
                                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedInstance> out(n);
  for (auto& inst : out) {
    int visit = 0;
    int day = 400;
    for (std::size_t t = 0; t < len; ++t) {
      if (t > 0 && rng.bernoulli(0.3)) {
        ++visit;
        day -= static_cast<int>(rng.uniform_int(8, 40));
      }
      inst.token_ids.push_back(static_cast<int>(rng.uniform_int(3, static_cast<std::int64_t>(vocab) - 1)));
      inst.visit_idx.push_back(visit);
      inst.days_ago.push_back(day);
    }
    for (auto& d : inst.days_ago) d -= day;
    inst.label = rng.bernoulli(0.2) ? 1 : 0;
  }
  return out;
}

template <typename T>
void BM_TrainStep(benchmark::State& state) {
  model::ModelConfig cfg;
  cfg.n_layers = static_cast<std::size_t>(std::max<std::int64_t>(state.range(0), 1));
  if (state.range(0) == 0) cfg.kind = model::ModelKind::bigru;
  cfg.vocab_size = 300;
  cfg.dropout = 0.1;
  const auto params = model::init_parameters<T>(cfg, 1);
  const auto data = random_instances(32, static_cast<std::size_t>(state.range(1)), cfg.vocab_size, 2);
  const auto batch = model::make_batch(data);
  std::vector<T> labels(batch.labels.begin(), batch.labels.end());
  Rng rng(3);
  for (auto _ : state) {
    num::Graph<T> g;
    model::BoundParameters<T> p(g, params, true);
    model::ForwardOptions opts{.training = true, .dropout_rng = &rng};
    auto out = model::forward(g, p, cfg, batch, opts);
    auto loss = g.bce_with_logits(out.logits, labels);
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(p.at(0)));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}

template <typename T>
void BM_Rope(benchmark::State& state) {
  const std::size_t len = 256, dh = 64;
  Rng rng(5);
  std::vector<T> v(len * dh);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  std::vector<int> pos(len);
  for (std::size_t i = 0; i < len; ++i) pos[i] = static_cast<int>(i * 3);
  const num::Tensor<T> qk({len, dh}, v);
  for (auto _ : state) benchmark::DoNotOptimize(posenc::rope_rotate(qk, pos));
}

}  // namespace

BENCHMARK(BM_TrainStep<float>)->Args({0, 30})->Args({1, 30})->Args({3, 30})->Args({6, 30})->Args({3, 60})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep<double>)->Args({1, 30})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Rope<float>);

BENCHMARK_MAIN();
