// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bipete/errors.hpp"
#include "bipete/numerics/graph.hpp"
#include "fd.hpp"

namespace {

using bipete::Rng;
using bipete::num::Graph;
using bipete::num::Shape;
using bipete::num::Tensor;
using bipete::num::Var;
using bipete::testing::max_fd_error;
using bipete::testing::random_tensor;

constexpr double kFdTol = 1e-4;

// sum(out * W) for a fixed random W, so every output element matters.
Var weighted_sum(Graph<double>& g, Var out, std::uint64_t seed) {
  Rng rng(seed, "weights");
  const auto w = g.constant(random_tensor(rng, g.shape(out)));
  return g.sum(g.mul(out, w));
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(Graph<double>&, const std::vector<Var>&)> op;
  double scale = 1.0;
};

std::vector<OpCase> op_cases() {
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](auto& g, const auto& x) { return g.matmul(x[0], x[1]); }},
      {"matmul_lead", {{2, 3, 4}, {4, 5}}, [](auto& g, const auto& x) { return g.matmul(x[0], x[1]); }},
      {"matmul_bt", {{3, 4}, {5, 4}}, [](auto& g, const auto& x) { return g.matmul(x[0], x[1], true); }},
      {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, [](auto& g, const auto& x) { return g.matmul(x[0], x[1]); }},
      {"matmul_batched_bt", {{2, 3, 4}, {2, 5, 4}}, [](auto& g, const auto& x) { return g.matmul(x[0], x[1], true); }},
      {"add", {{3, 4}, {3, 4}}, [](auto& g, const auto& x) { return g.add(x[0], x[1]); }},
      {"add_broadcast", {{2, 3, 4}, {4}}, [](auto& g, const auto& x) { return g.add(x[0], x[1]); }},
      {"sub_broadcast", {{2, 3, 4}, {3, 4}}, [](auto& g, const auto& x) { return g.sub(x[0], x[1]); }},
      {"mul_broadcast", {{3, 4}, {4}}, [](auto& g, const auto& x) { return g.mul(x[0], x[1]); }},
      {"mul_self", {{5}}, [](auto& g, const auto& x) { return g.mul(x[0], x[0]); }},
      {"scale", {{3, 2}}, [](auto& g, const auto& x) { return g.scale(x[0], -1.7); }},
      {"concat0", {{2, 3}, {1, 3}},
       [](auto& g, const auto& x) {
         const Var p[] = {x[0], x[1]};
         return g.concat(p, 0);
       }},
      {"concat1", {{2, 3}, {2, 2}},
       [](auto& g, const auto& x) {
         const Var p[] = {x[0], x[1]};
         return g.concat(p, 1);
       }},
      {"slice", {{4, 5}}, [](auto& g, const auto& x) { return g.slice(x[0], 1, 1, 4); }},
      {"transpose", {{2, 3, 4}}, [](auto& g, const auto& x) { return g.transpose(x[0], {2, 0, 1}); }},
      {"reshape", {{2, 6}}, [](auto& g, const auto& x) { return g.reshape(x[0], {3, 4}); }},
      {"softmax", {{3, 5}}, [](auto& g, const auto& x) { return g.softmax(x[0]); }},
      {"layer_norm", {{3, 6}, {6}, {6}}, [](auto& g, const auto& x) { return g.layer_norm(x[0], x[1], x[2]); }},
      {"sigmoid", {{7}}, [](auto& g, const auto& x) { return g.sigmoid(x[0]); }},
      {"tanh", {{7}}, [](auto& g, const auto& x) { return g.tanh(x[0]); }},
      {"exp", {{7}}, [](auto& g, const auto& x) { return g.exp(x[0]); }},
      {"log", {{7}}, [](auto& g, const auto& x) { return g.log(g.exp(x[0])); }},
      {"gelu", {{9}}, [](auto& g, const auto& x) { return g.gelu(x[0]); }},
      {"mean", {{3, 3}}, [](auto& g, const auto& x) { return g.mean(x[0]); }},
      {"embedding", {{5, 3}},
       [](auto& g, const auto& x) {
         const int ids[] = {4, 0, 4, 2};
         return g.embedding(x[0], ids);
       }},
      {"masked_fill", {{2, 4}},
       [](auto& g, const auto& x) {
         const std::uint8_t m[] = {0, 1, 0, 0, 1, 1, 0, 0};
         return g.masked_fill(x[0], m, -3.0);
       }},
      {"gru_step", {{2, 9}, {2, 3}, {3, 9}, {9}},
       [](auto& g, const auto& x) { return g.gru_step(x[0], x[1], x[2], x[3]); }},
      {"gru_step_masked", {{2, 9}, {2, 3}, {3, 9}, {9}},
       [](auto& g, const auto& x) {
         static const double mask[] = {1.0, 0.0};
         return g.gru_step(x[0], x[1], x[2], x[3], mask);
       }},
  };
}

TEST(GraphGradients, EveryOpMatchesFiniteDifferencesOverTenSeeds) {
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed, c.name);
      std::vector<Tensor<double>> xs;
      for (const auto& s : c.shapes) xs.push_back(random_tensor(rng, s, c.scale));
      const double err = max_fd_error(xs, [&](auto& g, const auto& leaves) {
        return weighted_sum(g, c.op(g, leaves), seed);
      });
      EXPECT_LT(err, kFdTol) << c.name << " seed " << seed;
    }
  }
}

TEST(GraphGradients, BceWithLogitsMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed, "bce");
    const std::vector<double> y{1, 0, 0, 1, 1};
    const double err = max_fd_error({random_tensor(rng, {5}, 2.0)}, [&](auto& g, const auto& x) {
      return g.bce_with_logits(x[0], y);
    });
    EXPECT_LT(err, kFdTol);
  }
}

TEST(GraphGradients, SmallCompositeGraphMatchesFiniteDifferences) {
  // two-layer perceptron with a shared weight, about 20 nodes
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed, "mlp");
    std::vector<Tensor<double>> xs{random_tensor(rng, {4, 3}), random_tensor(rng, {3, 3}), random_tensor(rng, {3}),
                                   random_tensor(rng, {3, 1})};
    const double err = max_fd_error(xs, [](auto& g, const auto& x) {
      auto h = g.tanh(g.add(g.matmul(x[0], x[1]), x[2]));
      h = g.gelu(g.matmul(h, x[1]));
      const auto z = g.reshape(g.matmul(h, x[3]), {4});
      const std::vector<double> y{1, 0, 1, 1};
      return g.add(g.bce_with_logits(z, y), g.mean(g.mul(x[1], x[1])));
    });
    EXPECT_LT(err, kFdTol) << "seed " << seed;
  }
}

TEST(GraphForward, SoftmaxOfZerosIsUniform) {
  Graph<double> g;
  const auto s = g.softmax(g.constant(Tensor<double>::zeros({3})));
  for (double v : g.value(s).data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(GraphForward, SoftmaxRowsSumToOne) {
  Rng rng(3);
  Graph<double> g;
  const auto s = g.softmax(g.constant(random_tensor(rng, {6, 11}, 5.0)));
  const auto v = g.value(s).data();
  for (std::size_t r = 0; r < 6; ++r) {
    EXPECT_NEAR(std::accumulate(v.begin() + static_cast<long>(r * 11), v.begin() + static_cast<long>(r * 11 + 11), 0.0),
                1.0, 1e-6);
  }
}

TEST(GraphForward, MaskedFillThenSoftmaxGivesNegligibleWeight) {
  Graph<float> g;
  const auto x = g.constant(Tensor<float>({1, 4}, {0.3f, 2.0f, -1.0f, 0.5f}));
  const std::uint8_t m[] = {0, 1, 0, 1};
  const auto p = g.value(g.softmax(g.masked_fill(x, m, -1e9f)));
  EXPECT_LT(p[1], 1e-6f);
  EXPECT_LT(p[3], 1e-6f);
}

TEST(GraphForward, IdentityMatmulReturnsInput) {
  Graph<double> g;
  const auto eye = g.constant(Tensor<double>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Tensor<double> a({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto out = g.value(g.matmul(eye, g.constant(a)));
  EXPECT_EQ(out.vec(), a.vec());
}

TEST(GraphForward, LayerNormHandValues) {
  // mean 2, population variance 2/3
  Graph<double> g;
  const auto y = g.layer_norm(g.constant(Tensor<double>({1, 3}, {1, 2, 3})),
                              g.constant(Tensor<double>::filled({3}, 1.0)), g.constant(Tensor<double>::zeros({3})));
  const auto v = g.value(y);
  EXPECT_NEAR(v[0], -1.2247, 1e-3);
  EXPECT_NEAR(v[1], 0.0, 1e-12);
  EXPECT_NEAR(v[2], 1.2247, 1e-3);
}

TEST(GraphForward, LayerNormRowsHaveZeroMeanUnitVariance) {
  Rng rng(11);
  Graph<double> g;
  const auto y = g.layer_norm(g.constant(random_tensor(rng, {5, 16}, 3.0)), g.constant(Tensor<double>::filled({16}, 1.0)),
                              g.constant(Tensor<double>::zeros({16})));
  const auto v = g.value(y).data();
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, s = 0;
    for (std::size_t c = 0; c < 16; ++c) m += v[r * 16 + c] / 16.0;
    for (std::size_t c = 0; c < 16; ++c) s += (v[r * 16 + c] - m) * (v[r * 16 + c] - m) / 16.0;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(s, 1.0, 1e-4);
  }
}

TEST(GraphBackward, SumGivesOnes) {
  Graph<double> g;
  const auto x = g.leaf(Tensor<double>({3}, {0.1, -2, 5}), true);
  g.backward(g.sum(x));
  EXPECT_EQ(g.grad(x).vec(), (std::vector<double>{1, 1, 1}));
}

TEST(GraphBackward, SigmoidAtZeroGivesQuarterX) {
  Graph<double> g;
  const std::vector<double> xv{1.5, -2.0, 0.25};
  const auto w = g.leaf(Tensor<double>::zeros({1, 3}), true);
  const auto x = g.constant(Tensor<double>({3, 1}, xv));
  g.backward(g.sum(g.sigmoid(g.matmul(w, x))));
  const auto gw = g.grad(w);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(gw[i], 0.25 * xv[i]);
}

TEST(GraphBackward, UnreachedLeafGetsZeros) {
  Graph<double> g;
  const auto a = g.leaf(Tensor<double>({2}, {1, 2}), true);
  const auto b = g.leaf(Tensor<double>({2}, {3, 4}), true);
  g.backward(g.sum(a));
  EXPECT_EQ(g.grad(b).vec(), (std::vector<double>{0, 0}));
}

TEST(GraphBackward, NonScalarRootIsContractError) {
  Graph<double> g;
  const auto a = g.leaf(Tensor<double>({2}, {1, 2}), true);
  EXPECT_THROW(g.backward(a), bipete::ContractError);
}

TEST(GraphBackward, RepeatedEvaluationIsBitIdentical) {
  auto run = [] {
    Rng rng(5);
    Graph<float> g;
    const auto a = g.leaf(Tensor<float>({4, 8}, std::vector<float>(32, 0.0f)), true);
    std::vector<float> w(8 * 8);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    const auto b = g.leaf(Tensor<float>({8, 8}, w), true);
    const auto y = g.softmax(g.matmul(g.add(a, g.constant(Tensor<float>::filled({8}, 0.5f))), b));
    g.backward(g.sum(g.mul(y, y)));
    return std::pair{g.value(y).vec(), g.grad(b).vec()};
  };
  EXPECT_EQ(run(), run());
}

TEST(GraphErrors, ShapeMismatchThrows) {
  Graph<double> g;
  const auto a = g.constant(Tensor<double>::zeros({2, 3}));
  const auto b = g.constant(Tensor<double>::zeros({2, 2}));
  EXPECT_THROW(g.add(a, b), bipete::ShapeError);
  EXPECT_THROW(g.matmul(a, b), bipete::ShapeError);
  // only leading-axis broadcasting
  EXPECT_THROW(g.add(a, g.constant(Tensor<double>::zeros({2}))), bipete::ShapeError);
}

TEST(GraphErrors, LogOfNonPositiveIsDomainError) {
  Graph<double> g;
  EXPECT_THROW(g.log(g.constant(Tensor<double>({2}, {1.0, 0.0}))), bipete::DomainError);
}

TEST(GruStep, ZeroParametersGiveZeroState) {
  Graph<double> g;
  const auto h = g.gru_step(g.constant(Tensor<double>::zeros({1, 6})), g.constant(Tensor<double>::zeros({1, 2})),
                            g.constant(Tensor<double>::zeros({2, 6})), g.constant(Tensor<double>::zeros({6})));
  EXPECT_EQ(g.value(h).vec(), (std::vector<double>{0, 0}));
}

TEST(GruStep, SaturatedUpdateGateKeepsState) {
  // gate order (reset, update, candidate); update bias +20 forces z ~ 1
  Graph<double> g;
  std::vector<double> bias(6, 0.0);
  bias[2] = bias[3] = 20.0;
  Rng rng(9);
  const auto h = g.gru_step(g.constant(random_tensor(rng, {1, 6})), g.constant(Tensor<double>({1, 2}, {0.3, -0.7})),
                            g.constant(random_tensor(rng, {2, 6})), g.constant(Tensor<double>({6}, bias)));
  EXPECT_NEAR(g.value(h)[0], 0.3, 1e-3);
  EXPECT_NEAR(g.value(h)[1], -0.7, 1e-3);
}

TEST(GruStep, StateStaysInsideUnitInterval) {
  Rng rng(10);
  Graph<double> g;
  const auto h = g.gru_step(g.constant(random_tensor(rng, {4, 15}, 5.0)), g.constant(Tensor<double>::filled({4, 5}, 0.9)),
                            g.constant(random_tensor(rng, {5, 15}, 5.0)), g.constant(random_tensor(rng, {15})));
  for (double v : g.value(h).data()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Bce, HandValues) {
  Graph<double> g;
  // p = [0.9, 0.2] as logits
  const auto z = g.constant(Tensor<double>({2}, {std::log(0.9 / 0.1), std::log(0.2 / 0.8)}));
  const std::vector<double> y{1, 0};
  EXPECT_NEAR(g.value(g.bce_with_logits(z, y))[0], 0.1643, 1e-4);
  const auto half = g.constant(Tensor<double>::zeros({3}));
  const std::vector<double> y3{1, 0, 1};
  EXPECT_NEAR(g.value(g.bce_with_logits(half, y3))[0], std::log(2.0), 1e-12);
  const auto sat = g.constant(Tensor<double>({2}, {40.0, -40.0}));
  EXPECT_LE(g.value(g.bce_with_logits(sat, y))[0], 1e-7);
}

}  // namespace
