// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bipete/datapipe/generator.hpp"
#include "bipete/datapipe/preprocess.hpp"
#include "bipete/errors.hpp"
#include "bipete/model/network.hpp"
#include "bipete/model/params.hpp"
#include "bipete/training.hpp"

namespace {

using namespace bipete::train;
using bipete::EncodedInstance;
using bipete::model::ModelConfig;

ModelConfig small_model(std::size_t vocab) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.gru_hidden = 8;
  c.vocab_size = vocab;
  return c;
}

struct Data {
  std::vector<EncodedInstance> xs;
  std::size_t vocab = 0;
};

const Data& planted(std::size_t n = 240) {
  static const Data d = [n] {
    bipete::data::GeneratorSpec spec;
    spec.n_patients = n;
    spec.seed = 17;
    const auto res = bipete::data::preprocess(bipete::data::generate(spec).records);
    return Data{res.instances, res.vocab.size()};
  }();
  return d;
}

std::span<const EncodedInstance> head(std::size_t n) { return std::span(planted().xs).first(n); }
std::span<const EncodedInstance> tail(std::size_t n) { return std::span(planted().xs).last(n); }

TEST(Bce, HandValues) {
  const std::vector<double> z{std::log(0.9 / 0.1), std::log(0.2 / 0.8)};
  const std::vector<int> y{1, 0};
  EXPECT_NEAR(bce_from_logits(z, y), (-std::log(0.9) - std::log(0.8)) / 2, 1e-12);
  EXPECT_NEAR(bce_from_logits(z, y), 0.1643, 1e-4);
  const std::vector<double> zero(4, 0.0);
  EXPECT_NEAR(bce_from_logits(zero, std::vector<int>{1, 0, 0, 1}), std::log(2.0), 1e-15);
  EXPECT_LE(bce_from_logits(std::vector<double>{60, -60}, y), 1e-7);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.max_epochs = 0;
  EXPECT_THROW(c.validate(), bipete::ConfigError);
  c = {};
  c.patience = 0;
  EXPECT_THROW(c.validate(), bipete::ConfigError);
  c = {};
  c.lr = -1;
  EXPECT_THROW(c.validate(), bipete::ConfigError);
}

TEST(ClipGlobalNorm, RescalesToMaxNorm) {
  std::vector<bipete::num::Tensor<double>> g{bipete::num::Tensor<double>({2}, {3, 0}),
                                             bipete::num::Tensor<double>({1, 1}, {4})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  // 1e-6 guard in the denominator
  EXPECT_NEAR(g[0][0], 0.6, 1e-6);
  EXPECT_NEAR(g[1][0], 0.8, 1e-6);
  EXPECT_NEAR(clip_global_norm(g, 10.0), 1.0, 1e-6);
  EXPECT_NEAR(g[0][0], 0.6, 1e-6);
}

TEST(Adam, FirstStepMovesBySignedLrAndDecaysMatricesOnly) {
  bipete::model::ParameterStore<double> p;
  p.add("w", bipete::num::Tensor<double>({1, 2}, {1.0, -2.0}));
  p.add("b", bipete::num::Tensor<double>({2}, {1.0, -2.0}));
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  Adam<double> opt(cfg, p);
  const std::vector<bipete::num::Tensor<double>> g{bipete::num::Tensor<double>({1, 2}, {0.3, -7.0}),
                                                   bipete::num::Tensor<double>({2}, {0.3, -7.0})};
  opt.step(p, g);
  // bias-corrected m/sqrt(v) is sign(g) on the first step
  EXPECT_NEAR(p.get("b")[0], 1.0 - 0.1, 1e-6);
  EXPECT_NEAR(p.get("b")[1], -2.0 + 0.1, 1e-6);
  EXPECT_NEAR(p.get("w")[0], 1.0 * (1 - 0.05) - 0.1, 1e-6);
  EXPECT_NEAR(p.get("w")[1], -2.0 * (1 - 0.05) + 0.1, 1e-6);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Training, SmallStepDecreasesBatchLoss) {
  auto cfg_m = small_model(planted().vocab);
  cfg_m.dropout = 0.0;
  auto params = bipete::model::init_parameters<double>(cfg_m, 3);
  std::vector<std::size_t> rows(32);
  std::iota(rows.begin(), rows.end(), 0);
  const auto before = batch_gradients(params, cfg_m, planted().xs, rows, nullptr);
  TrainConfig tc;
  tc.lr = 1e-4;
  tc.weight_decay = 0.0;
  Adam<double> opt(tc, params);
  opt.step(params, before.grads);
  const auto after = batch_gradients(params, cfg_m, planted().xs, rows, nullptr);
  EXPECT_LT(after.loss, before.loss);
}

TEST(Training, ZeroLearningRateKeepsParametersAndFlatLosses) {
  auto cfg_m = small_model(planted().vocab);
  cfg_m.dropout = 0.0;
  TrainConfig tc;
  tc.lr = 0.0;
  tc.max_epochs = 3;
  TrainOptions o;
  o.stream_seed = 5;
  const auto r = train_fold<double>(head(120), tail(40), cfg_m, tc, o);
  const auto init = bipete::model::init_parameters<double>(cfg_m, bipete::substream_seed(5, "init"));
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(r.params.tensor(i).vec(), init.tensor(i).vec());
  ASSERT_EQ(r.log.epochs.size(), 3u);
  for (const auto& e : r.log.epochs) {
    EXPECT_NEAR(e.val_loss, r.log.epochs[0].val_loss, 1e-12);
    EXPECT_NEAR(e.train_loss, r.log.epochs[0].train_loss, 1e-9);
  }
}

TEST(Training, SameSeedGivesIdenticalRunLog) {
  const auto cfg_m = small_model(planted().vocab);
  TrainConfig tc;
  tc.max_epochs = 2;
  TrainOptions o;
  o.stream_seed = 9;
  const auto a = train_fold<float>(head(150), tail(50), cfg_m, tc, o);
  const auto b = train_fold<float>(head(150), tail(50), cfg_m, tc, o);
  ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    EXPECT_EQ(a.log.epochs[i].train_loss, b.log.epochs[i].train_loss);
    EXPECT_EQ(a.log.epochs[i].val_loss, b.log.epochs[i].val_loss);
    EXPECT_EQ(a.log.epochs[i].val_auroc, b.log.epochs[i].val_auroc);
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params.tensor(i).vec(), b.params.tensor(i).vec());
}

TEST(Training, ReturnsBestValidationEpoch) {
  const auto cfg_m = small_model(planted().vocab);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.max_epochs = 8;
  tc.patience = 2;
  TrainOptions o;
  o.stream_seed = 4;
  const auto r = train_fold<double>(head(180), tail(60), cfg_m, tc, o);
  double best = 1e300;
  for (const auto& e : r.log.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.log.epochs[r.log.best_epoch - 1].val_loss, best);
  EXPECT_LE(r.log.stop_epoch, tc.max_epochs);
  EXPECT_EQ(r.log.stop_epoch, r.log.epochs.size());
  // recomputed val loss of the returned parameters
  const auto z = bipete::model::predict_logits(r.params, cfg_m, tail(60));
  std::vector<double> zd(z.begin(), z.end());
  std::vector<int> y;
  for (const auto& x : tail(60)) y.push_back(x.label);
  EXPECT_NEAR(bce_from_logits(zd, y), best, 1e-9);
}

TEST(Training, DivergenceIsNumericErrorNamingEpochAndBatch) {
  const auto cfg_m = small_model(planted().vocab);
  TrainConfig tc;
  tc.lr = 1e30;
  tc.clip_norm = 0.0;
  tc.max_epochs = 3;
  TrainOptions o;
  o.label = "fold 2";
  try {
    train_fold<float>(head(100), tail(30), cfg_m, tc, o);
    FAIL() << "no throw";
  } catch (const bipete::NumericError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("fold 2 epoch"), std::string::npos) << w;
    EXPECT_NE(w.find("batch"), std::string::npos) << w;
  }
}

TEST(Methods, NamesRoundTrip) {
  for (auto m : {Method::both, Method::rope_only, Method::spe_only, Method::none, Method::bigru, Method::logreg,
                 Method::bnb}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("transformer"), bipete::ConfigError);
  EXPECT_TRUE(is_neural(Method::bigru));
  EXPECT_FALSE(is_neural(Method::bnb));
}

TEST(RunCv, BaselinesProduceFiveFoldsWithSampleStd) {
  CvOptions o;
  for (auto m : {Method::logreg, Method::bnb}) {
    const auto r = run_cv(planted().xs, planted().vocab, m, o);
    ASSERT_EQ(r.folds.size(), 5u);
    std::vector<double> au;
    std::size_t n_test = 0;
    for (const auto& f : r.folds) {
      au.push_back(f.auroc);
      n_test += f.test_scores.size();
      EXPECT_FALSE(f.log.has_value());
    }
    EXPECT_EQ(n_test, planted().xs.size());
    const auto ms = bipete::metrics::mean_std(au);
    EXPECT_DOUBLE_EQ(r.auroc.mean, ms.mean);
    EXPECT_DOUBLE_EQ(r.auroc.std, ms.std);
  }
}

TEST(RunCv, ParallelFoldsMatchSerial) {
  CvOptions o;
  o.model = small_model(planted().vocab);
  o.train.max_epochs = 1;
  o.jobs = 1;
  const auto a = run_cv(head(150), planted().vocab, Method::both, o);
  o.jobs = 3;
  const auto b = run_cv(head(150), planted().vocab, Method::both, o);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(a.folds[f].test_scores, b.folds[f].test_scores);
}

TEST(RunCv, SingleClassFoldIsDegenerateNamingFold) {
  auto xs = std::vector<EncodedInstance>(head(60).begin(), head(60).end());
  for (auto& x : xs) x.label = 0;
  try {
    run_cv(xs, planted().vocab, Method::bnb, CvOptions{});
    FAIL() << "no throw";
  } catch (const bipete::DegenerateError& e) {
    EXPECT_NE(std::string(e.what()).find("fold"), std::string::npos);
  }
}

}  // namespace
