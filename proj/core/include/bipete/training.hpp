// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bipete/datapipe/instance.hpp"
#include "bipete/metrics.hpp"
#include "bipete/model/config.hpp"
#include "bipete/model/params.hpp"
#include "bipete/numerics/tensor.hpp"
#include "bipete/rng.hpp"

namespace bipete::train {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, rank >= 2 tensors only
  double clip_norm = 1.0;      // global L2 norm; <= 0 disables
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 42;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, train_acc = 0, train_auroc = 0;
  double val_loss = 0, val_acc = 0, val_auroc = 0;
};

struct RunLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  double wall_seconds = 0.0;
};

/// Stable mean BCE from logits.
double bce_from_logits(std::span<const double> logits, std::span<const int> labels);

template <typename T>
struct FoldTraining {
  model::ParameterStore<T> params;  // best-val-loss epoch
  RunLog log;
  /// Parameters after every epoch (only when keep_snapshots).
  std::vector<model::ParameterStore<T>> snapshots;
};

struct TrainOptions {
  std::uint64_t stream_seed = 0;  // seeds init, shuffle and dropout streams
  std::string label = "fold";     // prefix of diagnostics
  bool early_stopping = true;
  bool keep_snapshots = false;
};

/// Adam(W) with global-norm clipping and early stopping on val loss.
/// Throws NumericError naming epoch and batch on a non-finite loss.
template <typename T>
FoldTraining<T> train_fold(std::span<const EncodedInstance> train, std::span<const EncodedInstance> val,
                           const model::ModelConfig& model_cfg, const TrainConfig& cfg, const TrainOptions& opts);

template <typename T>
struct BatchGradients {
  double loss = 0.0;
  std::vector<double> logits;
  std::vector<num::Tensor<T>> grads;  // aligned with the parameter store
};

/// Forward + backward of the mean BCE on one batch. With a null dropout_rng
/// the forward runs in eval mode.
template <typename T>
BatchGradients<T> batch_gradients(const model::ParameterStore<T>& params, const model::ModelConfig& model_cfg,
                                  std::span<const EncodedInstance> all, std::span<const std::size_t> rows,
                                  Rng* dropout_rng);

/// Rescales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_global_norm(std::vector<num::Tensor<T>>& grads, double max_norm);

/// Adam with decoupled weight decay on rank >= 2 tensors.
template <typename T>
class Adam {
 public:
  Adam(const TrainConfig& cfg, const model::ParameterStore<T>& params);
  void step(model::ParameterStore<T>& params, const std::vector<num::Tensor<T>>& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Cross-validation over one method.

enum class Method { both, rope_only, spe_only, none, bigru, logreg, bnb };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
bool is_neural(Method m);

struct CvOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  TrainConfig train;
  model::ModelConfig model;  // vocab_size and kind/positional_mode are set per method
  num::Precision precision = num::Precision::f32;
  /// Stop every fold at the epoch minimising the fold-averaged val loss.
  bool fold_average_stopping = false;
  std::size_t jobs = 1;
};

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::string> test_ids;
  std::vector<int> test_labels;
  std::vector<double> test_scores;
  double auroc = 0, auprc = 0, accuracy = 0;
  metrics::ThresholdReport thresholds;
  std::optional<RunLog> log;                    // neural methods
  std::optional<model::ParameterStore<float>> params;  // neural methods
  std::vector<std::size_t> test_rows;
};

struct CvResult {
  Method method = Method::both;
  model::ModelConfig model;
  std::vector<FoldResult> folds;
  metrics::MeanStd auroc, auprc, accuracy;
};

CvResult run_cv(std::span<const EncodedInstance> data, std::size_t vocab_size, Method method,
                const CvOptions& opts);

/// Per-fold seed for the training streams.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

}  // namespace bipete::train
