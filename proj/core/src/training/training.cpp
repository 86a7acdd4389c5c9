// SPDX-License-Identifier: Apache-2.0
#include "bipete/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "bipete/datapipe/preprocess.hpp"
#include "bipete/datapipe/split.hpp"
#include "bipete/errors.hpp"
#include "bipete/model/baselines.hpp"
#include "bipete/model/batch.hpp"
#include "bipete/model/network.hpp"

namespace bipete::train {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double safe_auroc(std::span<const double> scores, std::span<const int> labels) {
  try {
    return metrics::auroc(scores, labels);
  } catch (const DegenerateError&) {
    return kNaN;
  }
}

std::vector<double> to_proba(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = model::sigmoid(logits[i]);
  return p;
}

std::vector<int> labels_of(std::span<const EncodedInstance> xs) {
  std::vector<int> y;
  y.reserve(xs.size());
  for (const auto& x : xs) y.push_back(x.label);
  return y;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
}

double bce_from_logits(std::span<const double> logits, std::span<const int> labels) {
  if (logits.size() != labels.size()) throw ShapeError("logits and labels differ in length");
  if (logits.empty()) return kNaN;
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    s += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return s / static_cast<double>(logits.size());
}

template <typename T>
BatchGradients<T> batch_gradients(const model::ParameterStore<T>& params, const model::ModelConfig& model_cfg,
                                  std::span<const EncodedInstance> all, std::span<const std::size_t> rows,
                                  Rng* dropout_rng) {
  const auto batch = model::make_batch(all, rows);
  std::vector<T> labels(batch.labels.begin(), batch.labels.end());
  num::Graph<T> g;
  model::BoundParameters<T> p(g, params, true);
  model::ForwardOptions fo;
  fo.training = dropout_rng != nullptr;
  fo.dropout_rng = dropout_rng;
  auto out = model::forward(g, p, model_cfg, batch, fo);
  auto loss = g.bce_with_logits(out.logits, labels);
  BatchGradients<T> res;
  res.loss = static_cast<double>(g.value(loss)[0]);
  for (T z : g.value(out.logits).data()) res.logits.push_back(static_cast<double>(z));
  if (!std::isfinite(res.loss)) return res;
  g.backward(loss);
  res.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) res.grads.push_back(g.grad(p.at(i)));
  return res;
}

template <typename T>
double clip_global_norm(std::vector<num::Tensor<T>>& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& gt : grads) {
    for (T v : gt.data()) ss += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& gt : grads) {
      std::vector<T> v = gt.vec();
      for (auto& x : v) x *= f;
      gt = num::Tensor<T>(gt.shape(), std::move(v));
    }
  }
  return norm;
}

template <typename T>
Adam<T>::Adam(const TrainConfig& cfg, const model::ParameterStore<T>& params) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.tensor(i).numel(), 0.0);
    v_.emplace_back(params.tensor(i).numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(model::ParameterStore<T>& params, const std::vector<num::Tensor<T>>& grads) {
  if (grads.size() != params.size()) throw ShapeError("gradient count differs from parameter count");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& w = params.tensor(i);
    const auto gr = grads[i].data();
    if (gr.size() != w.numel()) throw ShapeError("gradient of '" + params.name(i) + "' has the wrong size");
    const double decay = w.rank() >= 2 ? cfg_.lr * cfg_.weight_decay : 0.0;
    std::vector<T> next = w.vec();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < next.size(); ++j) {
      const double gj = static_cast<double>(gr[j]);
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mh = m[j] / bc1, vh = v[j] / bc2;
      const double wj = static_cast<double>(next[j]);
      next[j] = static_cast<T>(wj - decay * wj - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
    params.set(i, num::Tensor<T>(w.shape(), std::move(next)));
  }
}

template <typename T>
FoldTraining<T> train_fold(std::span<const EncodedInstance> train, std::span<const EncodedInstance> val,
                           const model::ModelConfig& model_cfg, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  model_cfg.validate();
  if (train.empty()) throw DegenerateError(opts.label + ": empty training split");
  const auto start = std::chrono::steady_clock::now();
  FoldTraining<T> res;
  auto params = model::init_parameters<T>(model_cfg, substream_seed(opts.stream_seed, "init"));
  Adam<T> adam(cfg, params);
  const auto val_labels = labels_of(val);
  double best_loss = std::numeric_limits<double>::infinity();
  res.params = params;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(opts.stream_seed, "shuffle", epoch).shuffle(order);
    Rng dropout_rng(opts.stream_seed, "dropout", epoch);

    std::vector<double> train_scores(train.size());
    std::vector<int> train_labels(train.size());
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b0);
      std::span<const std::size_t> rows(order.data() + b0, n);
      BatchGradients<T> bg;
      try {
        bg = batch_gradients(params, model_cfg, train, rows, &dropout_rng);
      } catch (const NumericError& e) {
        throw NumericError(opts.label + " epoch " + std::to_string(epoch) + " batch " + std::to_string(n_batches) +
                           ": " + e.what());
      }
      if (!std::isfinite(bg.loss)) {
        throw NumericError(opts.label + " epoch " + std::to_string(epoch) + " batch " + std::to_string(n_batches) +
                           ": non-finite loss");
      }
      clip_global_norm(bg.grads, cfg.clip_norm);
      adam.step(params, bg.grads);
      loss_sum += bg.loss * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        train_scores[b0 + i] = model::sigmoid(bg.logits[i]);
        train_labels[b0 + i] = train[rows[i]].label;
      }
      ++n_batches;
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train.size());
    row.train_acc = metrics::accuracy(train_scores, train_labels);
    row.train_auroc = safe_auroc(train_scores, train_labels);
    if (!val.empty()) {
      const auto logits_t = model::predict_logits(params, model_cfg, val);
      const std::vector<double> logits(logits_t.begin(), logits_t.end());
      const auto p = to_proba(logits);
      row.val_loss = bce_from_logits(logits, val_labels);
      row.val_acc = metrics::accuracy(p, val_labels);
      row.val_auroc = safe_auroc(p, val_labels);
    } else {
      row.val_loss = row.train_loss;
      row.val_acc = row.train_acc;
      row.val_auroc = row.train_auroc;
    }
    res.log.epochs.push_back(row);
    res.log.stop_epoch = epoch;
    if (opts.keep_snapshots) res.snapshots.push_back(params);
    if (row.val_loss < best_loss) {
      best_loss = row.val_loss;
      res.log.best_epoch = epoch;
      res.params = params;
    }
    if (opts.early_stopping && epoch - res.log.best_epoch >= cfg.patience) break;
  }
  if (res.log.best_epoch == 0) {
    // Every val loss was NaN; keep the initial parameters and say so.
    throw NumericError(opts.label + ": validation loss never finite");
  }
  res.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::both: return "both";
    case Method::rope_only: return "rope_only";
    case Method::spe_only: return "spe_only";
    case Method::none: return "none";
    case Method::bigru: return "bigru";
    case Method::logreg: return "logreg";
    case Method::bnb: return "bnb";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::both, Method::rope_only, Method::spe_only, Method::none, Method::bigru, Method::logreg,
                   Method::bnb}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

bool is_neural(Method m) { return m != Method::logreg && m != Method::bnb; }

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return substream_seed(seed, "fold", fold); }

namespace {

model::ModelConfig config_for(Method m, const model::ModelConfig& base, std::size_t vocab_size) {
  auto cfg = base;
  cfg.vocab_size = vocab_size;
  cfg.kind = model::ModelKind::bipete;
  switch (m) {
    case Method::both: cfg.positional_mode = model::PositionalMode::both; break;
    case Method::rope_only: cfg.positional_mode = model::PositionalMode::rope_only; break;
    case Method::spe_only: cfg.positional_mode = model::PositionalMode::spe_only; break;
    case Method::none: cfg.positional_mode = model::PositionalMode::none; break;
    case Method::bigru:
      cfg.kind = model::ModelKind::bigru;
      cfg.positional_mode = model::PositionalMode::none;
      break;
    default: break;
  }
  return cfg;
}

struct FoldData {
  std::vector<EncodedInstance> train, val, test;
};

FoldData fold_data(std::span<const EncodedInstance> data, const data::Fold& f) {
  FoldData fd;
  fd.train = data::gather(data, f.train);
  fd.val = data::remap_unseen(data, f.train, f.val, data::kUnk, static_cast<int>(data::kReservedTokens));
  fd.test = data::remap_unseen(data, f.train, f.test, data::kUnk, static_cast<int>(data::kReservedTokens));
  return fd;
}

template <typename T>
std::vector<double> neural_scores(const model::ParameterStore<T>& params, const model::ModelConfig& cfg,
                                  std::span<const EncodedInstance> xs) {
  const auto p = model::predict_proba(params, cfg, xs);
  return std::vector<double>(p.begin(), p.end());
}

void score_fold(FoldResult& r) {
  r.auroc = metrics::auroc(r.test_scores, r.test_labels);
  r.auprc = metrics::auprc(r.test_scores, r.test_labels);
  r.accuracy = metrics::accuracy(r.test_scores, r.test_labels);
  r.thresholds = metrics::threshold_metrics(r.test_scores, r.test_labels);
}

template <typename T>
void run_neural(std::span<const EncodedInstance> data, const std::vector<data::Fold>& folds,
                const model::ModelConfig& cfg, const CvOptions& opts, std::vector<FoldResult>& results) {
  const std::size_t k = folds.size();
  std::vector<FoldTraining<T>> trained(k);
  std::vector<FoldData> fds(k);
  std::vector<std::exception_ptr> errors(k);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < k; f = next++) {
      try {
        fds[f] = fold_data(data, folds[f]);
        TrainOptions to;
        to.stream_seed = fold_seed(opts.seed, f);
        to.label = "fold " + std::to_string(f);
        to.early_stopping = !opts.fold_average_stopping;
        to.keep_snapshots = opts.fold_average_stopping;
        trained[f] = train_fold<T>(fds[f].train, fds[f].val, cfg, opts.train, to);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(opts.jobs, k));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (opts.fold_average_stopping) {
    std::size_t epochs = trained[0].log.epochs.size();
    for (const auto& t : trained) epochs = std::min(epochs, t.log.epochs.size());
    std::size_t best = 1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < epochs; ++e) {
      double mean = 0.0;
      for (const auto& t : trained) mean += t.log.epochs[e].val_loss / static_cast<double>(k);
      if (mean < best_loss) {
        best_loss = mean;
        best = e + 1;
      }
    }
    for (auto& t : trained) {
      t.params = t.snapshots[best - 1];
      t.log.best_epoch = best;
      t.snapshots.clear();
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    auto& r = results[f];
    r.test_scores = neural_scores(trained[f].params, cfg, fds[f].test);
    r.log = trained[f].log;
    r.params = trained[f].params.template cast<float>();
  }
}

}  // namespace

CvResult run_cv(std::span<const EncodedInstance> data, std::size_t vocab_size, Method method, const CvOptions& opts) {
  opts.train.validate();
  const auto folds = data::kfold_split(data, opts.folds, opts.seed);
  CvResult res;
  res.method = method;
  res.model = config_for(method, opts.model, vocab_size);
  res.folds.resize(folds.size());
  for (std::size_t f = 0; f < folds.size(); ++f) {
    auto& r = res.folds[f];
    r.fold = f;
    r.test_rows = folds[f].test;
    for (auto row : folds[f].test) {
      r.test_ids.push_back(data[row].patient_id);
      r.test_labels.push_back(data[row].label);
    }
  }
  if (is_neural(method)) {
    res.model.validate();
    if (opts.precision == num::Precision::f64) {
      run_neural<double>(data, folds, res.model, opts, res.folds);
    } else {
      run_neural<float>(data, folds, res.model, opts, res.folds);
    }
  } else {
    for (std::size_t f = 0; f < folds.size(); ++f) {
      try {
        const auto fd = fold_data(data, folds[f]);
        const auto x_train = model::one_hot(fd.train, vocab_size);
        const auto x_test = model::one_hot(fd.test, vocab_size);
        const auto y_train = labels_of(fd.train);
        if (method == Method::logreg) {
          model::LogisticRegression lr;
          lr.fit(x_train, y_train);
          res.folds[f].test_scores = lr.predict_proba(x_test);
        } else {
          model::BernoulliNB nb;
          nb.fit(x_train, y_train);
          res.folds[f].test_scores = nb.predict_proba(x_test);
        }
      } catch (const DegenerateError& e) {
        throw DegenerateError("fold " + std::to_string(f) + ": " + e.what());
      }
    }
  }
  for (auto& r : res.folds) {
    try {
      score_fold(r);
    } catch (const DegenerateError& e) {
      throw DegenerateError("fold " + std::to_string(r.fold) + " test split: " + e.what());
    }
  }
  std::vector<double> au, ap, acc;
  for (const auto& r : res.folds) {
    au.push_back(r.auroc);
    ap.push_back(r.auprc);
    acc.push_back(r.accuracy);
  }
  res.auroc = metrics::mean_std(au);
  res.auprc = metrics::mean_std(ap);
  res.accuracy = metrics::mean_std(acc);
  return res;
}

#define BIPETE_TRAIN_INSTANTIATE(T)                                                                            \
  template BatchGradients<T> batch_gradients<T>(const model::ParameterStore<T>&, const model::ModelConfig&,    \
                                                std::span<const EncodedInstance>, std::span<const std::size_t>, \
                                                Rng*);                                                         \
  template double clip_global_norm<T>(std::vector<num::Tensor<T>>&, double);                                   \
  template class Adam<T>;                                                                                      \
  template FoldTraining<T> train_fold<T>(std::span<const EncodedInstance>, std::span<const EncodedInstance>,   \
                                         const model::ModelConfig&, const TrainConfig&, const TrainOptions&);

BIPETE_TRAIN_INSTANTIATE(float)
BIPETE_TRAIN_INSTANTIATE(double)

}  // namespace bipete::train
