// SPDX-License-Identifier: Apache-2.0
#include "bipete/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bipete/errors.hpp"

namespace bipete::metrics {
namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("scores (" + std::to_string(scores.size()) + ") and labels (" +
                     std::to_string(labels.size()) + ") differ in length");
  }
}

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // ranks i+1..j share the midrank
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DegenerateError("auroc needs both classes");
  const double p = static_cast<double>(n_pos), n = static_cast<double>(n_neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw DegenerateError("auprc needs at least one positive");
  const auto idx = order_by_score_desc(scores);
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, group_pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      if (labels[idx[j]] == 1) ++group_pos;
      ++j;
    }
    tp += group_pos;
    seen = j;
    if (group_pos > 0) {
      ap += (static_cast<double>(group_pos) / static_cast<double>(total_pos)) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    }
    i = j;
  }
  return ap;
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels);
  if (scores.empty()) throw DegenerateError("accuracy of an empty set");
  const auto c = confusion_at(scores, labels, threshold);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] == 1;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ThresholdReport threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                                  std::span<const double> thresholds) {
  ThresholdReport rep;
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("threshold " + std::to_string(t) + " outside (0, 1)");
    ThresholdRow row;
    row.threshold = t;
    row.counts = confusion_at(scores, labels, t);
    const auto& c = row.counts;
    row.ppv = ratio(c.tp, c.tp + c.fp);
    row.sensitivity = ratio(c.tp, c.tp + c.fn);
    row.specificity = ratio(c.tn, c.tn + c.fp);
    rep.rows.push_back(row);
  }
  auto cv_of = [&](auto member, bool& partial) -> std::optional<double> {
    std::vector<double> v;
    for (const auto& r : rep.rows) {
      if ((r.*member).has_value()) v.push_back(100.0 * *(r.*member));
      else partial = true;
    }
    if (v.size() < 2) return std::nullopt;
    return coefficient_of_variation(v);
  };
  rep.cv_ppv = cv_of(&ThresholdRow::ppv, rep.ppv_partial);
  rep.cv_sensitivity = cv_of(&ThresholdRow::sensitivity, rep.sensitivity_partial);
  rep.cv_specificity = cv_of(&ThresholdRow::specificity, rep.specificity_partial);
  return rep;
}

std::optional<double> coefficient_of_variation(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (mean == 0.0) return std::nullopt;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return 100.0 * std::sqrt(ss / n) / mean;
}

Curve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto P = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t N = labels.size() - P;
  if (P == 0 || N == 0) throw DegenerateError("roc curve needs both classes");
  const auto idx = order_by_score_desc(scores);
  Curve c{{0.0}, {0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    c.x.push_back(static_cast<double>(fp) / static_cast<double>(N));
    c.y.push_back(static_cast<double>(tp) / static_cast<double>(P));
    i = j;
  }
  return c;
}

Curve pr_curve(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto P = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (P == 0) throw DegenerateError("precision-recall curve needs a positive");
  const auto idx = order_by_score_desc(scores);
  Curve c;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      if (labels[idx[j]] == 1) ++tp;
      ++j;
    }
    c.x.push_back(static_cast<double>(tp) / static_cast<double>(P));
    c.y.push_back(static_cast<double>(tp) / static_cast<double>(j));
    i = j;
  }
  return c;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

}  // namespace bipete::metrics
