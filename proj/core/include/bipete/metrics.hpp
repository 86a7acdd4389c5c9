// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bipete::metrics {

/// Mann-Whitney form: P(s+ > s-) + P(tie)/2, from midranks.
/// Throws DegenerateError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: sum over tie groups (descending score) of
/// delta-recall times precision at the end of the group.
/// Throws DegenerateError without positives.
double auprc(std::span<const double> scores, std::span<const int> labels);

/// Fraction correct at score >= threshold.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct ThresholdRow {
  double threshold = 0.5;
  Confusion counts;
  // Empty when the denominator is zero.
  std::optional<double> ppv, sensitivity, specificity;
};

struct ThresholdReport {
  std::vector<ThresholdRow> rows;
  // Percent scale, population std. Empty when fewer than two rows define
  // the metric or the mean is zero.
  std::optional<double> cv_ppv, cv_sensitivity, cv_specificity;
  // Set when some threshold left the metric undefined and was excluded.
  bool ppv_partial = false, sensitivity_partial = false, specificity_partial = false;
};

inline constexpr std::array<double, 3> kDefaultThresholds{0.2, 0.5, 0.8};

ThresholdReport threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                                  std::span<const double> thresholds = kDefaultThresholds);

/// 100 * population std / mean. Empty for no values or a zero mean.
std::optional<double> coefficient_of_variation(std::span<const double> values);

/// Curve points from the highest score down, one per distinct score.
struct Curve {
  std::vector<double> x, y;
};
Curve roc_curve(std::span<const double> scores, std::span<const int> labels);  // (FPR, TPR)
Curve pr_curve(std::span<const double> scores, std::span<const int> labels);   // (recall, precision)

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1); 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

}  // namespace bipete::metrics
