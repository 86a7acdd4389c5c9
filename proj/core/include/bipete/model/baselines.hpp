// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bipete/datapipe/instance.hpp"

namespace bipete::model {

/// Binary presence matrix [n, vocab_size], row-major: x[i][v] = 1 iff token v
/// occurs in instance i.
struct OneHot {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> x;
  std::uint8_t at(std::size_t i, std::size_t v) const { return x[i * cols + v]; }
};

OneHot one_hot(std::span<const EncodedInstance> instances, std::size_t vocab_size);

struct LogRegOptions {
  double lr = 0.5;
  double l2 = 1e-3;
  std::size_t steps = 500;
};

/// Full-batch gradient descent on mean BCE + (l2/2)|w|^2 (bias unpenalised).
class LogisticRegression {
 public:
  void fit(const OneHot& data, std::span<const int> labels, const LogRegOptions& opts = {});
  std::vector<double> predict_proba(const OneHot& data) const;
  const std::vector<double>& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
};

/// Bernoulli naive Bayes with Laplace smoothing alpha.
class BernoulliNB {
 public:
  void fit(const OneHot& data, std::span<const int> labels, double alpha = 1.0);
  /// log P(y=1 | x) - log P(y=0 | x).
  std::vector<double> log_odds(const OneHot& data) const;
  /// sigmoid(log_odds).
  std::vector<double> predict_proba(const OneHot& data) const;
  /// P(x_v = 1 | y).
  double feature_prob(std::size_t v, int y) const { return y == 1 ? theta1_.at(v) : theta0_.at(v); }

 private:
  std::vector<double> theta0_, theta1_;
  double log_prior_ratio_ = 0.0;
};

}  // namespace bipete::model
