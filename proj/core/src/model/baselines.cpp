// SPDX-License-Identifier: Apache-2.0
#include "bipete/model/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "bipete/errors.hpp"
#include "bipete/model/network.hpp"

namespace bipete::model {
namespace {

std::pair<std::size_t, std::size_t> class_counts(const OneHot& data, std::span<const int> labels) {
  if (labels.size() != data.rows) throw ShapeError("labels do not match one-hot rows");
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0 || pos == data.rows) throw DegenerateError("training labels contain a single class");
  return {pos, data.rows - pos};
}

}  // namespace

OneHot one_hot(std::span<const EncodedInstance> instances, std::size_t vocab_size) {
  OneHot out;
  out.rows = instances.size();
  out.cols = vocab_size;
  out.x.assign(out.rows * out.cols, 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (int t : instances[i].token_ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw RangeError("token id " + std::to_string(t));
      out.x[i * vocab_size + static_cast<std::size_t>(t)] = 1;
    }
  }
  return out;
}

void LogisticRegression::fit(const OneHot& data, std::span<const int> labels, const LogRegOptions& opts) {
  class_counts(data, labels);
  const std::size_t n = data.rows, d = data.cols;
  w_.assign(d, 0.0);
  b_ = 0.0;
  std::vector<double> gw(d);
  for (std::size_t step = 0; step < opts.steps; ++step) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = b_;
      const auto* row = &data.x[i * d];
      for (std::size_t v = 0; v < d; ++v) {
        if (row[v]) z += w_[v];
      }
      const double r = sigmoid(z) - labels[i];
      gb += r;
      for (std::size_t v = 0; v < d; ++v) {
        if (row[v]) gw[v] += r;
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t v = 0; v < d; ++v) w_[v] -= opts.lr * (gw[v] * inv_n + opts.l2 * w_[v]);
    b_ -= opts.lr * gb * inv_n;
  }
}

std::vector<double> LogisticRegression::predict_proba(const OneHot& data) const {
  if (data.cols != w_.size()) throw ShapeError("one-hot width differs from the fitted model");
  std::vector<double> p(data.rows);
  for (std::size_t i = 0; i < data.rows; ++i) {
    double z = b_;
    for (std::size_t v = 0; v < data.cols; ++v) {
      if (data.at(i, v)) z += w_[v];
    }
    p[i] = sigmoid(z);
  }
  return p;
}

void BernoulliNB::fit(const OneHot& data, std::span<const int> labels, double alpha) {
  const auto [n1, n0] = class_counts(data, labels);
  std::vector<double> c0(data.cols, 0.0), c1(data.cols, 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    auto& c = labels[i] == 1 ? c1 : c0;
    for (std::size_t v = 0; v < data.cols; ++v) c[v] += data.at(i, v);
  }
  theta0_.resize(data.cols);
  theta1_.resize(data.cols);
  for (std::size_t v = 0; v < data.cols; ++v) {
    theta0_[v] = (c0[v] + alpha) / (static_cast<double>(n0) + 2.0 * alpha);
    theta1_[v] = (c1[v] + alpha) / (static_cast<double>(n1) + 2.0 * alpha);
  }
  log_prior_ratio_ = std::log(static_cast<double>(n1)) - std::log(static_cast<double>(n0));
}

std::vector<double> BernoulliNB::log_odds(const OneHot& data) const {
  if (data.cols != theta0_.size()) throw ShapeError("one-hot width differs from the fitted model");
  std::vector<double> out(data.rows);
  for (std::size_t i = 0; i < data.rows; ++i) {
    double s = log_prior_ratio_;
    for (std::size_t v = 0; v < data.cols; ++v) {
      s += data.at(i, v) ? std::log(theta1_[v]) - std::log(theta0_[v])
                         : std::log1p(-theta1_[v]) - std::log1p(-theta0_[v]);
    }
    out[i] = s;
  }
  return out;
}

std::vector<double> BernoulliNB::predict_proba(const OneHot& data) const {
  auto s = log_odds(data);
  for (auto& v : s) v = sigmoid(v);
  return s;
}

}  // namespace bipete::model
