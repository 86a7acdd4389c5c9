// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bipete/datapipe/instance.hpp"
#include "bipete/model/config.hpp"
#include "bipete/model/params.hpp"

namespace bipete::attr {

struct IGConfig {
  std::size_t steps = 64;       // m
  std::size_t max_rows = 64;    // interpolation points per graph
};

struct TokenAttribution {
  std::size_t position = 0;
  int token_id = 0;
  int visit_idx = 0;
  double value = 0.0;  // summed over embedding dims
};

struct InstanceAttribution {
  std::string patient_id;
  int label = 0;
  double f_input = 0.0;     // F(x), sigmoid output
  double f_baseline = 0.0;  // F(x'), all-PAD embeddings with the same positions
  double total = 0.0;       // sum of token values
  double gap = 0.0;         // |total - (F(x) - F(x'))|
  std::vector<TokenAttribution> tokens;
};

/// Integrated gradients of the sigmoid output with respect to the token
/// embeddings, right Riemann sum over k = 1..m. The baseline swaps every
/// token embedding for the PAD row and keeps visit and days-ago indices, so
/// both endpoints see the same positional signal.
template <typename T>
InstanceAttribution integrated_gradients(const model::ParameterStore<T>& params, const model::ModelConfig& cfg,
                                         const EncodedInstance& x, const IGConfig& ig = {});

struct RCRow {
  int token_id = 0;
  double a_tp = 0.0, a_tn = 0.0;
  std::optional<double> rc;  // empty when flagged
  std::size_t n_case = 0, n_ctrl = 0;
  bool sign_mismatch = false;
  bool zero_denominator = false;
};

struct RCTable {
  std::size_t n_tp = 0, n_tn = 0;
  std::vector<RCRow> rows;            // tokens passing the frequency rule
  std::size_t dropped_rare = 0;       // tokens failing it
};

/// Relative contribution A_TP / A_TN over correctly classified instances.
/// Repeats of a token inside one instance are averaged first. Tokens present
/// in under min_freq of either group are dropped; opposite signs are kept
/// with a flag and no ratio. Throws DegenerateError on an empty TP or TN group.
RCTable relative_contribution(std::span<const InstanceAttribution> attrs, std::span<const double> probs,
                              std::span<const int> labels, double min_freq = 0.01, double threshold = 0.5);

}  // namespace bipete::attr
