// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bipete/model/config.hpp"
#include "bipete/numerics/tensor.hpp"
#include "bipete/training.hpp"

namespace bipete::cli {

namespace fs = std::filesystem;

/// 0 success, 2 input/config, 3 numeric, 4 degenerate statistics, 1 other.
int exit_code_for(const std::exception& e);

struct GenArgs {
  fs::path spec;  // empty: defaults
  fs::path out;   // patients.jsonl; manifest.json lands next to it
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_patients;
};
void cmd_gen(const GenArgs& a);

struct PreprocessArgs {
  fs::path in, out, vocab;
  fs::path report;  // default: rejections.json next to out
  int window_days = 457;
  int min_visits = 3;
  int merge_days = 7;
  std::size_t max_seq_len = 256;
};
void cmd_preprocess(const PreprocessArgs& a);

struct TrainArgs {
  fs::path data, vocab;
  std::vector<std::string> modes{"both"};
  fs::path out;
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  std::size_t jobs = 1;
  model::ModelConfig model;  // vocab_size comes from the vocabulary
  train::TrainConfig train;
  std::optional<num::Precision> precision;  // default: BIPETE_PRECISION or f32
  bool fold_average_stopping = false;
  bool write_checkpoints = true;
  bool write_plots = true;
};

/// Runs every mode; writes summary.json, metrics.csv, per-fold runlog.csv,
/// checkpoints, test splits and plots under out/. Returns the CV results.
std::vector<train::CvResult> cmd_train(const TrainArgs& a);

struct ExplainArgs {
  fs::path checkpoint;
  fs::path data;   // test instances
  fs::path vocab;  // optional, for token names
  fs::path out;    // rc_table.csv; attributions.csv and completeness.json beside it
  std::size_t steps = 64;
  std::size_t max_instances = 0;  // 0: all
  std::size_t jobs = 1;
  std::optional<num::Precision> precision;  // default f64
  double min_freq = 0.01;
};

struct ExplainSummary {
  std::size_t instances = 0;
  double max_gap = 0.0;
  double mean_gap = 0.0;
  std::size_t n_tp = 0, n_tn = 0;
};
ExplainSummary cmd_explain(const ExplainArgs& a);

/// FNV-1a 64 of a file's bytes as 16 hex digits.
std::string file_hash(const fs::path& p);

}  // namespace bipete::cli
