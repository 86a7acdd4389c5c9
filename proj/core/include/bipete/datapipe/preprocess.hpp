// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bipete/datapipe/instance.hpp"
#include "bipete/datapipe/record.hpp"

namespace bipete::data {

inline constexpr int kPad = 0;
inline constexpr int kEmptyVisit = 1;
inline constexpr int kUnk = 2;
inline constexpr std::size_t kReservedTokens = 3;

inline constexpr std::string_view kPadToken = "PAD";
inline constexpr std::string_view kEmptyVisitToken = "EMPTY_VISIT";
inline constexpr std::string_view kUnkToken = "UNK";

struct PreprocessOptions {
  int window_days = 457;
  int min_visits = 3;
  int merge_days = 7;
  std::size_t max_seq_len = 256;
};

/// Counters for the rejection report.
struct PreprocessStats {
  std::size_t records_in = 0;
  std::size_t accepted = 0;
  std::size_t rejected_min_visits = 0;    // too few visits inside the window
  std::size_t rejected_after_overflow = 0;  // too few visits left after length cut
  std::size_t visits_merged = 0;          // raw visits absorbed into an earlier episode
  std::size_t visits_outside_window = 0;
  std::size_t empty_visits = 0;
  std::size_t icd_short_codes = 0;
  std::size_t labs_dropped = 0;          // normal or unflagged results
  std::size_t overflow_visits_dropped = 0;
};

/// Greedy first-visit-anchored episodes: a visit joins the open episode when
/// date - anchor <= merge_days. Episode date is the anchor. Identical events
/// are kept once, except ER counts, which add up. Input must be date-sorted.
std::vector<Visit> merge_visits(std::span<const Visit> sorted, int merge_days = 7);

/// First three characters, uppercased. Shorter codes come back unchanged and
/// bump *short_count when given.
std::string truncate_icd(std::string_view code, std::size_t* short_count = nullptr);

/// "ER_1", "ER_2" or "ER_3PLUS".
std::string er_bin(int count);

/// Visit of string tokens after filtering and dedup.
struct TokenVisit {
  Date date;
  std::vector<std::string> tokens;
};

struct TokenRecord {
  std::string patient_id;
  int label = 0;
  std::vector<TokenVisit> visits;  // chronological, never empty-token
};

/// Sort, merge, window, tokenize, mark empty visits, and fit the length
/// budget by dropping the oldest whole visits. nullopt means rejected
/// (reason recorded in stats).
std::optional<TokenRecord> tokenize_record(const PatientRecord& record, const PreprocessOptions& opts,
                                           PreprocessStats& stats);

/// Token <-> id map with reserved PAD/EMPTY_VISIT/UNK. Regular tokens are
/// ordered by descending corpus frequency, ties by token string.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(std::span<const TokenRecord> records);

  int id_of(std::string_view token) const;  // kUnk when unseen
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  const std::string& source(int id) const;
  std::size_t freq(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }

  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);

 private:
  void add(std::string token, std::string source, std::size_t freq);

  std::vector<std::string> tokens_;
  std::vector<std::string> sources_;
  std::vector<std::size_t> freqs_;
  std::unordered_map<std::string, int> ids_;
};

/// Source tag of a token string ("ICD10:F32" -> "ICD10"); "special" for reserved.
std::string token_source(std::string_view token);

/// Ids plus visit ordinals from 0 and days before the latest visit.
EncodedInstance encode(const TokenRecord& record, const Vocabulary& vocab);

struct PreprocessResult {
  std::vector<EncodedInstance> instances;
  Vocabulary vocab;
  PreprocessStats stats;
};

PreprocessResult preprocess(std::span<const PatientRecord> records, const PreprocessOptions& opts = {});

std::string instance_to_json(const EncodedInstance& inst);
EncodedInstance instance_from_json(std::string_view line);
void write_encoded_jsonl(std::ostream& out, std::span<const EncodedInstance> instances);
std::vector<EncodedInstance> read_encoded_jsonl(std::istream& in);

std::string stats_to_json(const PreprocessStats& s);

}  // namespace bipete::data
