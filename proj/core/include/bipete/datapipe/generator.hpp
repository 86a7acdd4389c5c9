// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bipete/datapipe/instance.hpp"
#include "bipete/datapipe/preprocess.hpp"
#include "bipete/datapipe/record.hpp"

namespace bipete::data {

/// Synthetic cohort with a planted temporal motif.
///
/// Every patient has the risk pair R1 -> R2, the R2 visit inside the most
/// recent third of the window. Cases have the pair 8..G days apart, controls
/// 3G+1..6G days apart. The protective token P shows up more often in
/// controls. In a share of controls one earlier visit falls inside the long
/// gap instead, so visit order carries part of the signal; visit counts do
/// not depend on the label.
struct GeneratorSpec {
  std::size_t n_patients = 2000;
  double positive_rate = 0.21;
  std::size_t icd_vocab = 80;
  std::size_t dbid_vocab = 60;
  std::size_t loinc_vocab = 30;
  int gap_days = 30;  // G
  double protective_rate_control = 0.40;
  double protective_rate_case = 0.08;
  int min_events = 1;  // noise events per visit
  int max_events = 4;
  int min_visits_before = 1;  // in-window visits older than R1
  int max_visits_before = 3;
  int max_visits_after = 2;  // visits newer than R2
  double empty_visit_rate = 0.1;
  double satellite_rate = 0.15;  // extra raw visit 1..merge_days after a visit
  double stale_visit_rate = 0.3;  // a visit older than the window
  double between_visit_rate = 0.5;  // controls with a visit between R1 and R2
  double label_noise = 0.0;  // probability of flipping a label
  int window_days = 457;
  int merge_days = 7;
  std::string start_date = "2019-01-01";  // range of index dates
  std::string end_date = "2022-12-31";
  std::uint64_t seed = 42;

  /// Throws ConfigError when the generator config cannot be realised.
  void validate() const;
};

std::string to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(std::string_view text);

/// Planted-token strings as they appear after preprocessing.
struct PlantedTokens {
  std::string risk_a = "ICD10:R45";
  std::string risk_b = "DBID:DBRISK2";
  std::string protective = "LOINC:PROT-1_H";
};

struct GeneratedCohort {
  std::vector<PatientRecord> records;
  PlantedTokens planted;
  std::string manifest_json;
};

GeneratedCohort generate(const GeneratorSpec& spec);

/// Score of the optimal rule on an encoded instance: 1 when R2 follows R1 by
/// at most G days, else 0. Missing tokens score 0.
double planted_rule_score(const EncodedInstance& inst, const Vocabulary& vocab, const PlantedTokens& planted,
                          int gap_days);

}  // namespace bipete::data
