// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bipete::data {

/// Calendar date as days since 1970-01-01.
struct Date {
  int days = 0;
  auto operator<=>(const Date&) const = default;
};

/// Strict YYYY-MM-DD; throws InputError otherwise.
Date parse_date(std::string_view iso);
std::string format_date(Date d);

enum class Source { icd10, dbid, loinc, er };

std::string_view to_string(Source s);
Source source_from_string(std::string_view s);

struct Event {
  std::string code;
  Source source = Source::icd10;
  // LOINC result flag: "H", "L", "N" or empty when not flagged.
  std::string flag;
  // ER visits in this record; only meaningful for Source::er.
  int count = 1;
  bool operator==(const Event&) const = default;
};

struct Visit {
  Date date;
  std::vector<Event> events;
  bool operator==(const Visit&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  int label = 0;
  Date index_date;
  std::vector<Visit> visits;
  bool operator==(const PatientRecord&) const = default;
};

/// One JSON object per line. Errors carry the 1-based line number.
std::vector<PatientRecord> read_patients_jsonl(std::istream& in);
PatientRecord patient_from_json(std::string_view line);
std::string patient_to_json(const PatientRecord& r);
void write_patients_jsonl(std::ostream& out, const std::vector<PatientRecord>& records);

}  // namespace bipete::data
