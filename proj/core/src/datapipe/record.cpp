// SPDX-License-Identifier: Apache-2.0
#include "bipete/datapipe/record.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <istream>
#include <ostream>

#include "bipete/errors.hpp"
#include "json.hpp"

namespace bipete::data {

using json = nlohmann::ordered_json;

Date parse_date(std::string_view iso) {
  auto bad = [&] { return InputError("malformed date '" + std::string(iso) + "' (want YYYY-MM-DD)"); };
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
  auto field = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    auto [p, ec] = std::from_chars(iso.data() + pos, iso.data() + pos + len, v);
    if (ec != std::errc() || p != iso.data() + pos + len) throw bad();
    return v;
  };
  using namespace std::chrono;
  const year_month_day ymd{year{field(0, 4)}, month{static_cast<unsigned>(field(5, 2))},
                           day{static_cast<unsigned>(field(8, 2))}};
  if (!ymd.ok()) throw bad();
  return Date{static_cast<int>(sys_days{ymd}.time_since_epoch().count())};
}

std::string format_date(Date d) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{d.days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::icd10: return "ICD10";
    case Source::dbid: return "DBID";
    case Source::loinc: return "LOINC";
    case Source::er: return "ER";
  }
  return "?";
}

Source source_from_string(std::string_view s) {
  if (s == "ICD10") return Source::icd10;
  if (s == "DBID") return Source::dbid;
  if (s == "LOINC") return Source::loinc;
  if (s == "ER") return Source::er;
  throw InputError("unknown event source '" + std::string(s) + "'");
}

PatientRecord patient_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("invalid JSON: ") + e.what());
  }
  try {
    PatientRecord r;
    r.patient_id = j.at("patient_id").get<std::string>();
    r.label = j.at("label").get<int>();
    if (r.label != 0 && r.label != 1) throw InputError("label must be 0 or 1");
    r.index_date = parse_date(j.at("index_date").get<std::string>());
    for (const auto& jv : j.at("visits")) {
      Visit v;
      v.date = parse_date(jv.at("date").get<std::string>());
      if (v.date > r.index_date) {
        throw InputError("visit " + format_date(v.date) + " after index date of '" + r.patient_id + "'");
      }
      for (const auto& je : jv.at("events")) {
        Event e;
        e.code = je.at("code").get<std::string>();
        e.source = source_from_string(je.at("source").get<std::string>());
        if (je.contains("flag")) e.flag = je.at("flag").get<std::string>();
        if (je.contains("count")) e.count = je.at("count").get<int>();
        if (e.count < 1) throw InputError("ER count must be >= 1");
        v.events.push_back(std::move(e));
      }
      r.visits.push_back(std::move(v));
    }
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("bad patient record: ") + e.what());
  }
}

std::string patient_to_json(const PatientRecord& r) {
  json j;
  j["patient_id"] = r.patient_id;
  j["label"] = r.label;
  j["index_date"] = format_date(r.index_date);
  j["visits"] = json::array();
  for (const auto& v : r.visits) {
    json jv;
    jv["date"] = format_date(v.date);
    jv["events"] = json::array();
    for (const auto& e : v.events) {
      json je;
      je["code"] = e.code;
      je["source"] = to_string(e.source);
      if (!e.flag.empty()) je["flag"] = e.flag;
      if (e.source == Source::er) je["count"] = e.count;
      jv["events"].push_back(std::move(je));
    }
    j["visits"].push_back(std::move(jv));
  }
  return j.dump();
}

std::vector<PatientRecord> read_patients_jsonl(std::istream& in) {
  std::vector<PatientRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(patient_from_json(line));
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_patients_jsonl(std::ostream& out, const std::vector<PatientRecord>& records) {
  for (const auto& r : records) out << patient_to_json(r) << '\n';
}

}  // namespace bipete::data
