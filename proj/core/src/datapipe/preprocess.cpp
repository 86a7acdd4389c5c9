// SPDX-License-Identifier: Apache-2.0
#include "bipete/datapipe/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>

#include "bipete/errors.hpp"
#include "json.hpp"

namespace bipete::data {

using json = nlohmann::ordered_json;

std::vector<Visit> merge_visits(std::span<const Visit> sorted, int merge_days) {
  std::vector<Visit> out;
  for (const auto& v : sorted) {
    if (!out.empty() && v.date < out.back().date) throw ContractError("merge_visits needs date-sorted visits");
    if (out.empty() || v.date.days - out.back().date.days > merge_days) {
      out.push_back(Visit{v.date, {}});
    }
    auto& ep = out.back();
    for (const auto& e : v.events) {
      if (e.source == Source::er) {
        auto it = std::find_if(ep.events.begin(), ep.events.end(),
                               [](const Event& x) { return x.source == Source::er; });
        if (it != ep.events.end()) {
          it->count += e.count;
          continue;
        }
        ep.events.push_back(e);
        continue;
      }
      if (std::find(ep.events.begin(), ep.events.end(), e) == ep.events.end()) ep.events.push_back(e);
    }
  }
  return out;
}

std::string truncate_icd(std::string_view code, std::size_t* short_count) {
  std::string out(code.substr(0, std::min<std::size_t>(3, code.size())));
  if (code.size() < 3) {
    if (short_count != nullptr) ++*short_count;
    return std::string(code);
  }
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string er_bin(int count) {
  if (count <= 1) return "ER_1";
  if (count == 2) return "ER_2";
  return "ER_3PLUS";
}

std::optional<TokenRecord> tokenize_record(const PatientRecord& record, const PreprocessOptions& opts,
                                           PreprocessStats& stats) {
  ++stats.records_in;
  std::vector<Visit> visits = record.visits;
  std::stable_sort(visits.begin(), visits.end(), [](const Visit& a, const Visit& b) { return a.date < b.date; });
  auto merged = merge_visits(visits, opts.merge_days);
  stats.visits_merged += visits.size() - merged.size();

  TokenRecord out;
  out.patient_id = record.patient_id;
  out.label = record.label;
  for (const auto& v : merged) {
    if (record.index_date.days - v.date.days > opts.window_days) {
      ++stats.visits_outside_window;
      continue;
    }
    TokenVisit tv{v.date, {}};
    int er_total = 0;
    auto push = [&](std::string tok) {
      if (std::find(tv.tokens.begin(), tv.tokens.end(), tok) == tv.tokens.end()) tv.tokens.push_back(std::move(tok));
    };
    for (const auto& e : v.events) {
      switch (e.source) {
        case Source::icd10:
          push("ICD10:" + truncate_icd(e.code, &stats.icd_short_codes));
          break;
        case Source::dbid:
          push("DBID:" + e.code);
          break;
        case Source::loinc: {
          std::string flag = e.flag;
          for (auto& c : flag) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
          if (flag == "H" || flag == "L") {
            push("LOINC:" + e.code + "_" + flag);
          } else {
            ++stats.labs_dropped;
          }
          break;
        }
        case Source::er:
          er_total += e.count;
          break;
      }
    }
    if (er_total > 0) push("ER:" + er_bin(er_total));
    if (tv.tokens.empty()) {
      tv.tokens.emplace_back(kEmptyVisitToken);
      ++stats.empty_visits;
    }
    out.visits.push_back(std::move(tv));
  }
  if (out.visits.size() < static_cast<std::size_t>(opts.min_visits)) {
    ++stats.rejected_min_visits;
    return std::nullopt;
  }
  std::size_t total = 0;
  for (const auto& v : out.visits) total += v.tokens.size();
  std::size_t drop = 0;
  while (total > opts.max_seq_len && drop < out.visits.size()) {
    total -= out.visits[drop].tokens.size();
    ++drop;
  }
  if (drop > 0) {
    stats.overflow_visits_dropped += drop;
    out.visits.erase(out.visits.begin(), out.visits.begin() + static_cast<std::ptrdiff_t>(drop));
    if (out.visits.size() < static_cast<std::size_t>(opts.min_visits)) {
      ++stats.rejected_after_overflow;
      return std::nullopt;
    }
  }
  ++stats.accepted;
  return out;
}

std::string token_source(std::string_view token) {
  if (token == kPadToken || token == kEmptyVisitToken || token == kUnkToken) return "special";
  const auto colon = token.find(':');
  if (colon == std::string_view::npos) return "unknown";
  return std::string(token.substr(0, colon));
}

Vocabulary::Vocabulary() {
  add(std::string(kPadToken), "special", 0);
  add(std::string(kEmptyVisitToken), "special", 0);
  add(std::string(kUnkToken), "special", 0);
}

void Vocabulary::add(std::string token, std::string source, std::size_t freq) {
  if (ids_.contains(token)) throw InputError("duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
  sources_.push_back(std::move(source));
  freqs_.push_back(freq);
}

Vocabulary Vocabulary::build(std::span<const TokenRecord> records) {
  std::map<std::string, std::size_t> counts;
  std::size_t empty = 0;
  for (const auto& r : records) {
    for (const auto& v : r.visits) {
      for (const auto& t : v.tokens) {
        if (t == kEmptyVisitToken) ++empty;
        else ++counts[t];
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  vocab.freqs_[kEmptyVisit] = empty;
  for (auto& [tok, n] : ordered) vocab.add(tok, token_source(tok), n);
  return vocab;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id_of(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw RangeError("token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

const std::string& Vocabulary::source(int id) const {
  token(id);
  return sources_[static_cast<std::size_t>(id)];
}

std::size_t Vocabulary::freq(int id) const {
  token(id);
  return freqs_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    j[tokens_[i]] = json{{"id", i}, {"source", sources_[i]}, {"freq", freqs_[i]}};
  }
  return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("vocab: invalid JSON: ") + e.what());
  }
  struct Entry {
    std::string token, source;
    std::size_t freq;
  };
  std::vector<std::optional<Entry>> slots(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto id = it.value().at("id").get<std::size_t>();
    if (id >= slots.size() || slots[id]) throw InputError("vocab: ids are not dense");
    slots[id] = Entry{it.key(), it.value().at("source").get<std::string>(), it.value().at("freq").get<std::size_t>()};
  }
  if (slots.size() < kReservedTokens || slots[kPad]->token != kPadToken ||
      slots[kEmptyVisit]->token != kEmptyVisitToken || slots[kUnk]->token != kUnkToken) {
    throw InputError("vocab: reserved tokens missing or misplaced");
  }
  Vocabulary v;
  v.freqs_[kEmptyVisit] = slots[kEmptyVisit]->freq;
  for (std::size_t i = kReservedTokens; i < slots.size(); ++i) v.add(slots[i]->token, slots[i]->source, slots[i]->freq);
  return v;
}

EncodedInstance encode(const TokenRecord& record, const Vocabulary& vocab) {
  EncodedInstance inst;
  inst.patient_id = record.patient_id;
  inst.label = record.label;
  if (record.visits.empty()) return inst;
  const int last = record.visits.back().date.days;
  for (std::size_t v = 0; v < record.visits.size(); ++v) {
    const auto& tv = record.visits[v];
    for (const auto& tok : tv.tokens) {
      inst.token_ids.push_back(vocab.id_of(tok));
      inst.visit_idx.push_back(static_cast<int>(v));
      inst.days_ago.push_back(last - tv.date.days);
    }
  }
  return inst;
}

PreprocessResult preprocess(std::span<const PatientRecord> records, const PreprocessOptions& opts) {
  if (opts.min_visits < 1 || opts.window_days < 0 || opts.merge_days < 0 || opts.max_seq_len == 0) {
    throw ConfigError("preprocess options out of range");
  }
  PreprocessResult res;
  std::vector<TokenRecord> kept;
  for (const auto& r : records) {
    if (auto t = tokenize_record(r, opts, res.stats)) kept.push_back(std::move(*t));
  }
  res.vocab = Vocabulary::build(kept);
  for (const auto& t : kept) res.instances.push_back(encode(t, res.vocab));
  return res;
}

std::string instance_to_json(const EncodedInstance& inst) {
  json j;
  j["patient_id"] = inst.patient_id;
  j["label"] = inst.label;
  j["token_ids"] = inst.token_ids;
  j["visit_idx"] = inst.visit_idx;
  j["days_ago"] = inst.days_ago;
  return j.dump();
}

EncodedInstance instance_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    EncodedInstance inst;
    inst.patient_id = j.at("patient_id").get<std::string>();
    inst.label = j.at("label").get<int>();
    inst.token_ids = j.at("token_ids").get<std::vector<int>>();
    inst.visit_idx = j.at("visit_idx").get<std::vector<int>>();
    inst.days_ago = j.at("days_ago").get<std::vector<int>>();
    if (inst.label != 0 && inst.label != 1) throw InputError("label must be 0 or 1");
    if (inst.visit_idx.size() != inst.size() || inst.days_ago.size() != inst.size()) {
      throw InputError("sequence lengths differ");
    }
    return inst;
  } catch (const json::exception& e) {
    throw InputError(std::string("bad encoded instance: ") + e.what());
  }
}

void write_encoded_jsonl(std::ostream& out, std::span<const EncodedInstance> instances) {
  for (const auto& inst : instances) out << instance_to_json(inst) << '\n';
}

std::vector<EncodedInstance> read_encoded_jsonl(std::istream& in) {
  std::vector<EncodedInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(instance_from_json(line));
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string stats_to_json(const PreprocessStats& s) {
  json j;
  j["records_in"] = s.records_in;
  j["accepted"] = s.accepted;
  j["rejected"] = {{"fewer_than_min_visits", s.rejected_min_visits},
                   {"fewer_than_min_visits_after_length_cut", s.rejected_after_overflow}};
  j["visits_merged"] = s.visits_merged;
  j["visits_outside_window"] = s.visits_outside_window;
  j["empty_visits"] = s.empty_visits;
  j["icd_short_codes"] = s.icd_short_codes;
  j["labs_dropped"] = s.labs_dropped;
  j["overflow_visits_dropped"] = s.overflow_visits_dropped;
  return j.dump(2) + "\n";
}

}  // namespace bipete::data
