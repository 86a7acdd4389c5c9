// SPDX-License-Identifier: Apache-2.0
#include "bipete/datapipe/generator.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <set>

#include "bipete/errors.hpp"
#include "bipete/rng.hpp"
#include "json.hpp"

namespace bipete::data {
namespace {

using json = nlohmann::ordered_json;

// Raw visit offsets are days before the index date.
struct Slot {
  int before = 0;
  std::vector<Event> events;
};

// k sorted offsets in [lo, hi] with pairwise spacing >= gap.
std::vector<int> spaced_offsets(Rng& rng, int k, int lo, int hi, int gap) {
  std::vector<int> u(static_cast<std::size_t>(k));
  const int reduced = hi - lo - (k - 1) * gap;
  for (auto& x : u) x = static_cast<int>(rng.uniform_int(0, reduced));
  std::sort(u.begin(), u.end());
  for (int j = 0; j < k; ++j) u[static_cast<std::size_t>(j)] += lo + j * gap;
  return u;
}

// force picks the source instead of drawing it.
Event noise_event(Rng& rng, const GeneratorSpec& spec, std::optional<Source> force = std::nullopt) {
  double s = 0.0;
  if (!force) s = rng.uniform();
  else if (*force == Source::dbid) s = 0.5;
  else if (*force == Source::loinc) s = 0.8;
  else if (*force == Source::er) s = 0.95;
  Event e;
  if (s < 0.4) {
    const auto j = rng.uniform_int(0, static_cast<std::int64_t>(spec.icd_vocab) - 1);
    char root[8];
    std::snprintf(root, sizeof root, "%c%02d", static_cast<char>('A' + j / 100), static_cast<int>(j % 100));
    e.code = root;
    if (rng.bernoulli(0.7)) e.code += "." + std::to_string(rng.uniform_int(0, 9));
    e.source = Source::icd10;
  } else if (s < 0.7) {
    char code[16];
    std::snprintf(code, sizeof code, "DB%05d",
                  static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(spec.dbid_vocab) - 1)));
    e.code = code;
    e.source = Source::dbid;
  } else if (s < 0.9) {
    const auto j = rng.uniform_int(0, static_cast<std::int64_t>(spec.loinc_vocab) - 1);
    e.code = std::to_string(10000 + j) + "-" + std::to_string(j % 10);
    e.source = Source::loinc;
    const double f = rng.uniform();
    e.flag = f < 0.4 ? "H" : f < 0.7 ? "L" : f < 0.9 ? "N" : "";
  } else {
    e.code = "ER";
    e.source = Source::er;
    e.count = static_cast<int>(rng.uniform_int(1, 4));
  }
  return e;
}

void add_noise(Rng& rng, const GeneratorSpec& spec, Slot& slot) {
  const auto k = rng.uniform_int(spec.min_events, spec.max_events);
  for (std::int64_t i = 0; i < k; ++i) slot.events.push_back(noise_event(rng, spec));
}

}  // namespace

void GeneratorSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("generator spec: " + m); };
  if (n_patients == 0) fail("n_patients must be positive");
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) fail("positive_rate must lie in (0, 1)");
  if (icd_vocab == 0 || dbid_vocab == 0 || loinc_vocab == 0) fail("vocabulary sizes must be positive");
  if (icd_vocab > 1700) fail("icd_vocab above 1700 roots");  // keeps noise roots clear of R45
  if (gap_days < 1) fail("gap_days must be >= 1");
  if (merge_days < 0) fail("merge_days must be >= 0");
  if (gap_days <= merge_days) fail("gap_days must exceed merge_days so the risk visits stay apart");
  if (min_events < 1 || max_events < min_events) fail("bad noise event range");
  if (min_visits_before < 1 || max_visits_before < min_visits_before || max_visits_after < 0) {
    fail("bad visit count range");
  }
  for (double r : {protective_rate_case, protective_rate_control, empty_visit_rate, satellite_rate,
                   stale_visit_rate, between_visit_rate, label_noise}) {
    if (!(r >= 0.0 && r <= 1.0)) fail("rates must lie in [0, 1]");
  }
  const int spacing = merge_days + 1;
  const int r2_max = window_days / 3;
  if (r2_max < max_visits_after * spacing) fail("window too short for the visits after the risk pair");
  if (r2_max + 6 * gap_days + max_visits_before * spacing > window_days) {
    fail("window of " + std::to_string(window_days) + " days too short for gap_days " + std::to_string(gap_days) +
         " and " + std::to_string(max_visits_before) + " earlier visits");
  }
  if (parse_date(start_date) > parse_date(end_date)) fail("start_date after end_date");
}

std::string to_json(const GeneratorSpec& s) {
  json j;
  j["n_patients"] = s.n_patients;
  j["positive_rate"] = s.positive_rate;
  j["icd_vocab"] = s.icd_vocab;
  j["dbid_vocab"] = s.dbid_vocab;
  j["loinc_vocab"] = s.loinc_vocab;
  j["gap_days"] = s.gap_days;
  j["protective_rate_control"] = s.protective_rate_control;
  j["protective_rate_case"] = s.protective_rate_case;
  j["min_events"] = s.min_events;
  j["max_events"] = s.max_events;
  j["min_visits_before"] = s.min_visits_before;
  j["max_visits_before"] = s.max_visits_before;
  j["max_visits_after"] = s.max_visits_after;
  j["empty_visit_rate"] = s.empty_visit_rate;
  j["satellite_rate"] = s.satellite_rate;
  j["stale_visit_rate"] = s.stale_visit_rate;
  j["between_visit_rate"] = s.between_visit_rate;
  j["label_noise"] = s.label_noise;
  j["window_days"] = s.window_days;
  j["merge_days"] = s.merge_days;
  j["start_date"] = s.start_date;
  j["end_date"] = s.end_date;
  j["seed"] = s.seed;
  return j.dump(2);
}

GeneratorSpec generator_spec_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("generator spec: invalid JSON: ") + e.what());
  }
  GeneratorSpec s;
  const json defaults = json::parse(to_json(s));
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("generator spec: unknown key '" + it.key() + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("generator spec: bad value for '") + key + "'");
    }
  };
  get("n_patients", s.n_patients);
  get("positive_rate", s.positive_rate);
  get("icd_vocab", s.icd_vocab);
  get("dbid_vocab", s.dbid_vocab);
  get("loinc_vocab", s.loinc_vocab);
  get("gap_days", s.gap_days);
  get("protective_rate_control", s.protective_rate_control);
  get("protective_rate_case", s.protective_rate_case);
  get("min_events", s.min_events);
  get("max_events", s.max_events);
  get("min_visits_before", s.min_visits_before);
  get("max_visits_before", s.max_visits_before);
  get("max_visits_after", s.max_visits_after);
  get("empty_visit_rate", s.empty_visit_rate);
  get("satellite_rate", s.satellite_rate);
  get("stale_visit_rate", s.stale_visit_rate);
  get("between_visit_rate", s.between_visit_rate);
  get("label_noise", s.label_noise);
  get("window_days", s.window_days);
  get("merge_days", s.merge_days);
  get("start_date", s.start_date);
  get("end_date", s.end_date);
  get("seed", s.seed);
  return s;
}

GeneratedCohort generate(const GeneratorSpec& spec) {
  spec.validate();
  GeneratedCohort out;
  const PlantedTokens planted;
  out.planted = planted;
  const int first_index = parse_date(spec.start_date).days;
  const int last_index = parse_date(spec.end_date).days;
  const int spacing = spec.merge_days + 1;
  const int G = spec.gap_days;
  std::size_t n_cases = 0;

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    Rng rng(spec.seed, "data", i);
    const int label = rng.bernoulli(spec.positive_rate) ? 1 : 0;
    PatientRecord rec;
    char id[16];
    std::snprintf(id, sizeof id, "P%06zu", i);
    rec.patient_id = id;
    rec.index_date = Date{static_cast<int>(rng.uniform_int(first_index, last_index))};

    const int n_after = static_cast<int>(rng.uniform_int(0, spec.max_visits_after));
    const int n_before = static_cast<int>(rng.uniform_int(spec.min_visits_before, spec.max_visits_before));
    const int r2 = static_cast<int>(rng.uniform_int(n_after * spacing, spec.window_days / 3));
    const int gap = label == 1 ? static_cast<int>(rng.uniform_int(spacing, G))
                               : static_cast<int>(rng.uniform_int(3 * G + 1, 6 * G));
    const int r1 = r2 + gap;

    const bool between = rng.bernoulli(spec.between_visit_rate) && label == 0;

    std::vector<Slot> slots;
    const int n_older = between ? n_before - 1 : n_before;
    for (int b : spaced_offsets(rng, n_older, r1 + spacing, spec.window_days, spacing)) slots.push_back({b, {}});
    if (between) slots.push_back({static_cast<int>(rng.uniform_int(r2 + spacing, r1 - spacing)), {}});
    slots.push_back({r1, {}});
    const std::size_t r1_slot = slots.size() - 1;
    slots.push_back({r2, {}});
    const std::size_t r2_slot = slots.size() - 1;
    if (n_after > 0) {
      for (int b : spaced_offsets(rng, n_after, 0, r2 - spacing, spacing)) slots.push_back({b, {}});
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const bool risk = s == r1_slot || s == r2_slot;
      if (!risk && rng.bernoulli(spec.empty_visit_rate)) {
        Event e{std::to_string(10000 + rng.uniform_int(0, static_cast<std::int64_t>(spec.loinc_vocab) - 1)) + "-0",
                Source::loinc, "N", 1};
        slots[s].events.push_back(std::move(e));
        continue;
      }
      add_noise(rng, spec, slots[s]);
    }
    // top up so every patient carries all four sources
    std::set<Source> seen;
    for (const auto& sl : slots) {
      for (const auto& e : sl.events) seen.insert(e.source);
    }
    for (Source src : {Source::icd10, Source::dbid, Source::loinc, Source::er}) {
      if (seen.contains(src)) continue;
      slots[rng.bernoulli(0.5) ? r1_slot : r2_slot].events.push_back(noise_event(rng, spec, src));
    }
    slots[r1_slot].events.push_back(Event{"R45.8", Source::icd10, "", 1});
    slots[r2_slot].events.push_back(Event{"DBRISK2", Source::dbid, "", 1});
    const double p_rate = label == 1 ? spec.protective_rate_case : spec.protective_rate_control;
    if (rng.bernoulli(p_rate)) {
      const auto s = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(slots.size()) - 1));
      slots[s].events.push_back(Event{"PROT-1", Source::loinc, "H", 1});
    }

    // Raw visits that the preprocessing merges away or drops.
    const std::size_t n_real = slots.size();
    for (std::size_t s = 0; s < n_real; ++s) {
      if (!rng.bernoulli(spec.satellite_rate)) continue;
      const int b = slots[s].before - static_cast<int>(rng.uniform_int(1, std::max(1, spec.merge_days)));
      if (b < 0 || spec.merge_days == 0) continue;
      Slot sat{b, {}};
      // Planted events are appended last, so the front event is always noise.
      if (rng.bernoulli(0.5)) sat.events.push_back(slots[s].events.front());
      add_noise(rng, spec, sat);
      slots.push_back(std::move(sat));
    }
    if (rng.bernoulli(spec.stale_visit_rate)) {
      Slot stale{spec.window_days + static_cast<int>(rng.uniform_int(1, 150)), {}};
      add_noise(rng, spec, stale);
      slots.push_back(std::move(stale));
    }

    std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.before > b.before; });
    for (auto& s : slots) {
      rec.visits.push_back(Visit{Date{rec.index_date.days - s.before}, std::move(s.events)});
    }
    rec.label = rng.bernoulli(spec.label_noise) ? 1 - label : label;
    n_cases += static_cast<std::size_t>(rec.label);
    out.records.push_back(std::move(rec));
  }

  json m;
  m["generator"] = "planted-interval";
  m["seed"] = spec.seed;
  m["n_patients"] = spec.n_patients;
  m["n_cases"] = n_cases;
  m["planted"] = {{"risk_a", planted.risk_a}, {"risk_b", planted.risk_b}, {"protective", planted.protective}};
  m["gap_days"] = G;
  m["control_gap_days"] = {3 * G + 1, 6 * G};
  m["optimal_rule"] = "case iff the " + planted.risk_b + " visit follows the " + planted.risk_a +
                      " visit by at most " + std::to_string(G) + " days";
  m["label_noise"] = spec.label_noise;
  m["spec"] = json::parse(to_json(spec));
  out.manifest_json = m.dump(2) + "\n";
  return out;
}

double planted_rule_score(const EncodedInstance& inst, const Vocabulary& vocab, const PlantedTokens& planted,
                          int gap_days) {
  const auto a = vocab.find(planted.risk_a);
  const auto b = vocab.find(planted.risk_b);
  if (!a || !b) return 0.0;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.token_ids[i] != *a) continue;
    for (std::size_t j = 0; j < inst.size(); ++j) {
      if (inst.token_ids[j] != *b || inst.visit_idx[j] <= inst.visit_idx[i]) continue;
      if (inst.days_ago[i] - inst.days_ago[j] <= gap_days) return 1.0;
    }
  }
  return 0.0;
}

}  // namespace bipete::data
