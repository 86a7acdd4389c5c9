// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bipete/datapipe/generator.hpp"
#include "bipete/datapipe/preprocess.hpp"
#include "bipete/datapipe/record.hpp"
#include "bipete/datapipe/split.hpp"
#include "bipete/errors.hpp"
#include "bipete/metrics.hpp"

#ifndef BIPETE_TEST_DATA
#define BIPETE_TEST_DATA "tests/data"
#endif

namespace {

using namespace bipete::data;
using bipete::EncodedInstance;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Visit visit_on(int day, std::vector<Event> events) { return Visit{Date{day}, std::move(events)}; }
Event icd(std::string c) { return Event{std::move(c), Source::icd10, "", 1}; }
Event db(std::string c) { return Event{std::move(c), Source::dbid, "", 1}; }
Event lab(std::string c, std::string f) { return Event{std::move(c), Source::loinc, std::move(f), 1}; }
Event er(int n) { return Event{"ER", Source::er, "", n}; }

std::vector<int> dates_of(const std::vector<Visit>& vs) {
  std::vector<int> d;
  for (const auto& v : vs) d.push_back(v.date.days);
  return d;
}

TEST(Merge, AnchorRuleExamples) {
  const std::vector<Visit> a{visit_on(0, {icd("A")}), visit_on(3, {icd("B")}), visit_on(10, {icd("C")})};
  const auto ma = merge_visits(a);
  EXPECT_EQ(dates_of(ma), (std::vector<int>{0, 10}));
  EXPECT_EQ(ma[0].events.size(), 2u);
  // 12 - 6 <= 7 but 12 - 0 > 7: no chaining
  const std::vector<Visit> b{visit_on(0, {icd("A")}), visit_on(6, {icd("B")}), visit_on(12, {icd("C")})};
  EXPECT_EQ(dates_of(merge_visits(b)), (std::vector<int>{0, 12}));
  const std::vector<Visit> c{visit_on(5, {icd("A")})};
  EXPECT_EQ(merge_visits(c), c);
  // exactly merge_days joins
  const std::vector<Visit> d{visit_on(0, {icd("A")}), visit_on(7, {icd("B")}), visit_on(8, {icd("C")})};
  EXPECT_EQ(dates_of(merge_visits(d)), (std::vector<int>{0, 8}));
}

TEST(Merge, DeduplicatesEventsAndAddsErCounts) {
  const std::vector<Visit> v{visit_on(0, {icd("A"), er(1)}), visit_on(2, {icd("A"), db("X"), er(2)})};
  const auto m = merge_visits(v);
  ASSERT_EQ(m.size(), 1u);
  int er_total = 0, a_count = 0;
  for (const auto& e : m[0].events) {
    if (e.source == Source::er) er_total += e.count;
    if (e.code == "A") ++a_count;
  }
  EXPECT_EQ(er_total, 3);
  EXPECT_EQ(a_count, 1);
}

TEST(Truncate, IcdRoots) {
  EXPECT_EQ(truncate_icd("F32.9"), "F32");
  EXPECT_EQ(truncate_icd("I10"), "I10");
  EXPECT_EQ(truncate_icd("f10.239"), "F10");
  std::size_t shorts = 0;
  EXPECT_EQ(truncate_icd("Z9", &shorts), "Z9");
  EXPECT_EQ(shorts, 1u);
}

TEST(Truncate, TwentyCodesOverFiveRootsGiveFiveTokens) {
  const std::vector<std::string> roots{"F32", "F10", "I10", "E11", "K21"};
  std::vector<PatientRecord> recs;
  for (int p = 0; p < 4; ++p) {
    PatientRecord r{"p" + std::to_string(p), p % 2, Date{1000}, {}};
    for (int v = 0; v < 5; ++v) r.visits.push_back(visit_on(900 + 20 * v, {icd(roots[static_cast<std::size_t>(v)] + "." + std::to_string(p))}));
    recs.push_back(r);
  }
  const auto res = preprocess(recs);
  EXPECT_EQ(res.vocab.size(), kReservedTokens + 5);
}

TEST(ErBin, Bins) {
  EXPECT_EQ(er_bin(1), "ER_1");
  EXPECT_EQ(er_bin(2), "ER_2");
  EXPECT_EQ(er_bin(3), "ER_3PLUS");
  EXPECT_EQ(er_bin(40), "ER_3PLUS");
}

TEST(Dates, StrictIsoParsing) {
  EXPECT_EQ(parse_date("1970-01-01").days, 0);
  EXPECT_EQ(parse_date("2021-03-01").days - parse_date("2021-01-01").days, 59);
  EXPECT_EQ(format_date(parse_date("2020-02-29")), "2020-02-29");
  for (const char* bad : {"2021-02-30", "2021-1-01", "20210101", "2021-01-01T00", ""}) {
    EXPECT_THROW(parse_date(bad), bipete::InputError) << bad;
  }
}

TEST(Window, EdgeAndRejection) {
  PreprocessStats st;
  PatientRecord r{"w", 0, Date{1000}, {visit_on(1000 - 500, {icd("A00")}), visit_on(1000 - 457, {icd("B00")}),
                                       visit_on(900, {icd("C00")}), visit_on(990, {icd("D00")})}};
  const auto t = tokenize_record(r, {}, st);
  ASSERT_TRUE(t.has_value());
  EXPECT_EQ(t->visits.size(), 3u);
  EXPECT_EQ(t->visits[0].tokens, (std::vector<std::string>{"ICD10:B00"}));
  EXPECT_EQ(st.visits_outside_window, 1u);
  PatientRecord two{"t", 0, Date{1000}, {visit_on(900, {icd("A00")}), visit_on(990, {icd("B00")})}};
  EXPECT_FALSE(tokenize_record(two, {}, st).has_value());
  EXPECT_EQ(st.rejected_min_visits, 1u);
}

TEST(Tokenize, FilteredVisitBecomesEmptyVisitToken) {
  PreprocessStats st;
  PatientRecord r{"e", 1, Date{100}, {visit_on(10, {icd("A00")}), visit_on(40, {lab("1-1", "N"), lab("2-2", "")}),
                                      visit_on(90, {lab("3-3", "L"), er(2)})}};
  const auto t = tokenize_record(r, {}, st);
  ASSERT_TRUE(t.has_value());
  EXPECT_EQ(t->visits[1].tokens, (std::vector<std::string>{std::string(kEmptyVisitToken)}));
  EXPECT_EQ(t->visits[2].tokens, (std::vector<std::string>{"LOINC:3-3_L", "ER:ER_2"}));
  EXPECT_EQ(st.labs_dropped, 2u);
  EXPECT_EQ(st.empty_visits, 1u);
}

TEST(Encode, ThreeSingleCodeVisits) {
  PatientRecord r{"x", 1, Date{30}, {visit_on(0, {icd("A00")}), visit_on(10, {icd("B00")}), visit_on(30, {icd("C00")})}};
  const auto res = preprocess(std::vector<PatientRecord>{r});
  ASSERT_EQ(res.instances.size(), 1u);
  EXPECT_EQ(res.instances[0].visit_idx, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(res.instances[0].days_ago, (std::vector<int>{30, 20, 0}));
}

TEST(Encode, UnseenTokenMapsToUnk) {
  PreprocessStats st;
  PatientRecord r{"x", 1, Date{30}, {visit_on(0, {icd("A00")}), visit_on(10, {icd("B00")}), visit_on(30, {icd("C00")})}};
  const auto t = *tokenize_record(r, {}, st);
  const auto vocab = Vocabulary::build(std::vector<TokenRecord>{t});
  auto t2 = t;
  t2.visits[1].tokens = {"ICD10:Q99"};
  EXPECT_EQ(encode(t2, vocab).token_ids[1], kUnk);
}

TEST(Encode, OverflowDropsOldestWholeVisits) {
  // 30 visits of 10 codes = 300 tokens
  PatientRecord r{"long", 1, Date{400}, {}};
  for (int v = 0; v < 30; ++v) {
    std::vector<Event> ev;
    for (int c = 0; c < 10; ++c) ev.push_back(db("D" + std::to_string(v) + "_" + std::to_string(c)));
    r.visits.push_back(visit_on(100 + 10 * v, ev));
  }
  PreprocessStats st;
  const auto t = tokenize_record(r, {}, st);
  ASSERT_TRUE(t.has_value());
  EXPECT_EQ(t->visits.size(), 25u);  // 250 <= 256 < 260
  EXPECT_EQ(st.overflow_visits_dropped, 5u);
  EXPECT_EQ(t->visits.front().tokens.front(), "DBID:D5_0");
  const auto vocab = Vocabulary::build(std::vector<TokenRecord>{*t});
  const auto x = encode(*t, vocab);
  EXPECT_EQ(x.size(), 250u);
  EXPECT_EQ(x.visit_idx.front(), 0);
  EXPECT_EQ(x.visit_idx.back(), 24);
  EXPECT_EQ(x.days_ago.back(), 0);
  EXPECT_EQ(x.days_ago.front(), 240);
}

TEST(Encode, OverflowCanReject) {
  PreprocessOptions o;
  o.max_seq_len = 5;
  PatientRecord r{"o", 1, Date{100}, {visit_on(10, {db("A"), db("B")}), visit_on(50, {db("C"), db("D")}),
                                      visit_on(90, {db("E"), db("F"), db("G")})}};
  PreprocessStats st;
  EXPECT_FALSE(tokenize_record(r, o, st).has_value());
  EXPECT_EQ(st.rejected_after_overflow, 1u);
}

TEST(Golden, FivePatientCorpusIsByteExact) {
  const std::string dir = BIPETE_TEST_DATA;
  std::istringstream in(slurp(dir + "/golden_patients.jsonl"));
  const auto recs = read_patients_jsonl(in);
  ASSERT_EQ(recs.size(), 5u);
  const auto res = preprocess(recs);
  std::ostringstream out;
  write_encoded_jsonl(out, res.instances);
  EXPECT_EQ(out.str(), slurp(dir + "/golden_encoded.jsonl"));
  EXPECT_EQ(res.vocab.to_json(), slurp(dir + "/golden_vocab.json"));
  EXPECT_EQ(stats_to_json(res.stats), slurp(dir + "/golden_rejections.json"));
}

TEST(Records, MalformedLineReportsLineNumber) {
  std::istringstream in("{\"patient_id\":\"a\",\"label\":0,\"index_date\":\"2020-01-01\",\"visits\":[]}\n{oops\n");
  try {
    read_patients_jsonl(in);
    FAIL() << "no throw";
  } catch (const bipete::InputError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Records, RejectsVisitAfterIndexAndBadLabel) {
  EXPECT_THROW(patient_from_json(R"({"patient_id":"a","label":0,"index_date":"2020-01-01","visits":[{"date":"2020-01-02","events":[]}]})"),
               bipete::InputError);
  EXPECT_THROW(patient_from_json(R"({"patient_id":"a","label":2,"index_date":"2020-01-01","visits":[]})"),
               bipete::InputError);
  EXPECT_THROW(patient_from_json(R"({"patient_id":"a","label":0,"index_date":"2020-01-01","visits":[{"date":"2019-01-02","events":[{"code":"x","source":"SNOMED"}]}]})"),
               bipete::InputError);
}

TEST(Records, JsonRoundTrip) {
  bipete::data::GeneratorSpec spec;
  spec.n_patients = 20;
  const auto cohort = generate(spec);
  std::ostringstream out;
  write_patients_jsonl(out, cohort.records);
  std::istringstream in(out.str());
  EXPECT_EQ(read_patients_jsonl(in), cohort.records);
}

TEST(VocabularyJson, RoundTripAndValidation) {
  const auto cohort = generate(GeneratorSpec{.n_patients = 50});
  const auto res = preprocess(cohort.records);
  const auto back = Vocabulary::from_json(res.vocab.to_json());
  ASSERT_EQ(back.size(), res.vocab.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.token(static_cast<int>(i)), res.vocab.token(static_cast<int>(i)));
    EXPECT_EQ(back.source(static_cast<int>(i)), res.vocab.source(static_cast<int>(i)));
  }
  EXPECT_THROW(Vocabulary::from_json(R"({"PAD":{"id":0,"source":"special","freq":0}})"), bipete::InputError);
}

TEST(EncodedJson, RoundTrip) {
  const EncodedInstance x{"p", 1, {5, 1, 3}, {0, 1, 1}, {12, 0, 0}};
  EXPECT_EQ(instance_from_json(instance_to_json(x)), x);
}

// decode(encode(r)) gives back the visit-grouped tokens and day offsets
TEST(Properties, EncodingIsLosslessOnGeneratedData) {
  const auto cohort = generate(GeneratorSpec{.n_patients = 300, .seed = 5});
  PreprocessStats st;
  std::vector<TokenRecord> trs;
  for (const auto& r : cohort.records) {
    if (auto t = tokenize_record(r, {}, st)) trs.push_back(*t);
  }
  const auto vocab = Vocabulary::build(trs);
  for (const auto& t : trs) {
    const auto x = encode(t, vocab);
    std::map<int, std::vector<std::string>> by_visit;
    std::map<int, int> days;
    for (std::size_t i = 0; i < x.size(); ++i) {
      by_visit[x.visit_idx[i]].push_back(vocab.token(x.token_ids[i]));
      days[x.visit_idx[i]] = x.days_ago[i];
    }
    ASSERT_EQ(by_visit.size(), t.visits.size());
    const int last = t.visits.back().date.days;
    for (std::size_t v = 0; v < t.visits.size(); ++v) {
      EXPECT_EQ(by_visit[static_cast<int>(v)], t.visits[v].tokens);
      EXPECT_EQ(days[static_cast<int>(v)], last - t.visits[v].date.days);
    }
    for (std::size_t i = 1; i < x.size(); ++i) {
      EXPECT_LE(x.days_ago[i], x.days_ago[i - 1]);
      EXPECT_GE(x.visit_idx[i], x.visit_idx[i - 1]);
    }
  }
}

TEST(Generator, SameSeedIsByteIdentical) {
  const GeneratorSpec spec{.n_patients = 200};
  std::ostringstream a, b;
  write_patients_jsonl(a, generate(spec).records);
  write_patients_jsonl(b, generate(spec).records);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(generate(spec).manifest_json, generate(spec).manifest_json);
}

TEST(Generator, PositiveCountWithinBinomialBand) {
  const auto cohort = generate(GeneratorSpec{.n_patients = 1000, .positive_rate = 0.21});
  const auto pos = std::count_if(cohort.records.begin(), cohort.records.end(), [](const auto& r) { return r.label == 1; });
  // 3.5 sigma of Binomial(1000, 0.21) is about 45
  EXPECT_NEAR(static_cast<double>(pos), 210.0, 3.5 * std::sqrt(1000 * 0.21 * 0.79));
}

TEST(Generator, PlantedRuleSeparatesClassesWithoutNoise) {
  const GeneratorSpec spec{.n_patients = 1000, .seed = 3};
  const auto cohort = generate(spec);
  const auto res = preprocess(cohort.records);
  ASSERT_GT(res.instances.size(), 900u);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& x : res.instances) {
    const double r = planted_rule_score(x, res.vocab, cohort.planted, spec.gap_days);
    EXPECT_EQ(static_cast<int>(r), x.label) << x.patient_id;
    s.push_back(r);
    y.push_back(x.label);
  }
  EXPECT_GE(bipete::metrics::auroc(s, y), 0.97);
}

TEST(Generator, BetweenVisitMovesOrderNotCount) {
  const GeneratorSpec spec{.n_patients = 1500, .between_visit_rate = 1.0, .seed = 8};
  const auto cohort = generate(spec);
  const auto res = preprocess(cohort.records);
  const int ra = *res.vocab.find(cohort.planted.risk_a), rb = *res.vocab.find(cohort.planted.risk_b);
  double visits[2] = {0, 0}, n[2] = {0, 0};
  for (const auto& x : res.instances) {
    int va = -1, vb = -1;
    for (std::size_t t = 0; t < x.size(); ++t) {
      if (x.token_ids[t] == ra) va = x.visit_idx[t];
      if (x.token_ids[t] == rb) vb = x.visit_idx[t];
    }
    EXPECT_EQ(vb - va, x.label == 1 ? 1 : 2) << x.patient_id;
    visits[x.label] += x.visit_idx.back() + 1;
    n[x.label] += 1;
  }
  EXPECT_NEAR(visits[0] / n[0], visits[1] / n[1], 0.25);
}

TEST(Generator, EveryPatientCarriesAllSources) {
  const auto cohort = generate(GeneratorSpec{.n_patients = 200});
  for (const auto& r : cohort.records) {
    std::set<Source> seen;
    for (const auto& v : r.visits) {
      for (const auto& e : v.events) seen.insert(e.source);
    }
    EXPECT_EQ(seen.size(), 4u) << r.patient_id;
  }
}

TEST(Generator, InfeasibleSpecIsConfigError) {
  EXPECT_THROW(generate(GeneratorSpec{.gap_days = 7, .merge_days = 7}), bipete::ConfigError);
  EXPECT_THROW(generate(GeneratorSpec{.window_days = 20}), bipete::ConfigError);
  EXPECT_THROW(generate(GeneratorSpec{.positive_rate = 1.0}), bipete::ConfigError);
  EXPECT_THROW(generator_spec_from_json(R"({"n_patients": 10, "colour": 3})"), bipete::ConfigError);
}

std::vector<EncodedInstance> labelled(std::size_t n, std::size_t n_pos) {
  std::vector<EncodedInstance> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i].patient_id = "p" + std::to_string(i);
    xs[i].label = i < n_pos ? 1 : 0;
  }
  return xs;
}

TEST(Split, HundredInstancesGiveFoldsOfTwenty) {
  const auto xs = labelled(100, 21);
  const auto folds = kfold_split(xs, 5, 7);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test.size(), 20u);
    for (auto i : f.test) EXPECT_TRUE(all.insert(i).second);
    std::set<std::size_t> seen(f.train.begin(), f.train.end());
    seen.insert(f.val.begin(), f.val.end());
    seen.insert(f.test.begin(), f.test.end());
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(f.train.size() + f.val.size() + f.test.size(), 100u);
    EXPECT_EQ(f.val.size(), 10u);
  }
  EXPECT_EQ(all.size(), 100u);
}

TEST(Split, StratifiedWithinTwoPoints) {
  const auto xs = labelled(2000, 420);
  for (const auto& f : kfold_split(xs, 5, 11)) {
    for (const auto* part : {&f.train, &f.val, &f.test}) {
      double pos = 0;
      for (auto i : *part) pos += xs[i].label;
      EXPECT_NEAR(pos / static_cast<double>(part->size()), 0.21, 0.02);
    }
  }
}

TEST(Split, DeterministicAndSeedSensitive) {
  const auto xs = labelled(300, 60);
  const auto a = kfold_split(xs, 5, 1), b = kfold_split(xs, 5, 1), c = kfold_split(xs, 5, 2);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].test, b[i].test);
    EXPECT_EQ(a[i].val, b[i].val);
  }
  EXPECT_NE(a[0].test, c[0].test);
}

TEST(Split, Errors) {
  EXPECT_THROW(kfold_split(labelled(4, 2), 5, 1), bipete::InputError);
  EXPECT_THROW(kfold_split(labelled(40, 10), 1, 1), bipete::ConfigError);
}

TEST(Split, RemapUnseenKeepsReservedAndSeen) {
  std::vector<EncodedInstance> xs{{"a", 0, {3, 4, 1}, {0, 0, 1}, {5, 5, 0}}, {"b", 1, {4, 5, 1}, {0, 1, 2}, {9, 3, 0}}};
  const std::vector<std::size_t> ref{0}, rows{1};
  const auto out = remap_unseen(xs, ref, rows, kUnk, static_cast<int>(kReservedTokens));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].token_ids, (std::vector<int>{4, kUnk, 1}));
  EXPECT_EQ(out[0].days_ago, xs[1].days_ago);
}

}  // namespace
