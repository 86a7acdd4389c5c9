// SPDX-License-Identifier: Apache-2.0
#include "bipete_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "bipete/attribution.hpp"
#include "bipete/datapipe/generator.hpp"
#include "bipete/datapipe/preprocess.hpp"
#include "bipete/datapipe/split.hpp"
#include "bipete/errors.hpp"
#include "bipete/metrics.hpp"
#include "bipete/model/checkpoint.hpp"
#include "bipete/rng.hpp"
#include "bipete_cli/svg.hpp"
#include "json.hpp"

namespace bipete::cli {

using json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw InputError("cannot write " + p.string());
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

json mean_std_json(const std::vector<double>& xs) {
  const auto ms = metrics::mean_std(xs);
  return json{{"mean", ms.mean}, {"std", ms.std}, {"folds", xs}};
}

/// Command record with content hashes of every listed file.
class RunManifest {
 public:
  RunManifest(std::string command, std::uint64_t seed) : command_(std::move(command)), seed_(seed) {
    start_ = std::chrono::steady_clock::now();
  }
  json& config() { return config_; }
  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }
  json& extra() { return extra_; }

  void write(const fs::path& path) {
    json m;
    m["command"] = command_;
    m["seed"] = seed_;
    m["config"] = config_;
    auto list = [](const std::vector<fs::path>& ps) {
      json arr = json::array();
      for (const auto& p : ps) arr.push_back(json{{"path", p.string()}, {"fnv1a64", file_hash(p)}});
      return arr;
    };
    m["inputs"] = list(inputs_);
    m["outputs"] = list(outputs_);
    if (!extra_.is_null()) m["details"] = extra_;
    m["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_file(path, m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  json config_ = json::object();
  json extra_;
  std::vector<fs::path> inputs_, outputs_;
  std::chrono::steady_clock::time_point start_;
};

json train_config_json(const train::TrainConfig& t) {
  return json{{"optimizer", "adam, decoupled weight decay on matrices"},
              {"lr", t.lr},
              {"betas", {t.beta1, t.beta2}},
              {"eps", t.eps},
              {"weight_decay", t.weight_decay},
              {"clip_norm", t.clip_norm},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"patience", t.patience},
              {"note", "optimizer, lr, batch size and patience are artifact defaults, not reported values"}};
}

std::string runlog_csv(const train::RunLog& log) {
  std::string s = "epoch,train_loss,train_acc,train_auroc,val_loss,val_acc,val_auroc\n";
  for (const auto& e : log.epochs) {
    s += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.train_acc) + "," + num(e.train_auroc) + "," +
         num(e.val_loss) + "," + num(e.val_acc) + "," + num(e.val_auroc) + "\n";
  }
  return s;
}

void write_training_plots(const fs::path& dir, const train::RunLog& log) {
  std::vector<double> x;
  for (const auto& e : log.epochs) x.push_back(static_cast<double>(e.epoch));
  auto pick = [&](double train::EpochLog::*f) {
    std::vector<double> y;
    for (const auto& e : log.epochs) y.push_back(e.*f);
    return y;
  };
  const struct {
    const char* file;
    const char* title;
    double train::EpochLog::*tr;
    double train::EpochLog::*va;
  } plots[] = {{"training_loss.svg", "Loss", &train::EpochLog::train_loss, &train::EpochLog::val_loss},
               {"training_accuracy.svg", "Accuracy", &train::EpochLog::train_acc, &train::EpochLog::val_acc},
               {"training_auroc.svg", "AUROC", &train::EpochLog::train_auroc, &train::EpochLog::val_auroc}};
  for (const auto& p : plots) {
    PlotSpec spec{p.title, "epoch", p.title};
    write_file(dir / p.file, line_plot_svg(spec, {{"train", x, pick(p.tr)}, {"val", x, pick(p.va)}}));
  }
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (const auto* be = dynamic_cast<const Error*>(&e)) {
    switch (be->kind()) {
      case ErrorKind::input:
      case ErrorKind::config:
      case ErrorKind::shape:
      case ErrorKind::range: return 2;
      case ErrorKind::numeric:
      case ErrorKind::domain: return 3;
      case ErrorKind::degenerate: return 4;
      case ErrorKind::contract: return 1;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e) != nullptr) return 2;
  return 1;
}

std::string file_hash(const fs::path& p) {
  const auto h = fnv1a(read_file(p));
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void cmd_gen(const GenArgs& a) {
  data::GeneratorSpec spec;
  if (!a.spec.empty()) spec = data::generator_spec_from_json(read_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  if (a.n_patients) spec.n_patients = *a.n_patients;
  const auto cohort = data::generate(spec);
  std::ostringstream ss;
  data::write_patients_jsonl(ss, cohort.records);
  write_file(a.out, ss.str());
  const fs::path manifest = a.out.parent_path() / "manifest.json";
  write_file(manifest, cohort.manifest_json);

  RunManifest rm("gen", spec.seed);
  rm.config() = json::parse(data::to_json(spec));
  if (!a.spec.empty()) rm.input(a.spec);
  rm.output(a.out);
  rm.output(manifest);
  rm.write(a.out.parent_path() / "run_manifest_gen.json");
}

void cmd_preprocess(const PreprocessArgs& a) {
  std::ifstream in(a.in);
  if (!in) throw InputError("cannot open " + a.in.string());
  const auto records = data::read_patients_jsonl(in);
  data::PreprocessOptions opts;
  opts.window_days = a.window_days;
  opts.min_visits = a.min_visits;
  opts.merge_days = a.merge_days;
  opts.max_seq_len = a.max_seq_len;
  const auto res = data::preprocess(records, opts);
  std::ostringstream enc;
  data::write_encoded_jsonl(enc, res.instances);
  write_file(a.out, enc.str());
  write_file(a.vocab, res.vocab.to_json());
  const fs::path report = a.report.empty() ? a.out.parent_path() / "rejections.json" : a.report;
  write_file(report, data::stats_to_json(res.stats));

  RunManifest rm("preprocess", 0);
  rm.config() = json{{"window_days", a.window_days},
                     {"min_visits", a.min_visits},
                     {"merge_days", a.merge_days},
                     {"max_seq_len", a.max_seq_len}};
  rm.input(a.in);
  rm.output(a.out);
  rm.output(a.vocab);
  rm.output(report);
  rm.write(a.out.parent_path() / "run_manifest_preprocess.json");
}

std::vector<train::CvResult> cmd_train(const TrainArgs& a) {
  std::ifstream in(a.data);
  if (!in) throw InputError("cannot open " + a.data.string());
  const auto instances = data::read_encoded_jsonl(in);
  const auto vocab = data::Vocabulary::from_json(read_file(a.vocab));
  for (const auto& inst : instances) {
    for (int t : inst.token_ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab.size()) {
        throw InputError("instance '" + inst.patient_id + "' has token id " + std::to_string(t) +
                         " outside the vocabulary");
      }
    }
  }
  if (a.modes.empty()) throw ConfigError("no modes given");
  std::vector<train::Method> methods;
  for (const auto& m : a.modes) methods.push_back(train::method_from_string(m));

  train::CvOptions opts;
  opts.folds = a.folds;
  opts.seed = a.seed;
  opts.train = a.train;
  opts.train.seed = a.seed;
  opts.model = a.model;
  opts.precision = a.precision.value_or(num::precision_from_env());
  opts.fold_average_stopping = a.fold_average_stopping;
  opts.jobs = a.jobs;

  const auto folds = data::kfold_split(instances, a.folds, a.seed);
  fs::create_directories(a.out);
  RunManifest rm(methods.size() > 1 ? "ablate" : "train", a.seed);
  rm.input(a.data);
  rm.input(a.vocab);
  rm.config() = json{{"modes", a.modes},
                     {"folds", a.folds},
                     {"precision", num::precision_name(opts.precision)},
                     {"fold_average_stopping", a.fold_average_stopping},
                     {"model", json::parse(model::to_json(a.model))},
                     {"train", train_config_json(opts.train)}};

  json summary;
  summary["seed"] = a.seed;
  summary["folds"] = a.folds;
  summary["n_instances"] = instances.size();
  summary["vocab_size"] = vocab.size();
  summary["precision"] = num::precision_name(opts.precision);
  summary["train"] = train_config_json(opts.train);
  summary["methods"] = json::object();
  std::string metrics_csv = "config,fold,metric,threshold,value\n";
  json timing = json::object();

  std::vector<train::CvResult> results;
  for (auto method : methods) {
    const std::string name(train::to_string(method));
    auto res = train::run_cv(instances, vocab.size(), method, opts);
    const fs::path mdir = a.out / name;
    fs::create_directories(mdir);

    json js;
    if (train::is_neural(method)) js["model"] = json::parse(model::to_json(res.model));
    std::vector<double> au, ap, acc;
    for (const auto& f : res.folds) {
      au.push_back(f.auroc);
      ap.push_back(f.auprc);
      acc.push_back(f.accuracy);
    }
    js["auroc"] = mean_std_json(au);
    js["auprc"] = mean_std_json(ap);
    js["accuracy"] = mean_std_json(acc);
    json thr = json::array();
    for (std::size_t t = 0; t < metrics::kDefaultThresholds.size(); ++t) {
      json row{{"threshold", metrics::kDefaultThresholds[t]}};
      for (const auto& [key, member] :
           {std::pair{"ppv", &metrics::ThresholdRow::ppv}, std::pair{"sensitivity", &metrics::ThresholdRow::sensitivity},
            std::pair{"specificity", &metrics::ThresholdRow::specificity}}) {
        std::vector<double> vals;
        for (const auto& f : res.folds) {
          if (const auto& v = f.thresholds.rows[t].*member) vals.push_back(*v);
        }
        row[key] = mean_std_json(vals);
        if (vals.size() != res.folds.size()) row[std::string(key) + "_undefined_folds"] = res.folds.size() - vals.size();
      }
      thr.push_back(row);
    }
    js["thresholds"] = thr;
    json cv = json::object();
    for (const auto& [key, member] : {std::pair{"ppv", &metrics::ThresholdReport::cv_ppv},
                                      std::pair{"sensitivity", &metrics::ThresholdReport::cv_sensitivity},
                                      std::pair{"specificity", &metrics::ThresholdReport::cv_specificity}}) {
      std::vector<double> vals;
      for (const auto& f : res.folds) {
        if (const auto& v = f.thresholds.*member) vals.push_back(*v);
      }
      cv[key] = mean_std_json(vals);
    }
    js["cv_percent"] = cv;

    std::vector<Series> roc, pr;
    json fold_times = json::array();
    for (const auto& f : res.folds) {
      const std::string fs_ = std::to_string(f.fold);
      metrics_csv += name + "," + fs_ + ",auroc,," + num(f.auroc) + "\n";
      metrics_csv += name + "," + fs_ + ",auprc,," + num(f.auprc) + "\n";
      metrics_csv += name + "," + fs_ + ",accuracy,0.5," + num(f.accuracy) + "\n";
      for (const auto& row : f.thresholds.rows) {
        const std::string t = num(row.threshold);
        metrics_csv += name + "," + fs_ + ",ppv," + t + "," + (row.ppv ? num(*row.ppv) : "") + "\n";
        metrics_csv += name + "," + fs_ + ",sensitivity," + t + "," + (row.sensitivity ? num(*row.sensitivity) : "") + "\n";
        metrics_csv += name + "," + fs_ + ",specificity," + t + "," + (row.specificity ? num(*row.specificity) : "") + "\n";
      }
      metrics_csv += name + "," + fs_ + ",cv_ppv,," + (f.thresholds.cv_ppv ? num(*f.thresholds.cv_ppv) : "") + "\n";
      metrics_csv += name + "," + fs_ + ",cv_sensitivity,," +
                     (f.thresholds.cv_sensitivity ? num(*f.thresholds.cv_sensitivity) : "") + "\n";
      metrics_csv += name + "," + fs_ + ",cv_specificity,," +
                     (f.thresholds.cv_specificity ? num(*f.thresholds.cv_specificity) : "") + "\n";

      const fs::path fdir = mdir / ("fold" + fs_);
      fs::create_directories(fdir);
      std::string scores = "patient_id,label,score\n";
      for (std::size_t i = 0; i < f.test_scores.size(); ++i) {
        scores += f.test_ids[i] + "," + std::to_string(f.test_labels[i]) + "," + num(f.test_scores[i]) + "\n";
      }
      write_file(fdir / "test_scores.csv", scores);
      rm.output(fdir / "test_scores.csv");
      if (f.log) {
        write_file(fdir / "runlog.csv", runlog_csv(*f.log));
        rm.output(fdir / "runlog.csv");
        fold_times.push_back(f.log->wall_seconds);
        if (a.write_plots) write_training_plots(fdir, *f.log);
      }
      if (f.params && a.write_checkpoints) {
        model::save_checkpoint(fdir / "checkpoint.json", res.model, train::fold_seed(a.seed, f.fold), *f.params);
        rm.output(fdir / "checkpoint.json");
        rm.output(fdir / "checkpoint.bin");
        const auto test = data::remap_unseen(instances, folds[f.fold].train, folds[f.fold].test, data::kUnk,
                                             static_cast<int>(data::kReservedTokens));
        std::ostringstream ts;
        data::write_encoded_jsonl(ts, test);
        write_file(fdir / "test.jsonl", ts.str());
        rm.output(fdir / "test.jsonl");
      }
      if (f.log) {
        js["best_epochs"].push_back(f.log->best_epoch);
        js["stop_epochs"].push_back(f.log->stop_epoch);
      }
      const auto rc = metrics::roc_curve(f.test_scores, f.test_labels);
      const auto prc = metrics::pr_curve(f.test_scores, f.test_labels);
      roc.push_back({"fold " + fs_, rc.x, rc.y});
      pr.push_back({"fold " + fs_, prc.x, prc.y});
    }
    if (a.write_plots) {
      write_file(mdir / "roc.svg", line_plot_svg({"ROC " + name, "false positive rate", "true positive rate", 0, 1, 0, 1, true}, roc));
      write_file(mdir / "pr.svg", line_plot_svg({"Precision-recall " + name, "recall", "precision", 0, 1, 0, 1}, pr));
    }
    if (!fold_times.empty()) timing[name] = fold_times;
    summary["methods"][name] = js;
    results.push_back(std::move(res));
  }
  write_file(a.out / "summary.json", summary.dump(2) + "\n");
  write_file(a.out / "metrics.csv", metrics_csv);
  rm.output(a.out / "summary.json");
  rm.output(a.out / "metrics.csv");
  rm.extra() = json{{"fold_wall_seconds", timing}};
  rm.write(a.out / "run_manifest.json");
  return results;
}

ExplainSummary cmd_explain(const ExplainArgs& a) {
  const auto ck = model::load_checkpoint(a.checkpoint);
  std::ifstream in(a.data);
  if (!in) throw InputError("cannot open " + a.data.string());
  auto instances = data::read_encoded_jsonl(in);
  if (a.max_instances > 0 && instances.size() > a.max_instances) instances.resize(a.max_instances);
  std::optional<data::Vocabulary> vocab;
  if (!a.vocab.empty()) vocab = data::Vocabulary::from_json(read_file(a.vocab));
  const auto precision = a.precision.value_or(num::Precision::f64);

  attr::IGConfig ig;
  ig.steps = a.steps;
  std::vector<attr::InstanceAttribution> attrs(instances.size());
  std::vector<std::exception_ptr> errors(instances.size());
  const auto params64 = ck.params.cast<double>();
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      try {
        attrs[i] = precision == num::Precision::f64
                       ? attr::integrated_gradients(params64, ck.config, instances[i], ig)
                       : attr::integrated_gradients(ck.params, ck.config, instances[i], ig);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(a.jobs, instances.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  auto token_name = [&](int id) { return vocab ? vocab->token(id) : std::to_string(id); };
  auto token_src = [&](int id) { return vocab ? vocab->source(id) : std::string(); };
  std::string attr_csv = "instance,token,visit_idx,value\n";
  std::vector<double> probs;
  std::vector<int> labels;
  ExplainSummary sum;
  sum.instances = attrs.size();
  double max_rel = 0.0;
  for (const auto& ia : attrs) {
    for (const auto& t : ia.tokens) {
      attr_csv += ia.patient_id + "," + token_name(t.token_id) + "," + std::to_string(t.visit_idx) + "," +
                  num(t.value) + "\n";
    }
    probs.push_back(ia.f_input);
    labels.push_back(ia.label);
    sum.max_gap = std::max(sum.max_gap, ia.gap);
    sum.mean_gap += ia.gap / static_cast<double>(attrs.size());
    max_rel = std::max(max_rel, ia.gap / (std::abs(ia.f_input - ia.f_baseline) + 1e-12));
  }
  const fs::path dir = a.out.parent_path();
  write_file(dir / "attributions.csv", attr_csv);

  const auto table = attr::relative_contribution(attrs, probs, labels, a.min_freq);
  sum.n_tp = table.n_tp;
  sum.n_tn = table.n_tn;
  std::string rc_csv = "token,source,A_TP,A_TN,RC,n_case,n_ctrl,flags\n";
  for (const auto& r : table.rows) {
    std::string flags = r.sign_mismatch ? "sign_mismatch" : r.zero_denominator ? "zero_denominator" : "";
    rc_csv += token_name(r.token_id) + "," + token_src(r.token_id) + "," + num(r.a_tp) + "," + num(r.a_tn) + "," +
              (r.rc ? num(*r.rc) : "") + "," + std::to_string(r.n_case) + "," + std::to_string(r.n_ctrl) + "," +
              flags + "\n";
  }
  write_file(a.out, rc_csv);
  json comp{{"steps", a.steps},
            {"precision", num::precision_name(precision)},
            {"instances", sum.instances},
            {"max_gap", sum.max_gap},
            {"mean_gap", sum.mean_gap},
            {"max_relative_gap", max_rel},
            {"n_tp", table.n_tp},
            {"n_tn", table.n_tn},
            {"tokens_dropped_rare", table.dropped_rare}};
  write_file(dir / "completeness.json", comp.dump(2) + "\n");

  RunManifest rm("explain", ck.seed);
  rm.config() = json{{"steps", a.steps}, {"max_instances", a.max_instances}, {"min_freq", a.min_freq}};
  rm.input(a.checkpoint);
  rm.input(a.data);
  if (!a.vocab.empty()) rm.input(a.vocab);
  rm.output(dir / "attributions.csv");
  rm.output(a.out);
  rm.output(dir / "completeness.json");
  rm.write(dir / "run_manifest_explain.json");
  return sum;
}

}  // namespace bipete::cli
