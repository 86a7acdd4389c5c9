// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bipete/errors.hpp"
#include "bipete_cli/commands.hpp"

namespace {

using namespace bipete;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

num::Precision parse_precision(const std::string& s) {
  if (s == "f32") return num::Precision::f32;
  if (s == "f64") return num::Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

// Flags shared by train and ablate.
struct TrainFlags {
  std::string data, vocab, out, model_config, precision;
  std::size_t folds = 5, jobs = 1;
  std::uint64_t seed = 42;
  std::optional<std::size_t> epochs, patience, batch_size, layers;
  std::optional<double> lr;
  bool fold_average = false, no_plots = false, no_checkpoints = false;

  void attach(CLI::App* c) {
    c->add_option("--data", data, "encoded.jsonl")->required();
    c->add_option("--vocab", vocab, "vocab.json")->required();
    c->add_option("--out", out, "output directory")->required();
    c->add_option("--folds", folds, "cross-validation folds")->capture_default_str();
    c->add_option("--seed", seed, "master seed")->capture_default_str();
    c->add_option("--jobs", jobs, "folds trained in parallel")->capture_default_str();
    c->add_option("--model-config", model_config, "model config JSON");
    c->add_option("--precision", precision, "f32 or f64 (default: BIPETE_PRECISION, else f32)");
    c->add_option("--epochs", epochs, "max epochs");
    c->add_option("--patience", patience, "early-stopping patience");
    c->add_option("--batch-size", batch_size, "mini-batch size");
    c->add_option("--lr", lr, "learning rate");
    c->add_option("--layers", layers, "encoder layers");
    c->add_flag("--fold-average-stopping", fold_average, "one stop epoch for all folds from the mean val loss");
    c->add_flag("--no-plots", no_plots, "skip SVG output");
    c->add_flag("--no-checkpoints", no_checkpoints, "skip checkpoints and test splits");
  }

  cli::TrainArgs build(std::vector<std::string> modes) const {
    cli::TrainArgs a;
    a.data = data;
    a.vocab = vocab;
    a.out = out;
    a.modes = std::move(modes);
    a.folds = folds;
    a.seed = seed;
    a.jobs = jobs;
    if (!model_config.empty()) a.model = model::model_config_from_json(slurp(model_config));
    if (layers) a.model.n_layers = *layers;
    if (epochs) a.train.max_epochs = *epochs;
    if (patience) a.train.patience = *patience;
    if (batch_size) a.train.batch_size = *batch_size;
    if (lr) a.train.lr = *lr;
    if (!precision.empty()) a.precision = parse_precision(precision);
    a.fold_average_stopping = fold_average;
    a.write_plots = !no_plots;
    a.write_checkpoints = !no_checkpoints;
    return a;
  }
};

void print_results(const std::vector<train::CvResult>& results) {
  for (const auto& r : results) {
    std::vector<double> au, ap;
    for (const auto& f : r.folds) {
      au.push_back(f.auroc);
      ap.push_back(f.auprc);
    }
    std::printf("%-10s AUROC %.4f +/- %.4f  AUPRC %.4f +/- %.4f\n", std::string(train::to_string(r.method)).c_str(),
                r.auroc.mean, r.auroc.std, r.auprc.mean, r.auprc.std);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bipete: transformer classifier for irregular EHR sequences"};
  app.require_subcommand(1);

  cli::GenArgs gen;
  std::string gen_spec, gen_out;
  auto* g = app.add_subcommand("gen", "generate a synthetic cohort");
  g->add_option("--spec", gen_spec, "generator spec JSON");
  g->add_option("--out", gen_out, "patients.jsonl")->required();
  g->add_option("--seed", gen.seed, "override the generator seed");
  g->add_option("--n", gen.n_patients, "override the patient count");

  cli::PreprocessArgs pre;
  std::string pre_in, pre_out, pre_vocab, pre_report;
  auto* p = app.add_subcommand("preprocess", "merge, window, tokenize and encode patient records");
  p->add_option("--in", pre_in, "patients.jsonl")->required();
  p->add_option("--out", pre_out, "encoded.jsonl")->required();
  p->add_option("--vocab", pre_vocab, "vocab.json")->required();
  p->add_option("--report", pre_report, "rejection report (default: rejections.json beside --out)");
  p->add_option("--window-days", pre.window_days)->capture_default_str();
  p->add_option("--min-visits", pre.min_visits)->capture_default_str();
  p->add_option("--merge-days", pre.merge_days)->capture_default_str();
  p->add_option("--max-seq-len", pre.max_seq_len)->capture_default_str();

  TrainFlags tf;
  std::string mode = "both";
  auto* t = app.add_subcommand("train", "cross-validated training of one configuration");
  tf.attach(t);
  t->add_option("--mode", mode, "both|rope_only|spe_only|none|bigru|logreg|bnb")->capture_default_str();

  TrainFlags af;
  std::vector<std::string> modes{"both", "rope_only", "spe_only", "none"};
  auto* ab = app.add_subcommand("ablate", "cross-validate several configurations on the same folds");
  af.attach(ab);
  ab->add_option("--modes", modes, "configurations to compare")->delimiter(',')->capture_default_str();

  cli::ExplainArgs ex;
  std::string ex_ckpt, ex_data, ex_vocab, ex_out, ex_precision = "f64";
  auto* e = app.add_subcommand("explain", "integrated gradients and relative contribution");
  e->add_option("--checkpoint", ex_ckpt, "checkpoint.json")->required();
  e->add_option("--data", ex_data, "test-fold encoded.jsonl")->required();
  e->add_option("--vocab", ex_vocab, "vocab.json for token names");
  e->add_option("--out", ex_out, "rc_table.csv")->required();
  e->add_option("--steps", ex.steps)->capture_default_str();
  e->add_option("--max-instances", ex.max_instances, "0 for all")->capture_default_str();
  e->add_option("--jobs", ex.jobs)->capture_default_str();
  e->add_option("--precision", ex_precision)->capture_default_str();
  e->add_option("--min-freq", ex.min_freq, "drop tokens rarer than this in TP or TN")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*g) {
      gen.spec = gen_spec;
      gen.out = gen_out;
      cli::cmd_gen(gen);
    } else if (*p) {
      pre.in = pre_in;
      pre.out = pre_out;
      pre.vocab = pre_vocab;
      pre.report = pre_report;
      cli::cmd_preprocess(pre);
    } else if (*t) {
      print_results(cli::cmd_train(tf.build({mode})));
    } else if (*ab) {
      print_results(cli::cmd_train(af.build(modes)));
    } else if (*e) {
      ex.checkpoint = ex_ckpt;
      ex.data = ex_data;
      ex.vocab = ex_vocab;
      ex.out = ex_out;
      ex.precision = parse_precision(ex_precision);
      const auto s = cli::cmd_explain(ex);
      std::printf("instances %zu  TP %zu  TN %zu\n", s.instances, s.n_tp, s.n_tn);
      std::printf("max completeness gap: %.3e (mean %.3e)\n", s.max_gap, s.mean_gap);
    }
  } catch (const std::exception& err) {
    std::fprintf(stderr, "bipete: %s\n", err.what());
    return cli::exit_code_for(err);
  }
  return 0;
}
