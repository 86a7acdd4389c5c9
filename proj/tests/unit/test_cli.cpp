// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bipete/errors.hpp"
#include "bipete_cli/commands.hpp"
#include "bipete_cli/svg.hpp"

namespace {

namespace fs = std::filesystem;
using namespace bipete::cli;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

int run(const std::string& args) {
  const std::string cmd = std::string(BIPETE_EXE) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("bipete_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

TEST_F(CliTest, GenIsHashStable) {
  spit(dir / "spec.json", R"({"n_patients": 120, "seed": 3})");
  ASSERT_EQ(run("gen --spec " + (dir / "spec.json").string() + " --out " + (dir / "a/p.jsonl").string()), 0);
  ASSERT_EQ(run("gen --spec " + (dir / "spec.json").string() + " --out " + (dir / "b/p.jsonl").string()), 0);
  EXPECT_EQ(file_hash(dir / "a/p.jsonl"), file_hash(dir / "b/p.jsonl"));
  EXPECT_EQ(slurp(dir / "a/manifest.json"), slurp(dir / "b/manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "a/run_manifest_gen.json"));
}

TEST_F(CliTest, InfeasibleSpecExitsTwo) {
  spit(dir / "spec.json", R"({"window_days": 10})");
  EXPECT_EQ(run("gen --spec " + (dir / "spec.json").string() + " --out " + (dir / "p.jsonl").string()), 2);
  EXPECT_EQ(run("gen --bogus-flag"), 2);
  EXPECT_EQ(run("gen --spec " + (dir / "missing.json").string() + " --out " + (dir / "p.jsonl").string()), 2);
}

TEST_F(CliTest, PreprocessGoldenByteExact) {
  const fs::path data = BIPETE_TEST_DATA;
  ASSERT_EQ(run("preprocess --in " + (data / "golden_patients.jsonl").string() + " --out " + (dir / "enc.jsonl").string() +
                " --vocab " + (dir / "vocab.json").string()),
            0);
  EXPECT_EQ(slurp(dir / "enc.jsonl"), slurp(data / "golden_encoded.jsonl"));
  EXPECT_EQ(slurp(dir / "vocab.json"), slurp(data / "golden_vocab.json"));
  EXPECT_EQ(slurp(dir / "rejections.json"), slurp(data / "golden_rejections.json"));
  const auto h = file_hash(dir / "enc.jsonl");
  ASSERT_EQ(run("preprocess --in " + (data / "golden_patients.jsonl").string() + " --out " + (dir / "enc.jsonl").string() +
                " --vocab " + (dir / "vocab.json").string()),
            0);
  EXPECT_EQ(file_hash(dir / "enc.jsonl"), h);
}

TEST_F(CliTest, AllShortPatientsGiveEmptyOutputAndFullReport) {
  spit(dir / "p.jsonl",
       R"({"patient_id":"a","label":0,"index_date":"2021-01-01","visits":[{"date":"2020-12-01","events":[{"code":"I10","source":"ICD10"}]}]}
{"patient_id":"b","label":1,"index_date":"2021-01-01","visits":[]}
)");
  ASSERT_EQ(run("preprocess --in " + (dir / "p.jsonl").string() + " --out " + (dir / "e.jsonl").string() + " --vocab " +
                (dir / "v.json").string()),
            0);
  EXPECT_EQ(slurp(dir / "e.jsonl"), "");
  const auto rep = slurp(dir / "rejections.json");
  EXPECT_NE(rep.find("\"fewer_than_min_visits\": 2"), std::string::npos) << rep;
  EXPECT_NE(rep.find("\"accepted\": 0"), std::string::npos);
}

TEST_F(CliTest, MalformedLineExitsTwo) {
  spit(dir / "p.jsonl", "{\"patient_id\":\"a\",\"label\":0,\"index_date\":\"2021-01-01\",\"visits\":[]}\nnot json\n");
  EXPECT_EQ(run("preprocess --in " + (dir / "p.jsonl").string() + " --out " + (dir / "e.jsonl").string() + " --vocab " +
                (dir / "v.json").string()),
            2);
}

TEST_F(CliTest, ZeroLearningRateGivesFlatRunlog) {
  GenArgs g;
  g.out = dir / "p.jsonl";
  g.n_patients = 100;
  cmd_gen(g);
  PreprocessArgs p;
  p.in = g.out;
  p.out = dir / "e.jsonl";
  p.vocab = dir / "v.json";
  cmd_preprocess(p);
  TrainArgs t;
  t.data = p.out;
  t.vocab = p.vocab;
  t.out = dir / "run";
  t.modes = {"both"};
  t.model.d_model = 16;
  t.model.n_heads = 2;
  t.model.n_layers = 1;
  t.model.d_ff = 32;
  t.model.gru_hidden = 8;
  t.model.dropout = 0.0;
  t.train.lr = 0.0;
  t.train.max_epochs = 3;
  t.write_plots = true;
  cmd_train(t);
  std::istringstream log(slurp(t.out / "both/fold0/runlog.csv"));
  std::string line, first;
  std::getline(log, line);
  int rows = 0;
  double first_loss = 0;
  while (std::getline(log, line)) {
    // train loss is a mean over shuffled batches, so only float rounding may move it
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    const double loss = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    const auto tail = line.substr(c2);
    if (rows++ == 0) {
      first = tail;
      first_loss = loss;
    }
    EXPECT_EQ(tail, first);
    EXPECT_NEAR(loss, first_loss, 1e-6);
  }
  EXPECT_EQ(rows, 3);
  for (const char* f : {"summary.json", "metrics.csv", "run_manifest.json", "both/roc.svg", "both/pr.svg",
                        "both/fold0/checkpoint.json", "both/fold0/checkpoint.bin", "both/fold0/test.jsonl",
                        "both/fold0/test_scores.csv", "both/fold0/training_loss.svg"}) {
    EXPECT_TRUE(fs::exists(t.out / f)) << f;
  }
  const auto manifest = slurp(t.out / "run_manifest.json");
  EXPECT_NE(manifest.find(file_hash(t.out / "summary.json")), std::string::npos);
  EXPECT_EQ(slurp(t.out / "summary.json").find("wall"), std::string::npos);

  // only positives: the TN group is empty
  std::istringstream test(slurp(t.out / "both/fold0/test.jsonl"));
  std::string pos;
  while (std::getline(test, line)) {
    if (line.find("\"label\":1") != std::string::npos) pos += line + "\n";
  }
  spit(dir / "x/pos.jsonl", pos);
  EXPECT_EQ(run("explain --checkpoint " + (t.out / "both/fold0/checkpoint.json").string() + " --data " +
                (dir / "x/pos.jsonl").string() + " --out " + (dir / "x/rc.csv").string() + " --steps 4"),
            4);
}

TEST_F(CliTest, ExitCodeMapping) {
  EXPECT_EQ(exit_code_for(bipete::InputError("x")), 2);
  EXPECT_EQ(exit_code_for(bipete::ConfigError("x")), 2);
  EXPECT_EQ(exit_code_for(bipete::NumericError("x")), 3);
  EXPECT_EQ(exit_code_for(bipete::DegenerateError("x")), 4);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST(Svg, WellFormedAndSkipsNonFinite) {
  PlotSpec spec{"t & <x>", "x", "y", 0, 1, 0, 1, true};
  const auto s = line_plot_svg(spec, {{"a", {0, 0.5, 1}, {0, std::nan(""), 1}}});
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  EXPECT_NE(s.find("&amp;"), std::string::npos);
  EXPECT_EQ(s.find("nan"), std::string::npos);
}

}  // namespace
