#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracle.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& out = {}) {
  std::string cmd = std::string(DEEPSOLVE_CLI) + " " + args;
  cmd += out.empty() ? " >/dev/null 2>&1" : " >" + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("deepsolve_cli_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("solve-pf --case " + oracle::case_path("case30") + " --bogus"), 2);
  EXPECT_EQ(run("gen-data"), 2);
  EXPECT_EQ(run("gen-data --case " + oracle::case_path("case30") + " --range 1.2:0.8 --out-dir " + dir.string()), 2);
}

TEST_F(Cli, DomainErrorsExitWithOne) {
  EXPECT_EQ(run("solve-pf --case " + (dir / "missing").string()), 1);
  std::ofstream(dir / "bad.m") << "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0;\n];\n";
  EXPECT_EQ(run("solve-opf --case " + (dir / "bad.m").string()), 1);
}

TEST_F(Cli, SolvePfWritesResultAndManifest) {
  const auto out = dir / "pf.json";
  ASSERT_EQ(run("solve-pf --case " + oracle::case_path("case30") + " --out " + out.string()), 0);
  const auto doc = nlohmann::json::parse(slurp(out));
  EXPECT_EQ(doc["status"], "converged");
  EXPECT_LE(doc["max_residual_pu"].get<double>(), 1e-8);
  EXPECT_EQ(doc["solution"]["buses"].size(), 30u);
  const auto manifest = nlohmann::json::parse(slurp(dir / "pf.manifest.json"));
  EXPECT_EQ(manifest["subcommand"], "solve-pf");
  EXPECT_EQ(manifest["inputs"].size(), 1u);
  EXPECT_EQ(manifest["inputs"].begin().value()["sha256"].get<std::string>().size(), 64u);
}

TEST_F(Cli, SolveOpfReportsObjective) {
  const auto out = dir / "opf.json";
  ASSERT_EQ(run("solve-opf --case " + oracle::case_path("case30") + " --out " + out.string()), 0);
  const auto doc = nlohmann::json::parse(slurp(out));
  EXPECT_NEAR(doc["objective"].get<double>(), 803.1277, 0.01);
  EXPECT_TRUE(doc["feasible"].get<bool>());
}

TEST_F(Cli, ConvertProducesLoadableCanonicalCase) {
  const auto out = dir / "case30.json";
  ASSERT_EQ(run("convert --case " + oracle::case_path("case30") + " --out " + out.string()), 0);
  ASSERT_EQ(run("solve-pf --case " + out.string()), 0);
}

TEST_F(Cli, PipelineGenTrainEvalPredictReport) {
  const auto data = dir / "data";
  const auto model = dir / "m.ckpt";
  const std::string c = " --case " + oracle::case_path("case30");
  ASSERT_EQ(run("gen-data" + c + " --train-count 24 --test-count 6 --seed 7 --out-dir " + data.string()), 0);
  EXPECT_TRUE(fs::exists(data / "train.csv"));
  EXPECT_TRUE(fs::exists(data / "manifest.json"));
  const auto gm = nlohmann::json::parse(slurp(data / "manifest.json"));
  EXPECT_EQ(gm["seeds"]["data"], 7);
  EXPECT_EQ(gm["config"]["train-count"], "24");
  EXPECT_GE(gm["config"]["workers"].get<int>(), 1);

  ASSERT_EQ(run("--workers 2 train" + c + " --data-dir " + data.string() + " --epochs 2 --batch 8 --seed 3 --out " + model.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "m.metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "m.manifest.json"));
  const auto metrics = slurp(dir / "m.metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);

  const auto report = dir / "eval.csv";
  ASSERT_EQ(run("eval" + c + " --model " + model.string() + " --data-dir " + data.string() + " --recover --report " +
                report.string() + " --dump-comparison " + (dir / "cmp.csv").string()),
            0);
  EXPECT_TRUE(fs::exists(report));
  EXPECT_TRUE(fs::exists(dir / "cmp.csv"));
  EXPECT_TRUE(fs::exists(dir / "eval.manifest.json"));

  const auto pred = dir / "pred.json";
  ASSERT_EQ(run("predict" + c + " --model " + model.string() + " --out " + pred.string()), 0);
  const auto doc = nlohmann::json::parse(slurp(pred));
  ASSERT_EQ(doc["predictions"].size(), 1u);
  EXPECT_EQ(doc["predictions"][0]["s_pred"].size(), 11u);

  EXPECT_EQ(run("report " + report.string(), dir / "table.txt"), 0);
  EXPECT_NE(slurp(dir / "table.txt").find("feas(%)"), std::string::npos);

  // the model was trained on case30; case118 must be refused
  EXPECT_EQ(run("predict --case " + oracle::case_path("case118") + " --model " + model.string()), 1);
}
