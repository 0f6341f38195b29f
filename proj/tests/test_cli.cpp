#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("quag_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run quag(const std::string& args) {
  const auto log = workdir() / "last_output.txt";
  const std::string cmd = std::string(QUAG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string small_data(const std::string& name, int seed = 1) {
  const auto dir = workdir() / name;
  if (!fs::exists(dir / "manifest.json")) {
    const auto r = quag("synth --out " + dir.string() + " --seed " + std::to_string(seed) +
                        " --episodes 3 --frames 8 --feature-dim 8");
    EXPECT_EQ(r.code, 0) << r.output;
  }
  return (dir / "manifest.json").string();
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(quag("").code, 2);
  EXPECT_EQ(quag("frobnicate").code, 2);
  EXPECT_EQ(quag("synth").code, 2);
  EXPECT_EQ(quag("synth --out " + (workdir() / "x").string() + " --frames 2").code, 2);
  EXPECT_EQ(quag("train --data m.json --out o --fusion sideways").code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(quag("--help").code, 0); }

TEST(Cli, MissingFilesExitThree) {
  EXPECT_EQ(quag("eval --data /nonexistent/manifest.json --oracle --out " +
                 (workdir() / "r.json").string()).code,
            3);
  const auto data = small_data("io");
  EXPECT_EQ(quag("eval --data " + data + " --checkpoint /nonexistent/ck.bin --out " +
                 (workdir() / "r.json").string()).code,
            3);
}

TEST(Cli, SynthIsDeterministic) {
  const auto a = workdir() / "det_a", b = workdir() / "det_b";
  ASSERT_EQ(quag("synth --out " + a.string() + " --seed 5 --episodes 3 --frames 8 --feature-dim 8").code, 0);
  ASSERT_EQ(quag("synth --out " + b.string() + " --seed 5 --episodes 3 --frames 8 --feature-dim 8").code, 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path().filename();
  }
}

TEST(Cli, OracleEvalIsPerfect) {
  const auto data = small_data("oracle");
  const auto report = workdir() / "oracle.json";
  const auto r = quag("eval --data " + data + " --oracle --out " + report.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = json::parse(slurp(report));
  EXPECT_DOUBLE_EQ(j["retrieval"]["recall@0.7"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["segmentation"]["recall@0.7"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["captioning"]["rouge_l"].get<double>(), 1.0);
}

TEST(Cli, GradcheckPassesAndCatchesInjectedFault) {
  EXPECT_EQ(quag("gradcheck --group retrieval").code, 0);
  EXPECT_EQ(quag("gradcheck --group retrieval --inject-fault").code, 4);
}

TEST(Cli, TrainThenEvalJointFusion) {
  const auto data = small_data("train");
  const auto run = workdir() / "run_joint";
  const auto t = quag("train --data " + data + " --out " + run.string() +
                      " --fusion joint --dim 8 --heads 2 --encoder-layers 1 --epochs 1 --batch 2 --lr 1e-3");
  ASSERT_EQ(t.code, 0) << t.output;
  EXPECT_TRUE(fs::exists(run / "checkpoint.bin"));
  EXPECT_EQ(json::parse(slurp(run / "config.json"))["model"]["fusion"], "joint");
  const auto report = workdir() / "joint.json";
  const auto e = quag("eval --data " + data + " --checkpoint " + (run / "checkpoint.bin").string() +
                      " --out " + report.string());
  ASSERT_EQ(e.code, 0) << e.output;
  const auto j = json::parse(slurp(report));
  EXPECT_TRUE(j.contains("retrieval"));
  EXPECT_TRUE(j["captioning"].contains("cider"));

  // A checkpoint from a different architecture is rejected as an I/O problem.
  const auto other = workdir() / "run_other";
  ASSERT_EQ(quag("train --data " + data + " --out " + other.string() +
                 " --dim 16 --heads 2 --encoder-layers 1 --epochs 1 --batch 2").code,
            0);
  EXPECT_EQ(quag("eval --data " + data + " --checkpoint " + (run / "checkpoint.bin").string() +
                 " --model-config " + (other / "config.json").string() + " --out " + report.string())
                .code,
            3);
}

TEST(Cli, NonFiniteTrainingExitsFour) {
  const auto data = small_data("nan");
  const auto run = workdir() / "run_nan";
  const auto r = quag("train --data " + data + " --out " + run.string() +
                      " --dim 8 --heads 2 --encoder-layers 1 --epochs 1 --lr 1e300");
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_TRUE(fs::exists(run / "checkpoint.last_good.bin"));
}
