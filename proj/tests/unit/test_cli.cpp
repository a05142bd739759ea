#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HISTOFUSE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto log = dir / "log.txt";
  EXPECT_EQ(run_cli("--help", log), 0);
  EXPECT_NE(slurp(log).find("sweep"), std::string::npos);
  EXPECT_EQ(run_cli("frobnicate", log), 1);
  EXPECT_EQ(run_cli("--config " + (dir / "none.json").string() + " ingest", log), 1);
  EXPECT_NE(slurp(log).find("none.json"), std::string::npos);
  std::ofstream(dir / "bad.json") << R"({"dataset_root": 5})";
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " ingest", log), 1);
}

TEST(Cli, ToyRunAndReport) {
  TempDir dir;
  const auto log = dir / "log.txt";
  const auto root = dir / "toy";
  ASSERT_EQ(run_cli("toy " + root.string() + " --per-class 6 --side 128", log), 0) << slurp(log);
  ASSERT_TRUE(fs::exists(root / "config.json"));
  const std::string cfg = "--config " + (root / "config.json").string() + " -q ";
  EXPECT_EQ(run_cli(cfg + "ingest", log), 0) << slurp(log);
  EXPECT_NE(slurp(log).find("total      30"), std::string::npos) << slurp(log);
  ASSERT_EQ(run_cli(cfg + "run --levels 40,30", log), 0) << slurp(log);
  EXPECT_TRUE(fs::exists(root / "out" / "report.csv"));
  EXPECT_TRUE(fs::exists(root / "out" / "sweep.csv"));
  EXPECT_EQ(run_cli(cfg + "report", log), 0);
  EXPECT_NE(slurp(log).find("svm"), std::string::npos);
  EXPECT_EQ(run_cli(cfg + "sweep --levels abc", log), 1);
}
