#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "soda/cli/commands.hpp"
#include "soda/cli/manifest.hpp"

namespace fs = std::filesystem;

namespace {

int soda_run(std::vector<std::string> args) {
  args.insert(args.begin(), {"soda", "-q"});
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return soda::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(split_csv(line));
  }
  return rows;
}

class CliPipeline : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "soda_cli_test";
    fs::remove_all(root);
    ASSERT_EQ(soda_run({"simulate", "--n", "80", "--n-test", "30", "--seed", "4", "--out", (root / "data").string()}), 0);
    ASSERT_EQ(soda_run({"fit-behavior", "--data", (root / "data/train.jsonl").string(), "--k", "10", "--out",
                        (root / "beh").string()}),
              0);
    ASSERT_EQ(soda_run({"train", "--data", (root / "data/train.jsonl").string(), "--behavior",
                        (root / "beh/behavior.json").string(), "--masks", (root / "beh/masks.jsonl").string(),
                        "--epochs", "2", "--K", "3", "--hidden", "8", "--out", (root / "train").string()}),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string data(const char* name) { return (root / "data" / name).string(); }
  static std::string behavior() { return (root / "beh/behavior.json").string(); }
};

fs::path CliPipeline::root;

}  // namespace

TEST_F(CliPipeline, SimulateWritesSplitsAndManifest) {
  EXPECT_TRUE(fs::exists(root / "data/train.jsonl"));
  EXPECT_TRUE(fs::exists(root / "data/test.jsonl"));
  EXPECT_FALSE(fs::exists(root / "data/val.jsonl"));
  auto steps = soda::cli::read_manifest(root / "data");
  ASSERT_EQ(steps.size(), 1u);
  EXPECT_EQ(steps[0].command, "simulate");
  EXPECT_EQ(steps[0].seed, 4u);
  EXPECT_EQ(steps[0].outputs.size(), 2u);
  for (const auto& out : steps[0].outputs) {
    EXPECT_EQ(out.sha256, soda::cli::sha256_file(root / "data" / out.path));
  }
}

TEST_F(CliPipeline, EvaluateWritesMetricsForEveryPolicy) {
  auto out = root / "eval";
  ASSERT_EQ(soda_run({"evaluate", "--checkpoints", (root / "train").string(), "--behavior", behavior(), "--data",
                      data("test.jsonl"), "--out", out.string()}),
            0);
  auto rows = read_csv(out / "metrics.csv");
  ASSERT_EQ(rows.size(), 4u);
  const auto& h = rows[0];
  auto col = [&](const std::string& name) {
    auto it = std::find(h.begin(), h.end(), name);
    EXPECT_NE(it, h.end()) << name;
    return static_cast<std::size_t>(it - h.begin());
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    EXPECT_EQ(rows[r][col("# Unseen Actions")], "0");
    double e = std::stod(rows[r][col("ESS")]);
    EXPECT_GT(e, 0.0);
    EXPECT_LE(e, 30.0 + 1e-9);
  }
  col("CWPDIS Value");
  col("SymKL btw pairs");
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
}

TEST_F(CliPipeline, ReportRowsAreDistributionsAndRanked) {
  auto out = root / "report";
  ASSERT_EQ(soda_run({"report", "--checkpoints", (root / "train/checkpoint.json").string(), "--behavior",
                      behavior(), "--data", data("test.jsonl"), "--filter", "all", "--filter", "MAP<55", "--top",
                      "5", "--out", out.string()}),
            0);
  auto rows = read_csv(out / "action_probs_all.csv");
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[1][0], "behavior");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    EXPECT_EQ(rows[r][1], std::to_string(30 * 24));
    double total = 0;
    for (std::size_t c = 2; c < rows[r].size(); ++c) total += std::stod(rows[r][c]);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  EXPECT_TRUE(fs::exists(out / "action_probs_map_lt_55.csv"));

  auto top = read_csv(out / "top_diversity.csv");
  ASSERT_GT(top.size(), 1u);
  double prev = 1e300;
  for (std::size_t r = 1; r < top.size(); ++r) {
    double s = std::stod(top[r][3]);
    EXPECT_LE(s, prev);
    prev = s;
  }
}

TEST_F(CliPipeline, TrainingIsReproducible) {
  auto again = root / "train_again";
  ASSERT_EQ(soda_run({"train", "--data", data("train.jsonl"), "--behavior", behavior(), "--masks",
                      (root / "beh/masks.jsonl").string(), "--epochs", "2", "--K", "3", "--hidden", "8", "--out",
                      again.string()}),
            0);
  EXPECT_EQ(soda::cli::sha256_file(again / "checkpoint.json"), soda::cli::sha256_file(root / "train/checkpoint.json"));
}

TEST_F(CliPipeline, SweepCreatesOneRunPerGridPoint) {
  auto out = root / "sweep";
  ASSERT_EQ(soda_run({"train", "--data", data("train.jsonl"), "--behavior", behavior(), "--epochs", "1", "--K", "2",
                      "--hidden", "8", "--sweep", "lambda=0,0.4", "--sweep", "seed=1,2", "--out", out.string()}),
            0);
  std::size_t runs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory() && fs::exists(e.path() / "checkpoint.json")) ++runs;
  }
  EXPECT_EQ(runs, 4u);
  auto eval = root / "sweep_eval";
  ASSERT_EQ(soda_run({"evaluate", "--checkpoints", out.string(), "--behavior", behavior(), "--data",
                      data("test.jsonl"), "--out", eval.string()}),
            0);
  EXPECT_EQ(read_csv(eval / "metrics.csv").size(), 1u + 4u * 2u);
}

TEST_F(CliPipeline, UsageAndInputErrorsExitTwo) {
  auto bad = root / "bad";
  EXPECT_EQ(soda_run({"simulate", "--config", (root / "missing.conf").string(), "--out", bad.string()}), 2);
  EXPECT_EQ(soda_run({"fit-behavior", "--data", data("test.jsonl"), "--k", "100000", "--out", bad.string()}), 2);
  fs::create_directories(root / "empty");
  EXPECT_EQ(soda_run({"evaluate", "--checkpoints", (root / "empty").string(), "--behavior", behavior(), "--data",
                      data("test.jsonl"), "--out", bad.string()}),
            2);
  EXPECT_EQ(soda_run({"report", "--checkpoints", (root / "train").string(), "--behavior", behavior(), "--data",
                      data("test.jsonl"), "--filter", "sodium>140", "--out", bad.string()}),
            2);
  EXPECT_EQ(soda_run({"train", "--data", data("train.jsonl"), "--behavior", behavior(), "--lambda", "-1", "--out",
                      bad.string()}),
            2);
  EXPECT_EQ(soda_run({"no-such-command"}), 2);
}

TEST(Manifest, Sha256KnownAnswer) {
  EXPECT_EQ(soda::cli::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(soda::cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
