// Drives the built objcrop executable end to end.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#ifndef OBJCROP_CLI_PATH
#error "OBJCROP_CLI_PATH must point at the objcrop executable"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(OBJCROP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "objcrop_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run("synth --images-per-class 40 --dim 16 --out-dir " + (root_ / "syn").string()), 0);
  }

  static fs::path root_;

  static std::string data_flags() {
    return "--manifest " + (root_ / "syn/manifest.json").string() + " --cache " +
           (root_ / "syn/features.bin").string();
  }
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, SynthWritesEveryArtifact) {
  for (const char* f : {"manifest.json", "features.bin", "crops.jsonl", "synth.json"})
    EXPECT_TRUE(fs::exists(root_ / "syn" / f)) << f;
}

TEST_F(Cli, RunIsByteIdenticalAcrossInvocations) {
  const auto a = root_ / "run_a", b = root_ / "run_b";
  const std::string common = "run " + data_flags() + " --methods baseline gt --support-sizes 5 --runs 4 --n-test 20 --epochs 50 --seed 9";
  ASSERT_EQ(run(common + " --out-dir " + a.string()), 0);
  ASSERT_EQ(run(common + " --threads 3 --out-dir " + b.string()), 0);
  EXPECT_EQ(slurp(a / "runs.csv"), slurp(b / "runs.csv"));
  EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
  EXPECT_EQ(first_line(a / "runs.csv"), "dataset,setting,method,n_labeled,seed,accuracy");
  EXPECT_EQ(line_count(a / "runs.csv"), 1u + 2u * 4u);
}

TEST_F(Cli, FuseWritesAuditRows) {
  const auto out = root_ / "fuse";
  ASSERT_EQ(run("fuse " + data_flags() + " --runs 3 --n-test 15 --epochs 50 --out-dir " + out.string()), 0);
  EXPECT_EQ(first_line(out / "audit.csv"), "image_id,full_confidence,provenance,label,correct");
  EXPECT_EQ(line_count(out / "audit.csv"), 1u + 3u * 15u);
}

TEST_F(Cli, AnalyzeWritesCurveAndScatter) {
  const auto out = root_ / "an";
  ASSERT_EQ(run("analyze " + data_flags() + " --per-class 20 --out-dir " + out.string()), 0);
  EXPECT_EQ(first_line(out / "variance.csv"), "lambda,variance,centroid_distance");
  EXPECT_EQ(line_count(out / "variance.csv"), 12u);
  EXPECT_EQ(first_line(out / "scatter.csv"), "x,y,class,cropped_flag");
  EXPECT_EQ(line_count(out / "scatter.csv"), 1u + 2u * 5u * 20u);
}

TEST_F(Cli, PlanCropsThenImportRoundTrip) {
  const auto crops = root_ / "plan.jsonl";
  ASSERT_EQ(run("plan-crops --manifest " + (root_ / "syn/manifest.json").string() + " --modes multiple --out " +
                crops.string()),
            0);
  EXPECT_EQ(line_count(crops), 5u * 40u * 4u);
  const auto merged = root_ / "merged.bin";
  EXPECT_EQ(run("import-features --manifest " + (root_ / "syn/manifest.json").string() + " --crops " + crops.string() +
                " --out " + merged.string() + " " + (root_ / "syn/features.bin").string()),
            0);
  EXPECT_TRUE(fs::exists(merged));
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  const auto cfg = root_ / "cfg.json";
  std::ofstream(cfg) << R"({"run": {"runs": 2, "support-sizes": [5], "n-test": 10, "epochs": 20, "methods": ["baseline"]}})";
  const auto out = root_ / "cfg_run";
  ASSERT_EQ(run("--config " + cfg.string() + " run " + data_flags() + " --runs 3 --out-dir " + out.string()), 0);
  EXPECT_EQ(line_count(out / "runs.csv"), 1u + 3u);
}

TEST_F(Cli, ExitCodes) {
  // Validation: support size not a multiple of ways.
  EXPECT_EQ(run("run " + data_flags() + " --support-sizes 7 --runs 1 --out-dir " + (root_ / "x").string()), 1);
  // Validation: unknown augment mode.
  EXPECT_EQ(run("plan-crops --manifest " + (root_ / "syn/manifest.json").string() + " --modes crop --out " +
                (root_ / "x.jsonl").string()),
            1);
  // Missing data: cache lacks the crops a method needs.
  const auto only_full = root_ / "full_only.jsonl";
  {
    std::ofstream f(only_full);
    f << R"({"image_id":"synth_c0_0","crop":"full","vector":[1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16]})" << '\n';
  }
  const auto small = root_ / "small.bin";
  ASSERT_EQ(run("import-features --manifest " + (root_ / "syn/manifest.json").string() + " --out " + small.string() +
                " " + only_full.string()),
            0);
  EXPECT_EQ(run("run --manifest " + (root_ / "syn/manifest.json").string() + " --cache " + small.string() +
                " --runs 1 --support-sizes 5 --out-dir " + (root_ / "y").string()),
            2);
  // Missing data: no such cache file.
  EXPECT_EQ(run("run --manifest " + (root_ / "syn/manifest.json").string() + " --cache " +
                (root_ / "nope.bin").string() + " --out-dir " + (root_ / "z").string()),
            2);
  // Validation: corrupt cache.
  const auto bad = root_ / "bad.bin";
  std::ofstream(bad) << "NOTACACHE";
  EXPECT_EQ(run("run --manifest " + (root_ / "syn/manifest.json").string() + " --cache " + bad.string() +
                " --out-dir " + (root_ / "w").string()),
            1);
}
