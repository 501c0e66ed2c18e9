#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kSamples = DOWNSCALE_SAMPLES_DIR;
const std::string kSync = DOWNSCALE_SYNC_BIN;

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
  Run r;
  const std::string cmd = "'" + kSync + "' " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sync_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string generate_args(const fs::path& out) const {
    return "generate --coarse '" + (kSamples / "three_unit_coarse.csv").string() + "' --schema '" + schema() +
           "' --out '" + out.string() + "'";
  }
  static std::string schema() { return (kSamples / "three_unit_schema.json").string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenerateWritesRowsAndManifest) {
  const auto out = dir_ / "people.csv";
  const auto r = run(generate_args(out));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(count_lines(slurp(out)), 1u + 777u);
  const auto manifest = nlohmann::json::parse(slurp(dir_ / "people.manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 0);
  EXPECT_EQ(manifest.at("decisions").at("sd_mode"), "sqrt_n");
  EXPECT_EQ(manifest.at("decisions").at("phase3"), "distribution");
  EXPECT_TRUE(manifest.at("decisions").contains("contamination"));
  EXPECT_EQ(manifest.at("output").at("rows"), 777);
  EXPECT_FALSE(manifest.contains("timings_seconds"));
}

TEST_F(Cli, TimingsAreOptIn) {
  const auto out = dir_ / "people.csv";
  ASSERT_EQ(run(generate_args(out) + " --timings").status, 0);
  const auto manifest = nlohmann::json::parse(slurp(dir_ / "people.manifest.json"));
  ASSERT_TRUE(manifest.contains("timings_seconds"));
  EXPECT_TRUE(manifest.at("timings_seconds").contains("phase3"));
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  fs::create_directories(dir_ / "a");
  fs::create_directories(dir_ / "b");
  fs::create_directories(dir_ / "c");
  ASSERT_EQ(run(generate_args(dir_ / "a" / "out.csv") + " --seed 7").status, 0);
  ASSERT_EQ(run(generate_args(dir_ / "b" / "out.csv") + " --seed 7").status, 0);
  ASSERT_EQ(run("--jobs 3 " + generate_args(dir_ / "c" / "out.csv") + " --seed 7").status, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "out.csv"), slurp(dir_ / "b" / "out.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "out.csv"), slurp(dir_ / "c" / "out.csv"));
  const auto ma = nlohmann::json::parse(slurp(dir_ / "a" / "out.manifest.json"));
  auto mb = nlohmann::json::parse(slurp(dir_ / "b" / "out.manifest.json"));
  // Only the recorded output path may differ between directories.
  mb["output"]["path"] = ma["output"]["path"];
  EXPECT_EQ(ma, mb);
}

TEST_F(Cli, SavedModelReproducesOutput) {
  const auto model = dir_ / "model.json";
  ASSERT_EQ(run(generate_args(dir_ / "first.csv") + " --save-model '" + model.string() + "'").status, 0);
  ASSERT_EQ(run(generate_args(dir_ / "second.csv") + " --load-model '" + model.string() + "'").status, 0);
  EXPECT_EQ(slurp(dir_ / "first.csv"), slurp(dir_ / "second.csv"));
}

TEST_F(Cli, EmptyCoarseFileNamesLoader) {
  std::ofstream(dir_ / "empty.csv").close();
  const auto r = run("generate --coarse '" + (dir_ / "empty.csv").string() + "' --schema '" + schema() + "' --out '" +
                     (dir_ / "x.csv").string() + "'");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("load_coarse_csv"), std::string::npos) << r.output;
}

TEST_F(Cli, RejectsBadFlags) {
  EXPECT_NE(run(generate_args(dir_ / "x.csv") + " --sd-mode sideways").status, 0);
  EXPECT_NE(run(generate_args(dir_ / "x.csv") + " --contamination 0.7").status, 0);
  EXPECT_NE(run("generate --coarse /no/such/file.csv --schema '" + schema() + "' --out x.csv").status, 0);
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
}

TEST_F(Cli, EvaluateIdenticalFilesScoresOne) {
  const auto out = dir_ / "people.csv";
  ASSERT_EQ(run(generate_args(out)).status, 0);
  const auto report = dir_ / "report.csv";
  const auto r = run("evaluate --truth '" + out.string() + "' --generated '" + out.string() + "' --schema '" + schema() +
                     "' --out '" + report.string() + "'");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("overall accuracy   1.0000"), std::string::npos) << r.output;
  EXPECT_NE(slurp(report).find("overall,all,"), std::string::npos);
}

TEST_F(Cli, SimulateReportsOneRowPerSeedPlusMean) {
  const auto config = dir_ / "small.json";
  std::ofstream(config) << R"({"units": 25, "max_size": 20, "max_training_rows": 300})";
  const auto out = dir_ / "sim.csv";
  const auto r = run("simulate --config '" + config.string() + "' --seeds 5 --out '" + out.string() + "'");
  ASSERT_EQ(r.status, 0) << r.output;
  std::istringstream lines(slurp(out));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 1u + 5u + 1u);
  EXPECT_EQ(rows[0].substr(0, 26), "seed,on:overall,off:overal");
  EXPECT_EQ(rows[1].substr(0, 2), "0,");
  EXPECT_EQ(rows[5].substr(0, 2), "4,");
  EXPECT_EQ(rows[6].substr(0, 5), "mean,");

  // The mean row is the arithmetic mean of the per-seed rows.
  auto field = [](const std::string& row, std::size_t i) {
    std::istringstream s(row);
    std::string f;
    for (std::size_t k = 0; k <= i; ++k) std::getline(s, f, ',');
    return std::stod(f);
  };
  double total = 0;
  for (std::size_t i = 1; i <= 5; ++i) total += field(rows[i], 1);
  EXPECT_NEAR(field(rows[6], 1), total / 5, 1e-9);
}

TEST_F(Cli, MatchRanksAndRejectsAbsentUnit) {
  const auto pool = dir_ / "pool.csv";
  ASSERT_EQ(run(generate_args(pool)).status, 0);
  const auto r = run("match --pool '" + pool.string() + "' --schema '" + schema() + "' --query '" +
                     (kSamples / "match_query.json").string() + "' --k 3");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(count_lines(r.output), 4u);
  EXPECT_EQ(r.output.substr(0, r.output.find('\n')), "rank,unit_id,person_index,distance,age,mortgage,two_languages,gender");

  const auto absent = dir_ / "absent.json";
  std::ofstream(absent) << R"({"unit_id": "H0H0H0", "attributes": {"gender": "M"}})";
  const auto bad = run("match --pool '" + pool.string() + "' --schema '" + schema() + "' --query '" + absent.string() + "'");
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.output.find("H0H0H0"), std::string::npos) << bad.output;
}
