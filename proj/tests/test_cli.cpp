#include <gtest/gtest.h>

#include <sstream>

#include "siemmap/util.hpp"
#include "support.hpp"

using testsupport::TempDir;
using testsupport::fixture;
using testsupport::run_cli;

namespace {

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

std::string soaphound_args() {
  return q(fixture("soaphound/rules/windows_soaphound_binary_execution.yml")) + " --kb " +
         q(fixture("attack-excerpt.json")) + " --fixtures " + q(fixture("soaphound/fixtures.json"));
}

std::string ablation_args() {
  return "--corpus " + q(fixture("ablation/rules")) + " --kb " + q(fixture("attack-excerpt.json")) +
         " --fixtures " + q(fixture("ablation/fixtures.json"));
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Cli, IngestAttack) {
  TempDir dir;
  auto run = run_cli("ingest-attack " + q(fixture("attack-excerpt.json")) + " -o " + q(dir / "kb.json"));
  EXPECT_EQ(run.exit_code, 0) << run.output;
  EXPECT_NE(run.output.find("45"), std::string::npos) << run.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "kb.json"));
}

TEST(Cli, IngestMissingFile) {
  TempDir dir;
  auto run = run_cli("ingest-attack " + q(dir / "nope.json") + " -o " + q(dir / "kb.json"));
  EXPECT_NE(run.exit_code, 0);
  EXPECT_NE(run.output.find("nope.json"), std::string::npos) << run.output;
}

TEST(Cli, BadConfigKeyIsConfigError) {
  TempDir dir;
  siemmap::write_file(dir / "c.json", R"({"bogus": 1})");
  auto run = run_cli("map " + soaphound_args() + " --config " + q(dir / "c.json"));
  EXPECT_EQ(run.exit_code, 2) << run.output;
}

TEST(Cli, MapRecordReplayAndDeterminism) {
  TempDir dir;
  auto rec = run_cli("map " + soaphound_args() + " --cache-mode record --cache-dir " + q(dir / "cache") +
                     " -o " + q(dir / "a.json"));
  ASSERT_EQ(rec.exit_code, 0) << rec.output;
  auto rep = run_cli("map " + soaphound_args() + " --cache-mode replay --cache-dir " + q(dir / "cache") +
                     " -o " + q(dir / "b.json") + " --rationales");
  ASSERT_EQ(rep.exit_code, 0) << rep.output;
  EXPECT_NE(rep.output.find("T1482"), std::string::npos);
  EXPECT_EQ(siemmap::read_file(dir / "a.json"), siemmap::read_file(dir / "b.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a.json.manifest.json"));
}

TEST(Cli, ReplayMissNamesStageAndKey) {
  TempDir dir;
  std::filesystem::create_directory(dir / "empty");
  auto run = run_cli("map " + soaphound_args() + " --cache-mode replay --cache-dir " + q(dir / "empty"));
  EXPECT_NE(run.exit_code, 0);
  EXPECT_NE(run.output.find("ioc_extract"), std::string::npos) << run.output;
  EXPECT_NE(run.output.find("key "), std::string::npos) << run.output;
}

TEST(Cli, SweepEmitsEightRows) {
  TempDir dir;
  auto run = run_cli("sweep " + ablation_args() + " --out-dir " + q(dir.path()));
  ASSERT_EQ(run.exit_code, 0) << run.output;
  auto csv = lines(siemmap::read_file(dir / "sweep.csv"));
  ASSERT_EQ(csv.size(), 9u);
  EXPECT_EQ(csv[1].substr(0, 2), "1,");
  EXPECT_EQ(csv[8].substr(0, 9), "dynamic-k");
}

TEST(Cli, AblateEmitsThreeScenarios) {
  TempDir dir;
  auto run = run_cli("ablate " + ablation_args() + " --out-dir " + q(dir.path()));
  ASSERT_EQ(run.exit_code, 0) << run.output;
  const std::string txt = siemmap::read_file(dir / "ablation.txt");
  EXPECT_NE(txt.find("Rule as-is"), std::string::npos) << txt;
  EXPECT_NE(txt.find("w/o context"), std::string::npos) << txt;
  EXPECT_NE(txt.find("with context"), std::string::npos) << txt;
  EXPECT_EQ(lines(siemmap::read_file(dir / "ablation.csv")).size(), 4u);
}

TEST(Cli, EvaluateMatchesHandCount) {
  TempDir dir;
  auto run = run_cli("evaluate " + ablation_args() + " --out-dir " + q(dir.path()));
  ASSERT_EQ(run.exit_code, 0) << run.output;
  auto report = nlohmann::json::parse(siemmap::read_file(dir / "report.json"));
  // per rule recall 1, 1, 1/2, 1, 1 with every prediction correct
  EXPECT_NEAR(report["ar"].get<double>(), 0.9, 1e-12);
  EXPECT_NEAR(report["war"].get<double>(), 7.0 / 8.0, 1e-12);
  EXPECT_NEAR(report["ap"].get<double>(), 1.0, 1e-12);
  auto manifest = nlohmann::json::parse(siemmap::read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest["command"], "evaluate");
  EXPECT_TRUE(manifest["outputs"].contains("report.json"));
}
