#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ibts/env/replay.hpp"

namespace {

struct Run {
  int status = 0;
  std::string out;
};

// Runs the CLI binary with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(IBTS_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.out += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

nlohmann::json last_json_line(const std::string& text) {
  const auto end = text.find_last_not_of('\n');
  const auto start = text.rfind('\n', end);
  return nlohmann::json::parse(text.substr(start == std::string::npos ? 0 : start + 1, end + 1));
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

const std::string kConfigs = std::string(IBTS_SOURCE_DIR) + "/configs/desk/";

}  // namespace

TEST(Cli, UsageErrorsAreMachineReadable) {
  auto r = cli("bogus");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(last_json_line(r.out).at("error"), "cli.unknown_subcommand");
  r = cli("");
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(last_json_line(r.out).at("error"), "cli.usage");
  const auto dir = fresh_dir("ibts_cli_usage");
  std::ofstream(dir / "bad.json") << "{not json";
  r = cli("eval --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(last_json_line(r.out).at("error"), "config.malformed");
}

TEST(Cli, EvalWithMissingCheckpointNamesThePath) {
  const auto dir = fresh_dir("ibts_cli_missing");
  const std::string missing = (dir / "no_such_student.ckpt").string();
  std::ofstream(dir / "spec.json") << nlohmann::json{{"layout", "Cramped-2"}, {"n", 2},
                                                     {"ego", {{"kind", "student"}, {"checkpoint", missing}, {"predictor", missing}}},
                                                     {"partners", {{{"kind", "random"}}}}}
                                          .dump();
  const auto r = cli("eval --config " + (dir / "spec.json").string() + " --out " + (dir / "o").string());
  EXPECT_NE(r.status, 0);
  const auto err = last_json_line(r.out);
  EXPECT_NE(err.at("message").get<std::string>().find(missing), std::string::npos) << r.out;
}

TEST(Cli, EvalExportTableAndReplay) {
  const auto dir = fresh_dir("ibts_cli_eval");
  auto r = cli("eval --config " + kConfigs + "eval_heuristic_pl3.json --out " + (dir / "heur").string() + " --episodes 1");
  ASSERT_EQ(r.status, 0) << r.out;
  r = cli("eval --config " + kConfigs + "eval_random_pl3.json --out " + (dir / "rand").string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "heur" / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "eval");
  EXPECT_TRUE(manifest.contains("version"));
  EXPECT_EQ(manifest.at("config_hash").get<std::string>().size(), 16u);
  EXPECT_EQ(manifest.at("seeds").size(), 12u);

  r = cli("export-table --dir " + dir.string());
  ASSERT_EQ(r.status, 0) << r.out;
  std::ifstream table(dir / "table.md");
  std::stringstream ss;
  ss << table.rdbuf();
  EXPECT_NE(ss.str().find("| PL-3 | passing-heuristic | 12 | "), std::string::npos) << ss.str();
  EXPECT_NE(ss.str().find(" ± "), std::string::npos);
  EXPECT_NE(ss.str().find(" | 1.000 ± 0.000 (1.000) |"), std::string::npos);

  const auto log_path = dir / "heur" / "replays" / "passing-heuristic_seed3_ep0.jsonl";
  r = cli("replay --log " + log_path.string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto out = last_json_line(r.out);
  EXPECT_EQ(out.at("score"), ibts::load_replay(log_path).final_score);
  EXPECT_EQ(out.at("score"), out.at("stored_score"));
}

TEST(Cli, PipelineStagesRunAtToyScale) {
  const auto dir = fresh_dir("ibts_cli_pipeline");
  const auto d = [&](const char* p) { return (dir / p).string(); };
  auto r = cli("train-pool --config " + kConfigs + "train_pool.json --steps 500 --out " + d("pool"));
  ASSERT_EQ(r.status, 0) << r.out;
  r = cli("score-pool --pool " + d("pool/pool") + " --episodes 2 --out " + d("scored"));
  ASSERT_EQ(r.status, 0) << r.out;
  r = cli("gen-predictor-data --config " + kConfigs + "predictor_data.json --pool " + d("scored/pool") + " --episodes 3 --out " + d("data"));
  ASSERT_EQ(r.status, 0) << r.out;
  r = cli("train-predictor --config " + kConfigs + "train_predictor.json --dataset " + d("data/dataset") + " --steps 1 --out " + d("pred"));
  ASSERT_EQ(r.status, 0) << r.out;
  for (int agent = 0; agent < 2; ++agent) {
    r = cli("train-teacher --config " + kConfigs + "train_teacher.json --pool " + d("scored/pool") + " --predictor " + d("pred/predictor.ckpt") +
            " --agent " + std::to_string(agent) + " --steps 800 --out " + d("teachers"));
    ASSERT_EQ(r.status, 0) << r.out;
  }
  r = cli("distill --config " + kConfigs + "distill.json --pool " + d("scored/pool") + " --predictor " + d("pred/predictor.ckpt") +
          " --teacher " + d("teachers/teacher_0.ckpt") + " --teacher " + d("teachers/teacher_1.ckpt") + " --episodes 2 --steps 2 --out " + d("student"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "student" / "student.ckpt"));
  r = cli("train-teacher --config " + kConfigs + "train_teacher.json --pool " + d("scored/pool") + " --predictor " + d("nope.ckpt") + " --out " + d("t2"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find(d("nope.ckpt")), std::string::npos);
}

TEST(Cli, SweepAndBaselineAtToyScale) {
  const auto dir = fresh_dir("ibts_cli_sweep");
  auto r = cli("sweep-k --config " + kConfigs + "sweep_k.json --steps 500 --seed 1 --episodes 1 --out " + (dir / "k").string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(last_json_line(r.out).size(), 3u);
  r = cli("baseline-hack --config " + kConfigs + "baseline_hack.json --steps 500 --seed 1 --episodes 1 --out " + (dir / "b").string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(last_json_line(r.out).at("meta").at("bonus"), 3.0);
  r = cli("sweep-k --config " + kConfigs + "sweep_k.json --out " + (dir / "k2").string() + " --k");
  EXPECT_NE(r.status, 0);
}
