#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fadapt/harness.hpp"

using namespace fadapt;

namespace {

const std::string kTiny = std::string(FADAPT_SOURCE_DIR) + "/configs/tiny.json";

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fadapt_harness_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig tiny(const std::string& dir, std::vector<std::string> sets = {}) {
  return resolve_config(kTiny, sets, dir);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kNoGrid{"ablations.residual=[]", "ablations.cascade=[]", "ablations.attention_order=[]",
                                       "ablations.role_variants=[]", "ablations.restorers=[]", "ablations.levels=[]",
                                       "ablations.gradcheck=false"};

}  // namespace

TEST(Report, PercentWithThreeDecimals) {
  EXPECT_EQ(percent3(0.99133), 99.133);
  EXPECT_EQ(format3(percent3(0.99133)), "99.133");
  EXPECT_EQ(format3(percent3(0.5)), "50.000");
  EXPECT_EQ(percent3(1.0), 100.0);
  EXPECT_EQ(percent3(2.0 / 3.0), 66.667);
  EXPECT_EQ(number_key(0.01), "0.01");
  EXPECT_EQ(number_key(40000.0), "40000");
  EXPECT_EQ(number_key(0.5), "0.5");
}

TEST(Report, RoundTripsThroughText) {
  RunConfig c;
  VerificationReport r;
  r.accuracy = 0.875;
  r.tar_at_far = {{0.01, 0.5}, {0.1, 0.75}};
  r.rank_k_hit_rate = {{1, 0.9}, {5, 1.0}};
  auto rep = make_report("eval", c, metrics_json(r));
  auto back = json::parse(report_text(rep));
  EXPECT_EQ(back, rep);
  EXPECT_EQ(back.at("results").at("accuracy"), 87.5);
  EXPECT_EQ(back.at("results").at("tar_at_far").at("0.01"), 50.0);
  EXPECT_EQ(back.at("results").at("rank_k_hit_rate").at("5"), 100.0);
  EXPECT_EQ(back.at("config_hash"), config_hash(c));
  EXPECT_EQ(back.at("version"), kVersion);
  for (const char* k : {"command", "version", "config_hash", "seed", "results"}) EXPECT_TRUE(back.contains(k));
}

TEST(Report, ExitCodes) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
  EXPECT_EQ(exit_code_for(DependencyError("x", "synth")), 3);
  EXPECT_EQ(exit_code_for(NumericalError("x")), 4);
  EXPECT_EQ(exit_code_for(EnvironmentError("x")), 1);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST(Resolve, SeedEnvironmentAndOutput) {
  auto c = resolve_config(kTiny, {"seed=4"}, std::string("somewhere"), "17");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.output_dir, "somewhere");
  EXPECT_EQ(resolve_config(kTiny, {"seed=4"}).seed, 4u);
  EXPECT_EQ(resolve_config(kTiny, {}, std::nullopt, "").seed, 1u);
  EXPECT_THROW(resolve_config(kTiny, {}, std::nullopt, "-3"), ConfigError);
  EXPECT_THROW(resolve_config(kTiny, {}, std::nullopt, "abc"), ConfigError);
  EXPECT_THROW(resolve_config(kTiny, {}, std::string("")), ConfigError);
  EXPECT_THROW(resolve_config("/nonexistent/config.json"), ConfigError);
}

TEST(Commands, UnknownCommandIsConfigError) {
  EXPECT_THROW(run_command("deploy", tiny(fresh_dir("unknown").string())), ConfigError);
}

TEST(Commands, MissingUpstreamNamesTheCommand) {
  const auto dir = fresh_dir("missing");
  auto expect_missing = [&](const std::string& cmd, const std::string& needs) {
    try {
      run_command(cmd, tiny(dir.string()));
      ADD_FAILURE() << cmd << " did not fail";
    } catch (const DependencyError& e) {
      EXPECT_NE(std::string(e.what()).find("`" + needs + "`"), std::string::npos) << cmd << ": " << e.what();
      EXPECT_EQ(exit_code_for(e), 3);
    }
  };
  for (const char* cmd : {"degrade", "restore", "pretrain", "eval"}) expect_missing(cmd, "synth");
  expect_missing("train", "pretrain");
  run_command("synth", tiny(dir.string()));
  expect_missing("restore", "degrade");
  expect_missing("train", "pretrain");
  run_command("pretrain", tiny(dir.string()));
  expect_missing("train", "degrade");
  run_command("degrade", tiny(dir.string()));
  expect_missing("train", "restore");
  fs::remove_all(dir);
}

TEST(Commands, StagedPipelineIsReproducible) {
  const auto dir = fresh_dir("pipeline");
  auto c = tiny(dir.string(), {"train.strategy=adapter_joint"});
  for (const char* cmd : {"synth", "degrade", "restore", "pretrain", "train", "eval"}) {
    auto r = run_command(cmd, c);
    EXPECT_EQ(r.status, 0) << cmd;
    EXPECT_TRUE(fs::exists(dir / "reports" / (std::string(cmd) + ".json"))) << cmd;
  }
  const auto first = slurp(dir / "reports" / "eval.json");
  run_command("eval", c);
  EXPECT_EQ(slurp(dir / "reports" / "eval.json"), first);
  auto rep = json::parse(first);
  EXPECT_EQ(rep.at("command"), "eval");
  EXPECT_EQ(rep.at("results").at("strategy"), "adapter_joint");
  EXPECT_EQ(rep.at("results").at("pairs"), 80);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "adapter"));
  EXPECT_TRUE(fs::exists(dir / "history" / "adapter_joint.jsonl"));
  EXPECT_EQ(json::parse(slurp(dir / "config.json")), to_json(c));

  // A second run from scratch in another directory reproduces every report.
  const auto dir2 = fresh_dir("pipeline2");
  auto c2 = tiny(dir2.string(), {"train.strategy=adapter_joint"});
  for (const char* cmd : {"synth", "degrade", "restore", "pretrain", "train", "eval"}) run_command(cmd, c2);
  for (const char* cmd : {"synth", "degrade", "restore", "pretrain", "train", "eval"})
    EXPECT_EQ(slurp(dir2 / "reports" / (std::string(cmd) + ".json")), slurp(dir / "reports" / (std::string(cmd) + ".json")))
        << cmd;

  auto base = tiny(dir.string(), {"train.strategy=baseline_lq", "eval.write_scores=true"});
  EXPECT_EQ(run_command("train", base).report.at("results").at("optimizer_steps"), 0);
  run_command("eval", base);
  EXPECT_TRUE(fs::exists(dir / "reports" / "scores_baseline_lq.csv"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Ablation, EmptyGridGivesEmptyTables) {
  auto sets = kNoGrid;
  sets.push_back("ablations.strategies=[]");
  auto c = tiny(fresh_dir("empty").string(), sets);
  auto a = run_ablation(c);
  auto back = json::parse(a.results.dump());
  for (auto& t : ablation_tables()) {
    ASSERT_TRUE(back.at("tables").contains(t));
    EXPECT_TRUE(back["tables"][t].is_array());
    EXPECT_TRUE(back["tables"][t].empty());
  }
  EXPECT_TRUE(back.at("gradcheck").empty());
  EXPECT_TRUE(a.gradchecks_passed);
  const auto csv = ablation_csv(a.results);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST(Ablation, StrategyTableHasFourRows) {
  const auto dir = fresh_dir("strategies");
  auto c = tiny(dir.string(), kNoGrid);
  auto r = run_command("ablate", c);
  EXPECT_EQ(r.status, 0);
  const auto& rows = r.report.at("results").at("tables").at("strategies");
  ASSERT_EQ(rows.size(), 4u);
  std::vector<std::string> names;
  for (auto& row : rows) {
    names.push_back(row.at("strategy"));
    EXPECT_TRUE(row.at("accuracy").is_number());
    EXPECT_TRUE(row.at("tar_at_far").contains("0.01"));
    EXPECT_EQ(row.at("per_seed").size(), 1u);
  }
  EXPECT_EQ(names, (std::vector<std::string>{"baseline_lq", "eval_restored", "finetune_restored", "adapter_joint"}));
  EXPECT_EQ(rows[0].at("per_seed")[0].at("optimizer_steps"), 0);
  EXPECT_GT(rows[3].at("per_seed")[0].at("optimizer_steps").get<int>(), 0);
  const auto csv = slurp(dir / "reports" / "ablate.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("strategies,40000,oracle_blend,0.5,adapter_joint"), std::string::npos) << csv;
  EXPECT_EQ(json::parse(slurp(dir / "reports" / "ablate.json")), r.report);
  fs::remove_all(dir);
}

TEST(Ablation, VariantListIsOneFactorAtATime) {
  RunConfig c;
  auto v = fusion_variants(c);
  EXPECT_EQ(v.size(), 8u);
  for (std::size_t i = 1; i < v.size(); ++i) {
    int diffs = (v[i].use_residual != v[0].use_residual) + (v[i].cascade_depth != v[0].cascade_depth) +
                (v[i].attention_order != v[0].attention_order) + (v[i].role_variant != v[0].role_variant);
    EXPECT_EQ(diffs, 1) << i;
  }
}
