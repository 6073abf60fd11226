#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fadapt/config.hpp"

using namespace fadapt;

namespace {

std::string read(const std::string& rel) {
  std::ifstream in(std::string(FADAPT_SOURCE_DIR) + "/" + rel);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  auto c = parse_config("{}");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.exp.backbone.embedding_dim, 64u);
  EXPECT_EQ(c.exp.fusion.d_model, 64u);
  EXPECT_EQ(c.exp.margin.m2, 0.5);
  EXPECT_EQ(c.exp.margin.s, 16.0);
  EXPECT_EQ(c.exp.restore.fidelity_w, 0.5);
  EXPECT_EQ(c.exp.train.momentum, 0.9);
  EXPECT_EQ(c.exp.train.weight_decay, 5e-4);
  EXPECT_EQ(c.exp.train.poly_power, 0.9);
  EXPECT_EQ(c.exp.dataset.train_identities, 64u);
  EXPECT_EQ(c.exp.dataset.train_per_identity, 50u);
  EXPECT_EQ(c.exp.dataset.generator.image_size, 64u);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* f : {"configs/default.json", "configs/tiny.json"}) {
    EXPECT_NO_THROW(parse_config(read(f), f)) << f;
  }
  auto tiny = parse_config(read("configs/tiny.json"));
  EXPECT_EQ(tiny.exp.dataset.generator.image_size, 32u);
  EXPECT_EQ(tiny.exp.backbone.image_size, 32u);
  EXPECT_EQ(tiny.ablations.levels, (std::vector<double>{10000, 40000}));
  ASSERT_EQ(tiny.ablations.restorers.size(), 2u);
  EXPECT_EQ(tiny.ablations.restorers[1].mode, RestoreMode::wiener);
}

TEST(Config, DefaultFileMatchesBuiltInDefaults) {
  auto file = parse_config(read("configs/default.json"));
  EXPECT_EQ(to_json(file).dump(), to_json(RunConfig{}).dump());
}

TEST(Config, SyntaxErrorReportsLine) {
  const std::string text = "{\n  \"seed\": 3,\n  \"train\": { \"epochs\": 2,, }\n}\n";
  auto msg = error_of([&] { parse_config(text, "bad.json"); });
  EXPECT_NE(msg.find("bad.json:3"), std::string::npos) << msg;
}

TEST(Config, UnknownAndMistypedKeysReportLines) {
  const std::string text = "{\n  \"seed\": 3,\n  \"train\": {\n    \"epohcs\": 2\n  },\n  \"fusion\": {\n    \"n_heads\": \"eight\"\n  },\n  \"extra\": 1\n}\n";
  auto msg = error_of([&] { parse_config(text, "c.json"); });
  EXPECT_NE(msg.find("c.json:4: train.epohcs"), std::string::npos) << msg;
  EXPECT_NE(msg.find("c.json:7: fusion.n_heads"), std::string::npos) << msg;
  EXPECT_NE(msg.find("c.json:9: extra"), std::string::npos) << msg;
}

TEST(Config, CrossFieldValidation) {
  EXPECT_NE(error_of([] { parse_config(R"({"fusion": {"d_model": 32}})"); }).find("d_model"), std::string::npos);
  EXPECT_FALSE(error_of([] { parse_config(R"({"fusion": {"n_heads": 5}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config(R"({"restore": {"fidelity_w": 1.5}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config(R"({"turbulence": {"level": -1}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config(R"({"train": {"lr_base": 0}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config(R"({"loss": {"m1": 0.5}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config(R"({"train": {"epochs": -2}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config(R"({"restore": {"mode": "codeformer"}})"); }).empty());
  EXPECT_FALSE(error_of([] { parse_config("[1, 2]"); }).empty());
}

TEST(Config, OverridesApplyAndValidate) {
  RunConfig c;
  apply_overrides(c, {"train.epochs=3", "restore.mode=wiener", "seed=9", "ablations.levels=[10000]", "fusion.attention_order=self_first"});
  EXPECT_EQ(c.exp.train.epochs, 3u);
  EXPECT_EQ(c.exp.restore.mode, RestoreMode::wiener);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.ablations.levels, std::vector<double>{10000});
  EXPECT_EQ(c.exp.fusion.attention_order, AttentionOrder::self_first);
  RunConfig d;
  EXPECT_THROW(apply_overrides(d, {"train.nope=1"}), ConfigError);
  EXPECT_THROW(apply_overrides(d, {"train.epochs"}), ConfigError);
  EXPECT_THROW(apply_overrides(d, {"fusion.n_heads=7"}), ConfigError);
  apply_overrides(d, {"dataset.image_size=32"});
  EXPECT_EQ(d.exp.backbone.image_size, 32u);
}

TEST(Config, RoundTripThroughJson) {
  RunConfig c;
  apply_overrides(c, {"train.epochs=4", "eval.far_targets=[0.001, 0.5]", "fusion.role_variant=b", "fusion.cascade_depth=3"});
  auto back = parse_config(to_json(c).dump(2));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIsStableAndSensitive) {
  RunConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  RunConfig c;
  c.exp.train.lr_base = 0.051;
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Config, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Config, FailedOverridesLeaveConfigUntouched) {
  RunConfig c;
  const auto before = to_json(c).dump();
  EXPECT_THROW(apply_overrides(c, {"train.epochs=3", "fusion.n_heads=7"}), ConfigError);
  EXPECT_EQ(to_json(c).dump(), before);
}
