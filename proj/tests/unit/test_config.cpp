#include <fstream>

#include "doctest.h"
#include "test_util.hpp"

#include "aot/config.hpp"
#include "aot/error.hpp"

using namespace aot;
using nlohmann::json;

TEST_CASE("paper preset carries the published defaults") {
  const AppConfig c = AppConfig::preset_named("paper");
  CHECK(c.generator.num_blocks == 8);
  CHECK(c.generator.block.rates == std::vector<int>{1, 2, 4, 8});
  CHECK(c.generator.block.width == 256);
  CHECK(c.generator.block.residual_mode == ResidualMode::kGated);
  CHECK(c.discriminator.num_layers == 4);
  CHECK(c.discriminator.target_mode == TargetMode::kSoftMask);
  CHECK(c.mask.kernel_size == 70);
  CHECK(c.loss.lambda_sty == 250.0);
  CHECK(c.train.lr == 1e-4);
  CHECK(c.train.adam_beta1 == 0.0);
  CHECK(c.train.adam_beta2 == 0.9);
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.image_size == 512);
  CHECK(c.train.mask_buckets == standard_buckets());
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("desk preset shrinks width and size but keeps the block structure") {
  const AppConfig paper = AppConfig::preset_named("paper");
  const AppConfig desk = AppConfig::preset_named("desk");
  CHECK(desk.generator.num_blocks == paper.generator.num_blocks);
  CHECK(desk.generator.block.rates == paper.generator.block.rates);
  CHECK(desk.generator.base_width < paper.generator.base_width);
  CHECK(desk.train.image_size == 64);
  CHECK(desk.loss.lambda_adv == paper.loss.lambda_adv);
  CHECK(desk.loss.lambda_per == paper.loss.lambda_per);
  CHECK(desk.train.lr == paper.train.lr);
  CHECK_NOTHROW(desk.validate());
  CHECK_THROWS_AS(AppConfig::preset_named("huge"), ConfigError);
}

TEST_CASE("JSON round trip is lossless") {
  AppConfig c = AppConfig::preset_named("desk");
  c.train.seed = 77;
  c.discriminator.target_mode = TargetMode::kPatchGan;
  c.eval.buckets = parse_buckets("5-15%");
  const AppConfig back = AppConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 64);
}

TEST_CASE("partial documents merge onto the preset") {
  const AppConfig c = AppConfig::from_json(json::parse(R"({"preset": "desk", "train": {"steps": 12}})"));
  CHECK(c.train.steps == 12);
  CHECK(c.generator.base_width == AppConfig::preset_named("desk").generator.base_width);
  CHECK(AppConfig::from_json(json::object()).preset == "paper");
}

TEST_CASE("unknown keys and bad types are rejected") {
  CHECK_THROWS_AS(AppConfig::from_json(json::parse(R"({"train": {"stpes": 3}})")), ConfigError);
  CHECK_THROWS_AS(AppConfig::from_json(json::parse(R"({"bogus": 1})")), ConfigError);
  CHECK_THROWS_AS(AppConfig::from_json(json::parse(R"({"train": {"steps": "many"}})")), ConfigError);
  CHECK_THROWS_AS(AppConfig::from_json(json::parse(R"({"discriminator": {"target_mode": "x"}})")),
                  ConfigError);
}

TEST_CASE("validation") {
  AppConfig c = AppConfig::preset_named("desk");
  c.train.image_size = 40;  // not divisible by the discriminator factor
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AppConfig::preset_named("desk");
  c.train.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AppConfig::preset_named("desk");
  c.loss.lambda_per = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AppConfig::preset_named("desk");
  c.train.grad_clip = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("overrides") {
  AppConfig c = AppConfig::preset_named("desk");
  c.apply_override("train.steps=9");
  CHECK(c.train.steps == 9);
  c.apply_override("generator.block.residual_mode=identity");
  CHECK(c.generator.block.residual_mode == ResidualMode::kIdentity);
  c.apply_override("generator.block.rates=[2]");
  CHECK(c.generator.block.rates == std::vector<int>{2});
  c.apply_override("train.mask_buckets=\"20-30%\"");
  REQUIRE(c.train.mask_buckets.size() == 1);
  CHECK(c.train.mask_buckets[0].low == doctest::Approx(0.2));
  c.apply_override("eval.buckets=[[0.1,0.2],[0.3,0.4]]");
  CHECK(c.eval.buckets.size() == 2);
  c.apply_override(R"(generator={"base_width": 64, "block": {"width": 64}})");
  CHECK(c.generator.base_width == 64);
  CHECK(c.train.steps == 9);

  // Switching preset resets everything else.
  c.apply_override("preset=paper");
  CHECK(c.to_json() == AppConfig::preset_named("paper").to_json());

  const std::string before = c.hash();
  CHECK_THROWS_AS(c.apply_override("train.nope=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train..steps=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.lr=-1"), ConfigError);
  CHECK(c.hash() == before);  // failed overrides leave the config untouched
}

TEST_CASE("load from file") {
  testutil::TempDir dir("cfg");
  {
    std::ofstream(dir / "c.json") << R"({"preset": "desk", "eval": {"seed": 5}})";
    std::ofstream(dir / "bad.json") << "{ not json";
  }
  CHECK(AppConfig::load((dir / "c.json").string()).eval.seed == 5);
  CHECK_THROWS_AS(AppConfig::load((dir / "bad.json").string()), ConfigError);
  CHECK_THROWS_AS(AppConfig::load((dir / "missing.json").string()), Error);
}

TEST_CASE("hash tracks content") {
  AppConfig a = AppConfig::preset_named("desk");
  AppConfig b = a;
  CHECK(a.hash() == b.hash());
  b.train.seed = 1;
  CHECK(a.hash() != b.hash());
}
