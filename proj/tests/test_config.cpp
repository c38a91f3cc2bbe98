#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <string>

#include "scoretune/config.hpp"
#include "scoretune/errors.hpp"

using namespace scoretune;

TEST_CASE("defaults carry the documented hyperparameters") {
  const RunConfig cfg = default_config();
  CHECK(cfg.grpo.group_size == 16);       // n = 16 sampled responses per query
  CHECK(cfg.grpo.beta == 0.04);
  CHECK(cfg.grpo.eps_low == 0.2);
  CHECK(cfg.grpo.eps_high == 0.2);
  CHECK(cfg.grpo.tau_std == 0.001);
  CHECK(cfg.reward.sigma == 0.8);
  CHECK(cfg.reward.margin == 0.3);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.schedule.stage1_epochs == 2);
  CHECK(cfg.schedule.stage2_epochs == 2);
  CHECK(cfg.grpo.entropy_gate.mode == GateMode::quantile);
  CHECK(cfg.grpo.entropy_gate.rho == 0.2);
  CHECK(cfg.tts.n_candidates == 20);
  CHECK(cfg.tts.reflection_rounds == 20);
  CHECK(cfg.vocab.score_min == 1.0);
  CHECK(cfg.vocab.score_max == 5.0);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config round-trips through its serialized form") {
  RunConfig cfg = default_config();
  cfg.seed = 777;
  cfg.grpo.eps_low = 0.15;
  cfg.grpo.entropy_gate.mode = GateMode::fixed;
  cfg.grpo.entropy_gate.tau_h = 0.9;
  cfg.policy.arch = PolicyArch::tabular;
  cfg.policy.hidden = {32, 16};
  cfg.reward.kind = RewardKind::threshold;
  cfg.teacher.bias_aesthetic = -0.2;
  cfg.tts.combiner.mode = CombinerMode::weighted;
  cfg.tts.tasks = {TaskKind::technical};
  cfg.paths.prompts = "prompts.txt";

  const RunConfig parsed = parse_config_text(serialize_config(cfg));
  CHECK(parsed == cfg);
}

TEST_CASE("malformed and invalid configs fail with field-level context") {
  CHECK_THROWS_AS(parse_config_text("{not json"), config_error);

  RunConfig cfg = default_config();
  cfg.grpo.group_size = 0;
  CHECK_THROWS_AS(parse_config_text(serialize_config(cfg)), config_error);

  std::string text = serialize_config(default_config());
  text.replace(text.find("\"group_size\": 16"), 16, "\"group_size\": \"x\"");
  try {
    parse_config_text(text);
    FAIL("expected config_error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("grpo") != std::string::npos);
  }

  // missing section
  CHECK_THROWS_AS(parse_config_text("{\"seed\": 1}"), config_error);
}

TEST_CASE("env overrides rewrite nested keys") {
  std::string text = serialize_config(default_config());
  const std::map<std::string, std::string> env{
      {"SCORETUNE_GRPO__EPS_LOW", "0.35"},
      {"SCORETUNE_OUTPUT_DIR", "elsewhere"},
      {"SCORETUNE_GRPO__ENTROPY_GATE__MODE", "fixed"},
      {"SCORETUNE_SCHEDULE__STAGE2_EPOCHS", "5"},
      {"IGNORED", "yes"},
  };
  apply_env_overrides(text, env);
  const RunConfig cfg = parse_config_text(text);
  CHECK(cfg.grpo.eps_low == 0.35);
  CHECK(cfg.output_dir == "elsewhere");
  CHECK(cfg.grpo.entropy_gate.mode == GateMode::fixed);
  CHECK(cfg.schedule.stage2_epochs == 5);
}

TEST_CASE("config hash is stable and sensitive") {
  const RunConfig a = default_config();
  RunConfig b = default_config();
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.grpo.eps_low = 0.21;
  CHECK(config_hash(a) != config_hash(b));
  // round-tripping does not change the hash
  const RunConfig c = parse_config_text(serialize_config(a));
  CHECK(config_hash(c) == config_hash(a));
}

TEST_CASE("cross-field validation") {
  RunConfig cfg = default_config();
  cfg.policy.feature_dim = 7;  // mismatch with toy.feature_dim
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = default_config();
  cfg.output_dir.clear();
  CHECK_THROWS_AS(cfg.validate(), config_error);
}
