#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>

#include "scoretune/config.hpp"
#include "scoretune/policy.hpp"
#include "scoretune/rng.hpp"

using namespace scoretune;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("scoretune-cli-" + std::to_string(Rng(std::random_device{}()).next()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(SCORETUNE_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// a config small enough for fast end-to-end runs
void write_small_config(const fs::path& cfg_path, const fs::path& out_dir) {
  RunConfig cfg = default_config();
  cfg.output_dir = out_dir.string();
  cfg.toy.train_items = 24;
  cfg.toy.eval_items = 24;
  cfg.grpo.group_size = 4;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 5.0;
  cfg.schedule = {1, 1};
  cfg.policy.hidden = {6};
  cfg.policy.prefix_len = 3;
  cfg.teacher.reason_len = 3;
  cfg.teacher.noise_sigma = 0.6;
  cfg.sft.epochs = 5;
  cfg.tts.n_candidates = 5;
  cfg.tts.reflection_rounds = 3;
  std::ofstream(cfg_path) << serialize_config(cfg);
}

}  // namespace

TEST_CASE("init writes a loadable default config") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  CHECK(run("--config " + cfg.string() + " init") == 0);
  const RunConfig parsed = load_config_file(cfg.string());
  CHECK(parsed == default_config());
}

TEST_CASE("missing or invalid configs exit with code 2") {
  TempDir tmp;
  CHECK(run("--config " + (tmp.path / "absent.json").string() + " train") == 3);
  const fs::path bad = tmp.path / "bad.json";
  std::ofstream(bad) << "{\"seed\": \"nope\"}";
  CHECK(run("--config " + bad.string() + " train") == 2);
  // structurally valid but semantically broken
  RunConfig cfg = default_config();
  cfg.grpo.tau_std = -2.0;
  const fs::path invalid = tmp.path / "invalid.json";
  std::ofstream(invalid) << serialize_config(cfg);
  CHECK(run("--config " + invalid.string() + " train") == 2);
  // unknown subcommand is a usage error
  CHECK(run("definitely-not-a-command") == 2);
}

TEST_CASE("full pipeline: build-dataset, sft, train, eval, select") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  const fs::path out = tmp.path / "out";
  write_small_config(cfg, out);
  const std::string base = "--config " + cfg.string() + " ";

  REQUIRE(run(base + "build-dataset") == 0);
  CHECK(fs::exists(out / "corpus.jsonl"));
  CHECK(fs::exists(out / "corpus.jsonl.manifest.json"));
  CHECK(fs::exists(out / "run_meta.json"));

  REQUIRE(run(base + "sft") == 0);
  CHECK(fs::exists(out / "sft_checkpoint.json"));
  CHECK(fs::exists(out / "sft_loss.jsonl"));

  REQUIRE(run(base + "train") == 0);
  CHECK(fs::exists(out / "training_log.jsonl"));
  CHECK(fs::exists(out / "epochs.jsonl"));
  CHECK(fs::exists(out / "checkpoint.json"));
  CHECK(fs::exists(out / "checkpoint-2.json"));

  REQUIRE(run(base + "eval") == 0);
  const std::string report = slurp(out / "eval_report.json");
  CHECK(report.find("plcc") != std::string::npos);
  CHECK(report.find("config_hash") != std::string::npos);

  const fs::path prompts = tmp.path / "prompts.txt";
  std::ofstream(prompts) << "a red cube on a blue sphere\nforest in fog\n";
  REQUIRE(run(base + "select --prompts " + prompts.string()) == 0);
  const std::string transcripts = slurp(out / "transcripts.jsonl");
  CHECK(transcripts.find("prompt-0000") != std::string::npos);
  CHECK(transcripts.find("prompt-0001") != std::string::npos);
  CHECK(transcripts.find("\"chosen\":true") != std::string::npos);

  // stage2-only training from the stage-1-style checkpoint
  REQUIRE(run(base + "train --init-from " + (out / "sft_checkpoint.json").string()) == 0);
}

TEST_CASE("train is idempotent and deterministic at the byte level") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_small_config(cfg, tmp.path / "o1");
  const std::string base = "--config " + cfg.string() + " ";

  REQUIRE(run(base + "--deterministic train --output " + (tmp.path / "o1").string()) == 0);
  REQUIRE(run(base + "--deterministic train --output " + (tmp.path / "o2").string()) == 0);
  CHECK(slurp(tmp.path / "o1" / "training_log.jsonl") ==
        slurp(tmp.path / "o2" / "training_log.jsonl"));
  CHECK(slurp(tmp.path / "o1" / "checkpoint.json") == slurp(tmp.path / "o2" / "checkpoint.json"));
  CHECK(slurp(tmp.path / "o1" / "epochs.jsonl") == slurp(tmp.path / "o2" / "epochs.jsonl"));
  CHECK(!slurp(tmp.path / "o1" / "training_log.jsonl").empty());

  // a different seed changes the log
  REQUIRE(run(base + "train --seed 99 --output " + (tmp.path / "o3").string()) == 0);
  CHECK(slurp(tmp.path / "o1" / "training_log.jsonl") !=
        slurp(tmp.path / "o3" / "training_log.jsonl"));
}

TEST_CASE("resume reproduces the remaining training log") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_small_config(cfg, tmp.path / "full");
  const std::string base = "--config " + cfg.string() + " ";

  REQUIRE(run(base + "train --output " + (tmp.path / "full").string()) == 0);
  REQUIRE(run(base + "train --output " + (tmp.path / "resumed").string() + " --resume " +
              (tmp.path / "full" / "checkpoint-1.json").string()) == 0);

  // the resumed log must be the suffix of the full log
  const std::string full_log = slurp(tmp.path / "full" / "training_log.jsonl");
  const std::string resumed_log = slurp(tmp.path / "resumed" / "training_log.jsonl");
  CHECK(!resumed_log.empty());
  CHECK(full_log.size() > resumed_log.size());
  CHECK(full_log.substr(full_log.size() - resumed_log.size()) == resumed_log);
  CHECK(slurp(tmp.path / "full" / "checkpoint.json") ==
        slurp(tmp.path / "resumed" / "checkpoint.json"));
}

TEST_CASE("env overrides reach the effective config") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_small_config(cfg, tmp.path / "out");
  const std::string cmd = "SCORETUNE_SCHEDULE__STAGE2_EPOCHS=0 " + std::string(SCORETUNE_BIN) +
                          " --config " + cfg.string() + " train >/dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const std::string epochs = slurp(tmp.path / "out" / "epochs.jsonl");
  CHECK(epochs.find("stage2") == std::string::npos);
  CHECK(epochs.find("stage1") != std::string::npos);
}

TEST_CASE("extreme r_keep warns about hard-dropping most items") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_small_config(cfg, tmp.path / "out");
  const fs::path err = tmp.path / "stderr.txt";
  const std::string cmd = "SCORETUNE_REJECTION__ACCEPT_REWARD_MIN=0.9999 " +
                          std::string(SCORETUNE_BIN) + " --config " + cfg.string() +
                          " build-dataset >/dev/null 2>" + err.string();
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const std::string stderr_text = slurp(err);
  CHECK(stderr_text.find("warning") != std::string::npos);
  CHECK(stderr_text.find("hard-dropped") != std::string::npos);
}

TEST_CASE("stage2-only training runs from a stage1 checkpoint") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  const fs::path out = tmp.path / "out";
  write_small_config(cfg, out);
  const std::string base = "--config " + cfg.string() + " ";

  // stage1-only run produces the warm-start checkpoint
  REQUIRE(WEXITSTATUS(std::system(("SCORETUNE_SCHEDULE__STAGE2_EPOCHS=0 " +
                                   std::string(SCORETUNE_BIN) + " --config " + cfg.string() +
                                   " train >/dev/null 2>&1")
                                      .c_str())) == 0);
  const fs::path stage1_ckpt = tmp.path / "stage1.json";
  fs::copy_file(out / "checkpoint.json", stage1_ckpt);

  // stage2-only from that checkpoint
  const std::string cmd = "SCORETUNE_SCHEDULE__STAGE1_EPOCHS=0 " + std::string(SCORETUNE_BIN) +
                          " --config " + cfg.string() + " train --init-from " +
                          stage1_ckpt.string() + " >/dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  const std::string epochs = slurp(out / "epochs.jsonl");
  CHECK(epochs.find("stage2") != std::string::npos);
  CHECK(epochs.find("stage1") == std::string::npos);
}

TEST_CASE("eval accepts a stored prediction file") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  const fs::path out = tmp.path / "out";
  write_small_config(cfg, out);

  // oracle predictions for the held-out items: the toy split is items
  // [train_items, train_items + eval_items) of the shared dataset
  const RunConfig config = load_config_file(cfg.string());
  const auto full = make_toy_dataset(
      {config.toy.train_items + config.toy.eval_items, config.toy.feature_dim,
       derive_seed(config.seed, {0x746f7964ULL})},
      config.vocab);
  const fs::path pred = tmp.path / "pred.jsonl";
  {
    std::ofstream o(pred);
    o << std::setprecision(17);
    for (int i = config.toy.train_items; i < config.toy.train_items + config.toy.eval_items; ++i)
      o << "{\"item_id\": \"" << full[i].id << "\", \"score\": " << full[i].truth_score << "}\n";
  }
  REQUIRE(run("--config " + cfg.string() + " eval --predictions " + pred.string()) == 0);
  const std::string report = slurp(out / "eval_report.json");
  CHECK(report.find("\"plcc\": 1.0") != std::string::npos);
  CHECK(report.find("\"n_parse_failures\": 0") != std::string::npos);
}

TEST_CASE("select transcripts are byte-identical across runs") {
  TempDir tmp;
  const fs::path cfg = tmp.path / "cfg.json";
  write_small_config(cfg, tmp.path / "s1");
  const fs::path prompts = tmp.path / "prompts.txt";
  std::ofstream(prompts) << "dunes at noon\nglass city\n";
  const std::string base = "--config " + cfg.string() + " select --prompts " + prompts.string();

  REQUIRE(run(base + " --output " + (tmp.path / "s1").string()) == 0);
  REQUIRE(run(base + " --output " + (tmp.path / "s2").string()) == 0);
  const std::string t1 = slurp(tmp.path / "s1" / "transcripts.jsonl");
  CHECK(!t1.empty());
  CHECK(t1 == slurp(tmp.path / "s2" / "transcripts.jsonl"));
}
