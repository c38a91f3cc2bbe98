#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "scoretune/dataset.hpp"
#include "scoretune/grpo.hpp"
#include "scoretune/policy.hpp"
#include "scoretune/reward.hpp"
#include "scoretune/tts.hpp"

namespace scoretune {

struct SftConfig {
  int epochs = 40;
  double learning_rate = 1.0;

  bool operator==(const SftConfig&) const = default;
  void validate() const;
};

struct ToyConfig {
  int train_items = 200;
  int eval_items = 200;
  int feature_dim = 4;

  bool operator==(const ToyConfig&) const = default;
  void validate() const;
};

struct PathsConfig {
  std::string corpus = "corpus.jsonl";
  std::string prompts;

  bool operator==(const PathsConfig&) const = default;
};

// The single declarative config driving every subcommand. Defaults: n=16
// samples per query, beta=0.04, eps=0.2, sigma=0.8, batch 64, a 2+2 epoch
// schedule and best-of-20 selection.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string output_dir = "out";
  RewardSpec reward;
  GrpoConfig grpo;
  TrainSchedule schedule;
  TrainOptions train;
  PolicyShape policy;
  Vocabulary vocab;
  ToyConfig toy;
  SimulatedTeacher teacher;
  RejectionPolicy rejection;
  SftConfig sft;
  TtsConfig tts;
  PathsConfig paths;

  bool operator==(const RunConfig&) const = default;
  void validate() const;
};

RunConfig default_config();

std::string serialize_config(const RunConfig& config);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Applies SCORETUNE_-prefixed environment overrides to a config JSON tree.
/// "__" separates path segments: SCORETUNE_GRPO__EPS_LOW=0.3 sets grpo.eps_low.
/// Values parse as JSON when possible, else as strings.
void apply_env_overrides(std::string& config_json_text,
                         const std::map<std::string, std::string>& env);

/// Reads SCORETUNE_* variables from the process environment.
std::map<std::string, std::string> scoretune_env();

/// FNV-1a over the canonical (sorted-key) serialization; 16 hex chars.
std::string config_hash(const RunConfig& config);

}  // namespace scoretune
