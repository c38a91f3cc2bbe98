#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scoretune/policy.hpp"
#include "scoretune/reward.hpp"
#include "scoretune/types.hpp"

namespace scoretune {

enum class Stage { stage1, stage2 };

const char* to_string(Stage stage);

enum class GateMode { off, quantile, fixed };

const char* to_string(GateMode mode);
GateMode gate_mode_from_string(const std::string& name);

struct EntropyGate {
  GateMode mode = GateMode::quantile;
  double rho = 0.2;    // top fraction of batch tokens, quantile mode
  double tau_h = 0.0;  // fixed-mode threshold, nats

  bool operator==(const EntropyGate&) const = default;
};

struct GrpoConfig {
  int group_size = 16;
  double eps_low = 0.2;
  double eps_high = 0.2;
  double beta = 0.04;      // KL weight against the frozen reference
  double tau_std = 0.001;  // group reward-std filter threshold
  EntropyGate entropy_gate;
  Stage stage = Stage::stage1;
  bool adv_std_normalize = true;

  bool operator==(const GrpoConfig&) const = default;
  void validate() const;

  // stage1 disables gating and group filtering; stage2 runs as configured
  GrpoConfig for_stage(Stage s) const;
};

struct GroupDecision {
  bool retained = false;
  std::vector<double> advantages;
  double reward_mean = 0.0;
  double reward_std = 0.0;  // population std
};

/// Group-relative advantages plus the STD-guided retention decision.
/// Non-retained groups get all-zero advantages and must be excluded from the
/// loss.
GroupDecision compute_group(std::span<const double> rewards, const GrpoConfig& cfg);

struct RewardGroup {
  std::string item_id;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  bool retained = false;
  std::vector<double> advantages;
};

RewardGroup make_reward_group(std::string item_id, std::vector<Trajectory> trajectories,
                              const ScoreItem& item, const GrpoConfig& cfg,
                              const RewardSpec& reward);

/// Gate threshold for a pooled batch of token entropies: the value such that
/// approximately the top rho fraction satisfies H >= threshold (nearest-rank,
/// ties all pass). Off mode returns -inf, fixed mode returns tau_h.
double entropy_threshold(std::span<const double> batch_entropies, const EntropyGate& gate);

/// Per-token k3 estimator exp(d) - d - 1 with d = logp_ref - logp_new,
/// averaged over the trajectory's tokens. Non-negative.
double kl_penalty(const Trajectory& traj);

struct SurrogateResult {
  double loss = 0.0;       // -J
  double objective = 0.0;  // J
  double kl = 0.0;         // token-mean k3 over all tokens of the given groups
  std::size_t total_tokens = 0;
  std::size_t gated_in_tokens = 0;
  // d(loss)/d(logp_new[t]) per trajectory, in group-major order
  std::vector<std::vector<double>> grad_coeff;
};

/// Clipped token-level surrogate over retained groups with entropy gating and
/// optional KL regularization. The token-count denominator covers all tokens
/// of the given groups, gated or not.
SurrogateResult surrogate_loss(std::span<const RewardGroup> groups, double gate_threshold,
                               const GrpoConfig& cfg);

struct SgdOptimizer {
  double learning_rate = 5.0;
  double momentum = 0.0;
  std::vector<double> velocity;

  void step(std::span<double> params, std::span<const double> grad);
};

struct StepReport {
  int step = 0;
  Stage stage = Stage::stage1;
  double mean_reward = 0.0;
  double retained_fraction = 0.0;
  double gated_in_fraction = 0.0;
  double mean_entropy = 0.0;
  double loss = 0.0;

  bool is_no_op() const { return retained_fraction == 0.0; }
};

std::string step_report_to_jsonl(const StepReport& report);

struct TrainOptions {
  int batch_size = 64;
  double learning_rate = 5.0;
  double momentum = 0.9;
  int threads = 1;

  bool operator==(const TrainOptions&) const = default;
  void validate() const;
};

/// One rollout-and-update step: samples group_size trajectories per item from
/// old_policy, rewards and filters them, gates tokens, and applies a single
/// optimizer update to policy. All-filtered batches are reported as no-ops.
StepReport train_step(std::span<const ToyItem> batch, Policy& policy, const Policy& old_policy,
                      const Policy& ref_policy, const GrpoConfig& cfg, const RewardSpec& reward,
                      SgdOptimizer& opt, std::uint64_t rng_seed, int step_index, int threads = 1);

struct TrainSchedule {
  int stage1_epochs = 2;
  int stage2_epochs = 2;

  bool operator==(const TrainSchedule&) const = default;
  void validate() const;
};

struct EpochReport {
  int epoch = 0;
  Stage stage = Stage::stage1;
  double mean_reward = 0.0;
  double retained_fraction = 0.0;
  double gated_in_fraction = 0.0;
  double mean_entropy = 0.0;
  double loss = 0.0;
};

std::string epoch_report_to_jsonl(const EpochReport& report);

struct TrainingLog {
  std::vector<StepReport> steps;
  std::vector<EpochReport> epochs;
};

struct TrainingCheckpoint {
  int version = 1;
  std::string config_hash;
  std::uint64_t seed = 0;
  int next_epoch = 0;
  std::string rng_state;
  Policy policy;
  Policy ref_policy;
  std::vector<double> velocity;
};

std::string checkpoint_to_json(const TrainingCheckpoint& ckpt);
TrainingCheckpoint checkpoint_from_json(const std::string& text);

using CheckpointSink = std::function<void(const TrainingCheckpoint&)>;
using StepSink = std::function<void(const StepReport&)>;
using EpochSink = std::function<void(const EpochReport&)>;

struct ResumeState {
  Policy policy;
  Policy ref_policy;
  std::vector<double> velocity;
  int next_epoch = 0;
};

ResumeState resume_from_checkpoint(const TrainingCheckpoint& ckpt);

/// Two-stage schedule: stage1 epochs with gating and filtering off, then
/// stage2 with both active. The old policy refreshes from the current policy
/// at every rollout batch; the KL reference snapshots at each stage start.
TrainingLog run_training(std::span<const ToyItem> dataset, Policy& policy,
                         const TrainSchedule& schedule, const GrpoConfig& base_cfg,
                         const RewardSpec& reward, const TrainOptions& options,
                         std::uint64_t seed, const std::string& config_hash = "",
                         const CheckpointSink& checkpoint_sink = {},
                         const StepSink& step_sink = {}, const EpochSink& epoch_sink = {},
                         std::optional<ResumeState> resume = std::nullopt);

/// Mean reward of group_size fresh samples per item; the evaluation-side view
/// of training progress.
double mean_group_reward(const Policy& policy, std::span<const ToyItem> items,
                         const GrpoConfig& cfg, const RewardSpec& reward, std::uint64_t seed,
                         int threads = 1);

}  // namespace scoretune
