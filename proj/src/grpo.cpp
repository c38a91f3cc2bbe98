#include "scoretune/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scoretune/errors.hpp"
#include "scoretune/parallel.hpp"
#include "scoretune/serialization.hpp"

namespace scoretune {

namespace {

constexpr double kAdvantageEps = 1e-8;
constexpr double kQuantileSlack = 1e-9;  // guards ceil against 0.2*5 = 1.0000000000000002

constexpr std::uint64_t kItemTag = 0x6974656dULL;     // rollout streams per item
constexpr std::uint64_t kShuffleTag = 0x73687566ULL;  // per-epoch permutation
constexpr std::uint64_t kRolloutTag = 0x726f6c6cULL;  // per-batch root
constexpr std::uint64_t kEvalTag = 0x6576616cULL;     // mean_group_reward streams

double population_std(std::span<const double> values, double mean) {
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(values.size()));
}

}  // namespace

const char* to_string(Stage stage) { return stage == Stage::stage1 ? "stage1" : "stage2"; }

const char* to_string(GateMode mode) {
  switch (mode) {
    case GateMode::off: return "off";
    case GateMode::quantile: return "quantile";
    case GateMode::fixed: return "fixed";
  }
  return "off";
}

GateMode gate_mode_from_string(const std::string& name) {
  if (name == "off") return GateMode::off;
  if (name == "quantile") return GateMode::quantile;
  if (name == "fixed") return GateMode::fixed;
  throw config_error("unknown entropy gate mode '" + name + "' (expected off|quantile|fixed)");
}

void GrpoConfig::validate() const {
  if (group_size < 1) throw config_error("grpo.group_size must be >= 1");
  if (!(eps_low > 0.0) || !(eps_high > 0.0))
    throw config_error("grpo.eps_low and grpo.eps_high must be positive");
  if (eps_low >= 1.0) throw config_error("grpo.eps_low must stay below 1");
  if (beta < 0.0) throw config_error("grpo.beta must be non-negative");
  if (tau_std < 0.0) throw config_error("grpo.tau_std must be non-negative");
  if (entropy_gate.mode == GateMode::quantile &&
      !(entropy_gate.rho > 0.0 && entropy_gate.rho < 1.0))
    throw config_error("grpo.entropy_gate.rho must lie in (0, 1)");
  if (entropy_gate.mode == GateMode::fixed && entropy_gate.tau_h < 0.0)
    throw config_error("grpo.entropy_gate.tau_h must be >= 0");
}

GrpoConfig GrpoConfig::for_stage(Stage s) const {
  GrpoConfig cfg = *this;
  cfg.stage = s;
  if (s == Stage::stage1) cfg.entropy_gate.mode = GateMode::off;
  return cfg;
}

GroupDecision compute_group(std::span<const double> rewards, const GrpoConfig& cfg) {
  if (static_cast<int>(rewards.size()) != cfg.group_size)
    throw std::invalid_argument("compute_group: got " + std::to_string(rewards.size()) +
                                " rewards for group_size " + std::to_string(cfg.group_size));
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("compute_group: non-finite reward");

  GroupDecision out;
  out.reward_mean =
      std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  out.reward_std = population_std(rewards, out.reward_mean);
  out.retained = cfg.stage == Stage::stage1 ? true : out.reward_std > cfg.tau_std;
  out.advantages.assign(rewards.size(), 0.0);
  if (out.retained) {
    const double denom = cfg.adv_std_normalize ? out.reward_std + kAdvantageEps : 1.0;
    for (std::size_t i = 0; i < rewards.size(); ++i)
      out.advantages[i] = (rewards[i] - out.reward_mean) / denom;
  }
  return out;
}

RewardGroup make_reward_group(std::string item_id, std::vector<Trajectory> trajectories,
                              const ScoreItem& item, const GrpoConfig& cfg,
                              const RewardSpec& reward) {
  RewardGroup group;
  group.item_id = std::move(item_id);
  group.trajectories = std::move(trajectories);
  group.rewards.reserve(group.trajectories.size());
  for (const auto& traj : group.trajectories)
    group.rewards.push_back(reward_trajectory(traj, item, reward));
  GroupDecision decision = compute_group(group.rewards, cfg);
  group.reward_mean = decision.reward_mean;
  group.reward_std = decision.reward_std;
  group.retained = decision.retained;
  group.advantages = std::move(decision.advantages);
  return group;
}

double entropy_threshold(std::span<const double> batch_entropies, const EntropyGate& gate) {
  switch (gate.mode) {
    case GateMode::off: return -std::numeric_limits<double>::infinity();
    case GateMode::fixed: return gate.tau_h;
    case GateMode::quantile: break;
  }
  if (batch_entropies.empty())
    throw std::invalid_argument("entropy_threshold: empty batch in quantile mode");
  const auto n = static_cast<double>(batch_entropies.size());
  auto k = static_cast<std::size_t>(std::ceil(gate.rho * n - kQuantileSlack));
  k = std::clamp<std::size_t>(k, 1, batch_entropies.size());
  std::vector<double> sorted(batch_entropies.begin(), batch_entropies.end());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(), std::greater<>());
  return sorted[k - 1];
}

double kl_penalty(const Trajectory& traj) {
  if (traj.logp_ref.size() != traj.length() || traj.logp_new.size() != traj.length())
    throw std::invalid_argument("kl_penalty: reference or current log-probs missing");
  if (traj.length() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    const double d = traj.logp_ref[t] - traj.logp_new[t];
    sum += std::exp(d) - d - 1.0;
  }
  return sum / static_cast<double>(traj.length());
}

SurrogateResult surrogate_loss(std::span<const RewardGroup> groups, double gate_threshold,
                               const GrpoConfig& cfg) {
  SurrogateResult out;
  for (const auto& group : groups)
    for (const auto& traj : group.trajectories) out.total_tokens += traj.length();
  if (out.total_tokens == 0) return out;

  const double inv_tokens = 1.0 / static_cast<double>(out.total_tokens);
  const double clip_lo = 1.0 - cfg.eps_low;
  const double clip_hi = 1.0 + cfg.eps_high;

  double surrogate_sum = 0.0;
  double kl_sum = 0.0;
  out.grad_coeff.reserve(groups.size() * static_cast<std::size_t>(cfg.group_size));

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    if (group.advantages.size() != group.trajectories.size())
      throw std::invalid_argument("surrogate_loss: advantages not computed for group " +
                                  std::to_string(g));
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const Trajectory& traj = group.trajectories[i];
      const double adv = group.advantages[i];
      if (traj.logp_new.size() != traj.length() || traj.logp_old.size() != traj.length() ||
          traj.entropy.size() != traj.length())
        throw std::invalid_argument("surrogate_loss: per-token arrays inconsistent");
      if (cfg.beta > 0.0 && traj.logp_ref.size() != traj.length())
        throw config_error("surrogate_loss: beta > 0 but reference log-probs missing");

      std::vector<double> coeff(traj.length(), 0.0);
      for (std::size_t t = 0; t < traj.length(); ++t) {
        const double ratio = std::exp(traj.logp_new[t] - traj.logp_old[t]);
        if (!std::isfinite(ratio))
          throw numerical_error("surrogate_loss: non-finite ratio at group " + std::to_string(g) +
                                " trajectory " + std::to_string(i) + " token " +
                                std::to_string(t));
        if (traj.entropy[t] >= gate_threshold) {
          ++out.gated_in_tokens;
          const double clipped = std::clamp(ratio, clip_lo, clip_hi);
          surrogate_sum += std::min(ratio * adv, clipped * adv);
          const bool flat = (adv > 0.0 && ratio > clip_hi) || (adv < 0.0 && ratio < clip_lo);
          if (!flat) coeff[t] = -ratio * adv * inv_tokens;
        }
        if (cfg.beta > 0.0) {
          const double d = traj.logp_ref[t] - traj.logp_new[t];
          kl_sum += std::exp(d) - d - 1.0;
          coeff[t] += cfg.beta * (1.0 - std::exp(d)) * inv_tokens;
        }
      }
      out.grad_coeff.push_back(std::move(coeff));
    }
  }

  out.kl = kl_sum * inv_tokens;
  out.objective = surrogate_sum * inv_tokens - cfg.beta * out.kl;
  out.loss = -out.objective;
  return out;
}

void SgdOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (grad.size() != params.size())
    throw std::invalid_argument("SgdOptimizer: gradient size mismatch");
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    params[i] -= learning_rate * velocity[i];
  }
}

void TrainOptions::validate() const {
  if (batch_size < 1) throw config_error("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw config_error("train.learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw config_error("train.momentum must lie in [0, 1)");
  if (threads < 0) throw config_error("train.threads must be >= 0");
}

void TrainSchedule::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0)
    throw config_error("schedule epochs must be >= 0");
}

StepReport train_step(std::span<const ToyItem> batch, Policy& policy, const Policy& old_policy,
                      const Policy& ref_policy, const GrpoConfig& cfg, const RewardSpec& reward,
                      SgdOptimizer& opt, std::uint64_t rng_seed, int step_index, int threads) {
  cfg.validate();
  reward.validate();
  if (batch.empty()) throw data_error("train_step: empty batch");

  const int n = cfg.group_size;
  const bool on_policy = old_policy.shape == policy.shape && old_policy.vocab == policy.vocab &&
                         old_policy.params == policy.params;

  std::vector<std::vector<Trajectory>> sampled(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    sampled[i].reserve(n);
    for (int j = 0; j < n; ++j) {
      Rng rng(derive_seed(rng_seed, {kItemTag, i, static_cast<std::uint64_t>(j)}));
      sampled[i].push_back(sample(old_policy, batch[i], old_policy.shape.prefix_len, rng));
    }
    for (auto& traj : sampled[i]) {
      if (!on_policy)
        traj.logp_new = logprob_and_entropy(policy, batch[i], traj.tokens).first;
      if (cfg.beta > 0.0)
        traj.logp_ref = logprob_and_entropy(ref_policy, batch[i], traj.tokens).first;
    }
  });

  StepReport report;
  report.step = step_index;
  report.stage = cfg.stage;

  // batch-level pools: mean reward over all trajectories, mean entropy and the
  // gate pool over all tokens (retained or not)
  std::vector<RewardGroup> groups;
  groups.reserve(batch.size());
  std::vector<double> entropy_pool;
  double reward_sum = 0.0;
  std::size_t traj_count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    RewardGroup group = make_reward_group(batch[i].id, std::move(sampled[i]), batch[i], cfg, reward);
    for (double r : group.rewards) reward_sum += r;
    traj_count += group.rewards.size();
    for (const auto& traj : group.trajectories)
      entropy_pool.insert(entropy_pool.end(), traj.entropy.begin(), traj.entropy.end());
    groups.push_back(std::move(group));
  }
  report.mean_reward = reward_sum / static_cast<double>(traj_count);
  report.mean_entropy = entropy_pool.empty()
                            ? 0.0
                            : std::accumulate(entropy_pool.begin(), entropy_pool.end(), 0.0) /
                                  static_cast<double>(entropy_pool.size());

  const EntropyGate gate =
      cfg.stage == Stage::stage1 ? EntropyGate{GateMode::off, 0.0, 0.0} : cfg.entropy_gate;
  const double gate_thr = entropy_threshold(entropy_pool, gate);

  std::vector<RewardGroup> retained;
  std::vector<std::size_t> retained_idx;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].retained) {
      retained_idx.push_back(i);
      retained.push_back(std::move(groups[i]));
    }
  }
  report.retained_fraction =
      static_cast<double>(retained.size()) / static_cast<double>(groups.size());

  if (retained.empty()) return report;  // no-op step, reported not raised

  const SurrogateResult sres = surrogate_loss(retained, gate_thr, cfg);
  report.gated_in_fraction = sres.total_tokens == 0
                                 ? 0.0
                                 : static_cast<double>(sres.gated_in_tokens) /
                                       static_cast<double>(sres.total_tokens);
  report.loss = sres.loss;

  std::vector<double> grad(policy.params.size(), 0.0);
  std::size_t flat = 0;
  for (std::size_t g = 0; g < retained.size(); ++g) {
    const ToyItem& item = batch[retained_idx[g]];
    for (const auto& traj : retained[g].trajectories)
      accumulate_grad_logprob(policy, item, traj.tokens, sres.grad_coeff[flat++], grad);
  }
  opt.step(policy.params, grad);
  return report;
}

namespace {

std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = count; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  return perm;
}

EpochReport aggregate_epoch(int epoch, Stage stage, std::span<const StepReport> steps) {
  EpochReport er;
  er.epoch = epoch;
  er.stage = stage;
  if (steps.empty()) return er;
  for (const auto& s : steps) {
    er.mean_reward += s.mean_reward;
    er.retained_fraction += s.retained_fraction;
    er.gated_in_fraction += s.gated_in_fraction;
    er.mean_entropy += s.mean_entropy;
    er.loss += s.loss;
  }
  const double inv = 1.0 / static_cast<double>(steps.size());
  er.mean_reward *= inv;
  er.retained_fraction *= inv;
  er.gated_in_fraction *= inv;
  er.mean_entropy *= inv;
  er.loss *= inv;
  return er;
}

}  // namespace

ResumeState resume_from_checkpoint(const TrainingCheckpoint& ckpt) {
  return ResumeState{ckpt.policy, ckpt.ref_policy, ckpt.velocity, ckpt.next_epoch};
}

TrainingLog run_training(std::span<const ToyItem> dataset, Policy& policy,
                         const TrainSchedule& schedule, const GrpoConfig& base_cfg,
                         const RewardSpec& reward, const TrainOptions& options,
                         std::uint64_t seed, const std::string& config_hash,
                         const CheckpointSink& checkpoint_sink, const StepSink& step_sink,
                         const EpochSink& epoch_sink, std::optional<ResumeState> resume) {
  schedule.validate();
  options.validate();
  base_cfg.validate();
  reward.validate();
  if (dataset.empty()) throw data_error("run_training: empty dataset");

  const int total_epochs = schedule.stage1_epochs + schedule.stage2_epochs;
  const std::size_t steps_per_epoch =
      (dataset.size() + options.batch_size - 1) / static_cast<std::size_t>(options.batch_size);

  Policy ref = policy;
  SgdOptimizer opt{options.learning_rate, options.momentum, {}};
  int start_epoch = 0;
  if (resume.has_value()) {
    policy = std::move(resume->policy);
    ref = std::move(resume->ref_policy);
    opt.velocity = std::move(resume->velocity);
    start_epoch = resume->next_epoch;
  }

  TrainingLog log;
  int step_counter = static_cast<int>(start_epoch * steps_per_epoch);
  for (int epoch = start_epoch; epoch < total_epochs; ++epoch) {
    const Stage stage = epoch < schedule.stage1_epochs ? Stage::stage1 : Stage::stage2;
    const GrpoConfig cfg = base_cfg.for_stage(stage);
    if (epoch == 0 || epoch == schedule.stage1_epochs) ref = policy;  // stage-start snapshot

    const auto perm = epoch_permutation(dataset.size(), seed, epoch);
    const std::size_t epoch_first_step = log.steps.size();
    for (std::size_t start = 0, batch_index = 0; start < perm.size();
         start += options.batch_size, ++batch_index) {
      const std::size_t end = std::min(perm.size(), start + options.batch_size);
      std::vector<ToyItem> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(dataset[perm[k]]);

      const Policy old_policy = policy;  // refresh once per rollout batch
      const std::uint64_t step_seed = derive_seed(
          seed, {kRolloutTag, static_cast<std::uint64_t>(epoch), batch_index});
      StepReport rep = train_step(batch, policy, old_policy, ref, cfg, reward, opt, step_seed,
                                  step_counter++, options.threads);
      if (step_sink) step_sink(rep);
      log.steps.push_back(rep);
    }

    EpochReport er = aggregate_epoch(
        epoch, stage, std::span(log.steps).subspan(epoch_first_step));
    if (epoch_sink) epoch_sink(er);
    log.epochs.push_back(er);

    if (checkpoint_sink) {
      TrainingCheckpoint ckpt;
      ckpt.config_hash = config_hash;
      ckpt.seed = seed;
      ckpt.next_epoch = epoch + 1;
      ckpt.rng_state = "root=" + std::to_string(seed) + ";next_epoch=" + std::to_string(epoch + 1);
      ckpt.policy = policy;
      ckpt.ref_policy = ref;
      ckpt.velocity = opt.velocity;
      checkpoint_sink(ckpt);  // write failures propagate and abort the run
    }
  }
  return log;
}

double mean_group_reward(const Policy& policy, std::span<const ToyItem> items,
                         const GrpoConfig& cfg, const RewardSpec& reward, std::uint64_t seed,
                         int threads) {
  if (items.empty()) throw data_error("mean_group_reward: empty item set");
  std::vector<double> sums(items.size(), 0.0);
  parallel_for(items.size(), threads, [&](std::size_t i) {
    double s = 0.0;
    for (int j = 0; j < cfg.group_size; ++j) {
      Rng rng(derive_seed(seed, {kEvalTag, i, static_cast<std::uint64_t>(j)}));
      const Trajectory traj = sample(policy, items[i], policy.shape.prefix_len, rng);
      s += reward_trajectory(traj, items[i], reward);
    }
    sums[i] = s;
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / (static_cast<double>(items.size()) * cfg.group_size);
}

std::string step_report_to_jsonl(const StepReport& report) {
  nlohmann::ordered_json j{{"step", report.step},
                           {"stage", to_string(report.stage)},
                           {"mean_reward", report.mean_reward},
                           {"retained_fraction", report.retained_fraction},
                           {"gated_in_fraction", report.gated_in_fraction},
                           {"mean_entropy", report.mean_entropy},
                           {"loss", report.loss}};
  return j.dump();
}

std::string epoch_report_to_jsonl(const EpochReport& report) {
  nlohmann::ordered_json j{{"step", report.epoch},
                           {"stage", to_string(report.stage)},
                           {"mean_reward", report.mean_reward},
                           {"retained_fraction", report.retained_fraction},
                           {"gated_in_fraction", report.gated_in_fraction},
                           {"mean_entropy", report.mean_entropy},
                           {"loss", report.loss}};
  return j.dump();
}

std::string checkpoint_to_json(const TrainingCheckpoint& ckpt) {
  nlohmann::ordered_json j{{"version", ckpt.version},
                           {"config_hash", ckpt.config_hash},
                           {"seed", ckpt.seed},
                           {"next_epoch", ckpt.next_epoch},
                           {"rng_state", ckpt.rng_state},
                           {"policy", ckpt.policy},
                           {"ref_policy", ckpt.ref_policy},
                           {"velocity", ckpt.velocity}};
  return j.dump(2) + "\n";
}

TrainingCheckpoint checkpoint_from_json(const std::string& text) {
  TrainingCheckpoint ckpt;
  try {
    const auto j = nlohmann::json::parse(text);
    const int version = j.at("version").get<int>();
    if (version != 1)
      throw data_error("checkpoint: unsupported version " + std::to_string(version));
    j.at("config_hash").get_to(ckpt.config_hash);
    j.at("seed").get_to(ckpt.seed);
    j.at("next_epoch").get_to(ckpt.next_epoch);
    j.at("rng_state").get_to(ckpt.rng_state);
    j.at("policy").get_to(ckpt.policy);
    j.at("ref_policy").get_to(ckpt.ref_policy);
    j.at("velocity").get_to(ckpt.velocity);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  return ckpt;
}

}  // namespace scoretune
