#pragma once

#include <nlohmann/json.hpp>

#include "scoretune/dataset.hpp"
#include "scoretune/errors.hpp"
#include "scoretune/grpo.hpp"
#include "scoretune/policy.hpp"
#include "scoretune/reward.hpp"
#include "scoretune/tts.hpp"

// ADL JSON conversions shared by the config file, checkpoints and corpus
// records. Defined as templates so both json and ordered_json work.

namespace scoretune {

template <typename J>
void to_json(J& j, const RewardSpec& spec) {
  j = J{{"kind", to_string(spec.kind)},
        {"sigma", spec.sigma},
        {"margin", spec.margin},
        {"format_penalty", spec.format_penalty}};
}

template <typename J>
void from_json(const J& j, RewardSpec& spec) {
  spec.kind = reward_kind_from_string(j.at("kind").template get<std::string>());
  j.at("sigma").get_to(spec.sigma);
  j.at("margin").get_to(spec.margin);
  j.at("format_penalty").get_to(spec.format_penalty);
}

template <typename J>
void to_json(J& j, const Vocabulary& vocab) {
  j = J{{"reason_tokens", vocab.reason_tokens},
        {"score_min", vocab.score_min},
        {"score_max", vocab.score_max},
        {"score_step", vocab.score_step}};
}

template <typename J>
void from_json(const J& j, Vocabulary& vocab) {
  j.at("reason_tokens").get_to(vocab.reason_tokens);
  j.at("score_min").get_to(vocab.score_min);
  j.at("score_max").get_to(vocab.score_max);
  j.at("score_step").get_to(vocab.score_step);
}

template <typename J>
void to_json(J& j, const PolicyShape& shape) {
  j = J{{"arch", to_string(shape.arch)},
        {"feature_dim", shape.feature_dim},
        {"prefix_len", shape.prefix_len},
        {"hidden", shape.hidden}};
}

template <typename J>
void from_json(const J& j, PolicyShape& shape) {
  shape.arch = policy_arch_from_string(j.at("arch").template get<std::string>());
  j.at("feature_dim").get_to(shape.feature_dim);
  j.at("prefix_len").get_to(shape.prefix_len);
  j.at("hidden").get_to(shape.hidden);
}

template <typename J>
void to_json(J& j, const Policy& policy) {
  j = J{{"shape", policy.shape}, {"vocab", policy.vocab}, {"params", policy.params}};
}

template <typename J>
void from_json(const J& j, Policy& policy) {
  j.at("shape").get_to(policy.shape);
  j.at("vocab").get_to(policy.vocab);
  j.at("params").get_to(policy.params);
  if (policy.params.size() != param_count(policy.shape, policy.vocab))
    throw data_error("policy: parameter vector does not match architecture descriptor");
}

template <typename J>
void to_json(J& j, const EntropyGate& gate) {
  j = J{{"mode", to_string(gate.mode)}, {"rho", gate.rho}, {"tau_h", gate.tau_h}};
}

template <typename J>
void from_json(const J& j, EntropyGate& gate) {
  gate.mode = gate_mode_from_string(j.at("mode").template get<std::string>());
  j.at("rho").get_to(gate.rho);
  j.at("tau_h").get_to(gate.tau_h);
}

// stage is a runtime property, not configuration; it never serializes
template <typename J>
void to_json(J& j, const GrpoConfig& cfg) {
  j = J{{"group_size", cfg.group_size},
        {"eps_low", cfg.eps_low},
        {"eps_high", cfg.eps_high},
        {"beta", cfg.beta},
        {"tau_std", cfg.tau_std},
        {"entropy_gate", cfg.entropy_gate},
        {"adv_std_normalize", cfg.adv_std_normalize}};
}

template <typename J>
void from_json(const J& j, GrpoConfig& cfg) {
  j.at("group_size").get_to(cfg.group_size);
  j.at("eps_low").get_to(cfg.eps_low);
  j.at("eps_high").get_to(cfg.eps_high);
  j.at("beta").get_to(cfg.beta);
  j.at("tau_std").get_to(cfg.tau_std);
  j.at("entropy_gate").get_to(cfg.entropy_gate);
  j.at("adv_std_normalize").get_to(cfg.adv_std_normalize);
}

template <typename J>
void to_json(J& j, const TrainSchedule& schedule) {
  j = J{{"stage1_epochs", schedule.stage1_epochs}, {"stage2_epochs", schedule.stage2_epochs}};
}

template <typename J>
void from_json(const J& j, TrainSchedule& schedule) {
  j.at("stage1_epochs").get_to(schedule.stage1_epochs);
  j.at("stage2_epochs").get_to(schedule.stage2_epochs);
}

template <typename J>
void to_json(J& j, const TrainOptions& options) {
  j = J{{"batch_size", options.batch_size},
        {"learning_rate", options.learning_rate},
        {"momentum", options.momentum},
        {"threads", options.threads}};
}

template <typename J>
void from_json(const J& j, TrainOptions& options) {
  j.at("batch_size").get_to(options.batch_size);
  j.at("learning_rate").get_to(options.learning_rate);
  j.at("momentum").get_to(options.momentum);
  j.at("threads").get_to(options.threads);
}

template <typename J>
void to_json(J& j, const RejectionPolicy& policy) {
  j = J{{"teacher_samples", policy.teacher_samples},
        {"accept_reward_min", policy.accept_reward_min},
        {"keep_limit", policy.keep_limit}};
}

template <typename J>
void from_json(const J& j, RejectionPolicy& policy) {
  j.at("teacher_samples").get_to(policy.teacher_samples);
  j.at("accept_reward_min").get_to(policy.accept_reward_min);
  j.at("keep_limit").get_to(policy.keep_limit);
}

template <typename J>
void to_json(J& j, const SimulatedTeacher& teacher) {
  j = J{{"noise_sigma", teacher.noise_sigma},
        {"bias_technical", teacher.bias_technical},
        {"bias_aesthetic", teacher.bias_aesthetic},
        {"bias_alignment", teacher.bias_alignment},
        {"fail_prob", teacher.fail_prob},
        {"reason_len", teacher.reason_len}};
}

template <typename J>
void from_json(const J& j, SimulatedTeacher& teacher) {
  j.at("noise_sigma").get_to(teacher.noise_sigma);
  j.at("bias_technical").get_to(teacher.bias_technical);
  j.at("bias_aesthetic").get_to(teacher.bias_aesthetic);
  j.at("bias_alignment").get_to(teacher.bias_alignment);
  j.at("fail_prob").get_to(teacher.fail_prob);
  j.at("reason_len").get_to(teacher.reason_len);
}

template <typename J>
void to_json(J& j, const Combiner& combiner) {
  j = J{{"mode", to_string(combiner.mode)},
        {"w_aes", combiner.w_aes},
        {"w_tech", combiner.w_tech},
        {"task", to_string(combiner.task)}};
}

template <typename J>
void from_json(const J& j, Combiner& combiner) {
  combiner.mode = combiner_mode_from_string(j.at("mode").template get<std::string>());
  j.at("w_aes").get_to(combiner.w_aes);
  j.at("w_tech").get_to(combiner.w_tech);
  combiner.task = task_kind_from_string(j.at("task").template get<std::string>());
}

template <typename J>
void to_json(J& j, const TtsConfig& cfg) {
  std::vector<std::string> tasks;
  for (TaskKind t : cfg.tasks) tasks.emplace_back(to_string(t));
  j = J{{"n_candidates", cfg.n_candidates},
        {"combiner", cfg.combiner},
        {"reflection_rounds", cfg.reflection_rounds},
        {"tasks", tasks},
        {"parallelism", cfg.parallelism},
        {"max_retries", cfg.max_retries},
        {"backoff_base_ms", cfg.backoff_base_ms},
        {"failure_budget", cfg.failure_budget}};
}

template <typename J>
void from_json(const J& j, TtsConfig& cfg) {
  j.at("n_candidates").get_to(cfg.n_candidates);
  j.at("combiner").get_to(cfg.combiner);
  j.at("reflection_rounds").get_to(cfg.reflection_rounds);
  cfg.tasks.clear();
  for (const auto& name : j.at("tasks"))
    cfg.tasks.push_back(task_kind_from_string(name.template get<std::string>()));
  j.at("parallelism").get_to(cfg.parallelism);
  j.at("max_retries").get_to(cfg.max_retries);
  j.at("backoff_base_ms").get_to(cfg.backoff_base_ms);
  j.at("failure_budget").get_to(cfg.failure_budget);
}

}  // namespace scoretune
