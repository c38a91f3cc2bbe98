#pragma once

#include "scoretune/types.hpp"

namespace scoretune {

enum class RewardKind { gaussian, threshold };

const char* to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& name);

struct RewardSpec {
  RewardKind kind = RewardKind::gaussian;
  double sigma = 0.8;           // Gaussian decay width, score units
  double margin = 0.3;          // threshold half-width, score units
  double format_penalty = 0.0;  // reward for unparseable responses, in [-1, 0]

  bool operator==(const RewardSpec&) const = default;
  void validate() const;  // throws config_error
};

/// R = exp(-(pred - truth)^2 / (2 sigma^2)); 1 iff pred == truth.
double gaussian_reward(double pred, double truth, double sigma);

/// 1 if |pred - truth| < margin, else 0. Boundary is exclusive.
double threshold_reward(double pred, double truth, double margin);

/// Dispatch on spec.kind for a raw predicted score.
double reward_score(double pred, double truth, const RewardSpec& spec);

/// Reward for a sampled trajectory; unparseable responses earn the configured
/// format penalty rather than an error.
double reward_trajectory(const Trajectory& traj, const ScoreItem& item, const RewardSpec& spec);

}  // namespace scoretune
