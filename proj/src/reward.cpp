#include "scoretune/reward.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "scoretune/errors.hpp"

namespace scoretune {

const char* to_string(RewardKind kind) {
  return kind == RewardKind::gaussian ? "gaussian" : "threshold";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "gaussian") return RewardKind::gaussian;
  if (name == "threshold") return RewardKind::threshold;
  throw config_error("unknown reward kind '" + name + "' (expected gaussian|threshold)");
}

void RewardSpec::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw config_error("reward.sigma must be a positive finite number");
  if (!(margin > 0.0) || !std::isfinite(margin))
    throw config_error("reward.margin must be a positive finite number");
  if (!(format_penalty <= 0.0) || !(format_penalty >= -1.0))
    throw config_error("reward.format_penalty must lie in [-1, 0]");
}

namespace {

void check_scores_finite(double pred, double truth, const char* where) {
  if (!std::isfinite(pred) || !std::isfinite(truth))
    throw std::domain_error(std::string(where) + ": non-finite score");
}

}  // namespace

double gaussian_reward(double pred, double truth, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw config_error("gaussian_reward: sigma must be positive, got " + std::to_string(sigma));
  check_scores_finite(pred, truth, "gaussian_reward");
  const double err = pred - truth;
  return std::exp(-(err * err) / (2.0 * sigma * sigma));
}

double threshold_reward(double pred, double truth, double margin) {
  if (!(margin > 0.0) || !std::isfinite(margin))
    throw config_error("threshold_reward: margin must be positive, got " + std::to_string(margin));
  check_scores_finite(pred, truth, "threshold_reward");
  return std::abs(pred - truth) < margin ? 1.0 : 0.0;
}

double reward_score(double pred, double truth, const RewardSpec& spec) {
  return spec.kind == RewardKind::gaussian ? gaussian_reward(pred, truth, spec.sigma)
                                           : threshold_reward(pred, truth, spec.margin);
}

double reward_trajectory(const Trajectory& traj, const ScoreItem& item, const RewardSpec& spec) {
  if (!traj.parsed_score.has_value()) return spec.format_penalty;
  return reward_score(*traj.parsed_score, item.truth_score, spec);
}

}  // namespace scoretune
