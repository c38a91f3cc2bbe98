#pragma once

#include <optional>
#include <string>
#include <vector>

namespace scoretune {

enum class TaskKind { technical, aesthetic, alignment };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

// One evaluable unit: an opaque content handle, the assessment task it belongs
// to, and the ground-truth score on the dataset's native scale.
struct ScoreItem {
  std::string id;
  TaskKind task = TaskKind::technical;
  double truth_score = 0.0;

  bool operator==(const ScoreItem&) const = default;
};

// Synthetic stand-in for image + prompt: a feature vector conditions the policy.
struct ToyItem : ScoreItem {
  std::vector<double> features;

  bool operator==(const ToyItem&) const = default;
};

// One sampled response. Per-token log-probabilities are kept under the current,
// old (sampling-time) and frozen reference policies; entropies are the ones
// recorded at sampling time. All per-token arrays share the token count.
struct Trajectory {
  std::string item_id;
  std::vector<int> tokens;
  std::vector<double> logp_new;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  std::vector<double> entropy;
  std::optional<double> parsed_score;

  std::size_t length() const { return tokens.size(); }
};

}  // namespace scoretune
