#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scoretune/rng.hpp"
#include "scoretune/types.hpp"

namespace scoretune {

// Token space: R reason symbols (ids 0..R-1) followed by S score symbols
// (ids R..R+S-1) mapped bijectively onto a uniform score grid. The score
// token doubles as the terminator: a trajectory is reason tokens followed by
// exactly one score token, which ends it.
struct Vocabulary {
  int reason_tokens = 12;
  double score_min = 1.0;
  double score_max = 5.0;
  double score_step = 0.1;

  bool operator==(const Vocabulary&) const = default;

  int score_token_count() const;
  int total_tokens() const { return reason_tokens + score_token_count(); }
  bool is_score_token(int token) const;
  double decode_score(int token) const;  // contract error on non-score tokens
  int encode_score(double score) const;  // nearest grid token, clamped to range
  void validate() const;
};

enum class PolicyArch { tabular, mlp };

const char* to_string(PolicyArch arch);
PolicyArch policy_arch_from_string(const std::string& name);

// Architecture descriptor. prefix_len is the number of reason steps a
// trajectory carries (each step owns a logit-bias row).
struct PolicyShape {
  PolicyArch arch = PolicyArch::mlp;
  int feature_dim = 4;
  int prefix_len = 6;
  std::vector<int> hidden = {16};  // mlp only

  bool operator==(const PolicyShape&) const = default;
  void validate() const;
};

std::size_t param_count(const PolicyShape& shape, const Vocabulary& vocab);

// Immutable-by-convention value object: sampling never mutates a policy and
// updates produce new parameter vectors.
struct Policy {
  PolicyShape shape;
  Vocabulary vocab;
  std::vector<double> params;

  bool operator==(const Policy&) const = default;

  static Policy zeros(PolicyShape shape, Vocabulary vocab);
  static Policy random_init(PolicyShape shape, Vocabulary vocab, std::uint64_t seed,
                            double scale = 0.1);
};

/// Samples prefix_len reason tokens then one score token. Records per-token
/// log-probabilities (into both logp_old and logp_new) and entropies under the
/// sampling parameters; parsed_score is the decoded score token.
Trajectory sample(const Policy& policy, const ToyItem& item, int prefix_len, Rng& rng);

/// Exact conditional log-probabilities and categorical entropies for an
/// existing token sequence. Re-scoring a sampled trajectory under the sampling
/// parameters reproduces its recorded values bitwise.
std::pair<std::vector<double>, std::vector<double>> logprob_and_entropy(
    const Policy& policy, const ToyItem& item, std::span<const int> tokens);

/// Gradient of sum_t logp[t] with respect to the flat parameter vector.
std::vector<double> grad_logprob(const Policy& policy, const ToyItem& item,
                                 std::span<const int> tokens);

/// Accumulates the gradient of sum_t weights[t] * logp[t] into grad (+=).
void accumulate_grad_logprob(const Policy& policy, const ToyItem& item,
                             std::span<const int> tokens, std::span<const double> weights,
                             std::span<double> grad);

/// Probability-weighted mean of the score grid given item features; the
/// deterministic point prediction used for evaluation.
double expected_score(const Policy& policy, const ToyItem& item);

struct SftExample {
  ToyItem item;
  std::vector<int> tokens;
};

struct SftResult {
  Policy policy;
  std::vector<double> epoch_loss;  // mean token NLL after each epoch's update
};

/// Maximum-likelihood fit by full-batch gradient ascent on the mean token
/// log-likelihood.
SftResult sft_fit(Policy init, std::span<const SftExample> data, int epochs, double lr,
                  int threads = 1);

struct ToyDatasetSpec {
  int count = 200;
  int feature_dim = 4;
  std::uint64_t seed = 0;
};

/// Seeded toy items: features ~ N(0, I), truth = affine-sigmoid of a fixed
/// random projection mapped onto the score range, tasks assigned round-robin.
std::vector<ToyItem> make_toy_dataset(const ToyDatasetSpec& spec, const Vocabulary& vocab);

}  // namespace scoretune
