#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "scoretune/types.hpp"

namespace scoretune {

struct Candidate {
  std::string prompt_id;
  std::string artifact;  // opaque handle from the generator
  std::map<TaskKind, double> scores;
  double combined = 0.0;
  int generation_round = 0;
  int index = 0;
  bool failed = false;
};

enum class CombinerMode { mean, weighted, single };

const char* to_string(CombinerMode mode);
CombinerMode combiner_mode_from_string(const std::string& name);

struct Combiner {
  CombinerMode mode = CombinerMode::mean;
  double w_aes = 1.0;
  double w_tech = 1.0;
  TaskKind task = TaskKind::technical;  // single mode

  bool operator==(const Combiner&) const = default;
  void validate() const;
};

/// mean -> arithmetic mean of the candidate's scores; weighted -> weighted
/// aesthetic/technical average; single -> passthrough of one task's score.
/// Missing required scores are a contract error.
double combine_scores(const std::map<TaskKind, double>& scores, const Combiner& combiner);

struct TtsConfig {
  int n_candidates = 20;
  Combiner combiner;
  int reflection_rounds = 20;
  std::vector<TaskKind> tasks = {TaskKind::aesthetic, TaskKind::technical};
  int parallelism = 1;    // scoring fan-out; generation stays sequential
  int max_retries = 2;
  int backoff_base_ms = 0;
  int failure_budget = 3;  // consecutive failed reflection rounds before early stop

  bool operator==(const TtsConfig&) const = default;
  void validate() const;
};

// Transport-agnostic wire contract. Failures surface as exceptions; the
// harness retries per config before marking a candidate failed.
struct GeneratorClient {
  virtual ~GeneratorClient() = default;
  virtual std::string generate(const std::string& prompt, const std::string& feedback) = 0;
};

struct ScorerClient {
  virtual ~ScorerClient() = default;
  virtual double score(const std::string& artifact, TaskKind task) = 0;
};

using FeedbackBuilder = std::function<std::string(const Candidate& best)>;

std::string default_feedback(const Candidate& best);

struct TranscriptEntry {
  std::string prompt_id;
  int round = 0;
  int candidate_index = 0;
  std::map<TaskKind, double> scores;
  double combined = 0.0;
  bool chosen = false;
};

std::string transcript_entry_to_jsonl(const TranscriptEntry& entry);

using TranscriptSink = std::function<void(const TranscriptEntry&)>;

struct SelectionResult {
  Candidate winner;
  std::vector<Candidate> all;
};

/// Generates N candidates, scores each configured task, and returns the argmax
/// of the combined score (ties: lowest candidate index). Candidates that still
/// fail after retries are excluded; all failing is an error.
SelectionResult best_of_n(const std::string& prompt_id, const std::string& prompt,
                          GeneratorClient& generator, ScorerClient& scorer, const TtsConfig& cfg,
                          const TranscriptSink& transcript = {});

/// Iterative reflection: each round builds feedback from the running best,
/// requests a refined generation and rescores it. The running best is monotone
/// non-decreasing; failed rounds are skipped and a budget of consecutive
/// failures stops early with the best so far.
Candidate reflect_loop(const std::string& prompt_id, const std::string& prompt,
                       const Candidate& seed_winner, GeneratorClient& generator,
                       ScorerClient& scorer, const TtsConfig& cfg,
                       const FeedbackBuilder& feedback_builder = {},
                       const TranscriptSink& transcript = {});

// Deterministic in-process stand-ins for the generator/scorer wire contract.
// Artifact handles carry the per-task latent scores; feedback mentioning
// "best=<x>" pulls fresh latents toward (and slightly past) that level.
class SimGenerator : public GeneratorClient {
 public:
  explicit SimGenerator(std::uint64_t seed, double fail_prob = 0.0);
  std::string generate(const std::string& prompt, const std::string& feedback) override;

 private:
  std::uint64_t seed_;
  double fail_prob_;
  std::mutex mutex_;
  std::map<std::string, int> ordinals_;
};

class SimScorer : public ScorerClient {
 public:
  explicit SimScorer(double fail_prob = 0.0, std::uint64_t seed = 0);
  double score(const std::string& artifact, TaskKind task) override;

 private:
  double fail_prob_;
  std::uint64_t seed_;
};

}  // namespace scoretune
