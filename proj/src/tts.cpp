#include "scoretune/tts.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "scoretune/errors.hpp"
#include "scoretune/parallel.hpp"
#include "scoretune/rng.hpp"

namespace scoretune {

const char* to_string(CombinerMode mode) {
  switch (mode) {
    case CombinerMode::mean: return "mean";
    case CombinerMode::weighted: return "weighted";
    case CombinerMode::single: return "single";
  }
  return "mean";
}

CombinerMode combiner_mode_from_string(const std::string& name) {
  if (name == "mean") return CombinerMode::mean;
  if (name == "weighted") return CombinerMode::weighted;
  if (name == "single") return CombinerMode::single;
  throw config_error("unknown combiner mode '" + name + "' (expected mean|weighted|single)");
}

void Combiner::validate() const {
  if (mode == CombinerMode::weighted) {
    if (w_aes < 0.0 || w_tech < 0.0)
      throw config_error("tts.combiner weights must be non-negative");
    if (!(w_aes + w_tech > 0.0)) throw config_error("tts.combiner weights must sum above 0");
  }
}

void TtsConfig::validate() const {
  if (n_candidates < 1) throw config_error("tts.n_candidates must be >= 1");
  if (reflection_rounds < 0) throw config_error("tts.reflection_rounds must be >= 0");
  if (tasks.empty()) throw config_error("tts.tasks must be non-empty");
  if (parallelism < 0) throw config_error("tts.parallelism must be >= 0");
  if (max_retries < 0) throw config_error("tts.max_retries must be >= 0");
  if (backoff_base_ms < 0) throw config_error("tts.backoff_base_ms must be >= 0");
  if (failure_budget < 1) throw config_error("tts.failure_budget must be >= 1");
  combiner.validate();
}

double combine_scores(const std::map<TaskKind, double>& scores, const Combiner& combiner) {
  combiner.validate();
  auto require = [&](TaskKind task) {
    const auto it = scores.find(task);
    if (it == scores.end())
      throw std::invalid_argument(std::string("combine_scores: missing required score '") +
                                  to_string(task) + "'");
    return it->second;
  };
  switch (combiner.mode) {
    case CombinerMode::mean: {
      if (scores.empty()) throw std::invalid_argument("combine_scores: no scores present");
      double sum = 0.0;
      for (const auto& [task, value] : scores) sum += value;
      return sum / static_cast<double>(scores.size());
    }
    case CombinerMode::weighted: {
      double num = 0.0;
      if (combiner.w_aes > 0.0) num += combiner.w_aes * require(TaskKind::aesthetic);
      if (combiner.w_tech > 0.0) num += combiner.w_tech * require(TaskKind::technical);
      return num / (combiner.w_aes + combiner.w_tech);
    }
    case CombinerMode::single: return require(combiner.task);
  }
  throw std::invalid_argument("combine_scores: unknown combiner mode");
}

namespace {

template <typename F>
auto with_retry(F&& call, int max_retries, int backoff_base_ms) {
  for (int attempt = 0;; ++attempt) {
    try {
      return call();
    } catch (const std::exception&) {
      if (attempt >= max_retries) throw;
      if (backoff_base_ms > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_base_ms << attempt));
    }
  }
}

void score_candidate(Candidate& cand, ScorerClient& scorer, const TtsConfig& cfg) {
  try {
    for (TaskKind task : cfg.tasks) {
      cand.scores[task] = with_retry([&] { return scorer.score(cand.artifact, task); },
                                     cfg.max_retries, cfg.backoff_base_ms);
    }
    cand.combined = combine_scores(cand.scores, cfg.combiner);
  } catch (const std::exception&) {
    cand.failed = true;
    cand.scores.clear();
  }
}

}  // namespace

SelectionResult best_of_n(const std::string& prompt_id, const std::string& prompt,
                          GeneratorClient& generator, ScorerClient& scorer, const TtsConfig& cfg,
                          const TranscriptSink& transcript) {
  cfg.validate();
  std::vector<Candidate> all(cfg.n_candidates);
  // generation stays sequential so stateful generators remain reproducible
  for (int i = 0; i < cfg.n_candidates; ++i) {
    Candidate& cand = all[i];
    cand.prompt_id = prompt_id;
    cand.generation_round = 0;
    cand.index = i;
    try {
      cand.artifact = with_retry([&] { return generator.generate(prompt, ""); }, cfg.max_retries,
                                 cfg.backoff_base_ms);
    } catch (const std::exception&) {
      cand.failed = true;
    }
  }
  parallel_for(all.size(), cfg.parallelism, [&](std::size_t i) {
    if (!all[i].failed) score_candidate(all[i], scorer, cfg);
  });

  int best = -1;
  for (int i = 0; i < cfg.n_candidates; ++i) {
    if (all[i].failed) continue;
    if (best < 0 || all[i].combined > all[best].combined) best = i;  // ties keep lowest index
  }
  if (best < 0) throw data_error("best_of_n: all candidates failed for prompt '" + prompt_id + "'");

  if (transcript) {
    for (const auto& cand : all) {
      if (cand.failed) continue;
      transcript(TranscriptEntry{prompt_id, 0, cand.index, cand.scores, cand.combined,
                                 cand.index == best});
    }
  }
  return SelectionResult{all[best], std::move(all)};
}

std::string default_feedback(const Candidate& best) {
  char head[64];
  std::snprintf(head, sizeof(head), "best=%.17g", best.combined);
  std::string feedback = head;
  TaskKind weakest = TaskKind::technical;
  double weakest_score = std::numeric_limits<double>::infinity();
  for (const auto& [task, value] : best.scores) {
    char part[80];
    std::snprintf(part, sizeof(part), "; %s=%.17g", to_string(task), value);
    feedback += part;
    if (value < weakest_score) {
      weakest_score = value;
      weakest = task;
    }
  }
  if (!best.scores.empty()) feedback += std::string("; improve ") + to_string(weakest);
  return feedback;
}

Candidate reflect_loop(const std::string& prompt_id, const std::string& prompt,
                       const Candidate& seed_winner, GeneratorClient& generator,
                       ScorerClient& scorer, const TtsConfig& cfg,
                       const FeedbackBuilder& feedback_builder, const TranscriptSink& transcript) {
  cfg.validate();
  const FeedbackBuilder build = feedback_builder ? feedback_builder : default_feedback;
  Candidate best = seed_winner;
  int consecutive_failures = 0;
  for (int round = 1; round <= cfg.reflection_rounds; ++round) {
    try {
      const std::string feedback = build(best);
      Candidate cand;
      cand.prompt_id = prompt_id;
      cand.generation_round = round;
      cand.index = 0;
      cand.artifact = with_retry([&] { return generator.generate(prompt, feedback); },
                                 cfg.max_retries, cfg.backoff_base_ms);
      for (TaskKind task : cfg.tasks)
        cand.scores[task] = with_retry([&] { return scorer.score(cand.artifact, task); },
                                       cfg.max_retries, cfg.backoff_base_ms);
      cand.combined = combine_scores(cand.scores, cfg.combiner);
      const bool improved = cand.combined > best.combined;  // running best is monotone
      if (transcript)
        transcript(TranscriptEntry{prompt_id, round, 0, cand.scores, cand.combined, improved});
      if (improved) best = cand;
      consecutive_failures = 0;
    } catch (const std::exception&) {
      if (++consecutive_failures >= cfg.failure_budget) break;  // keep best so far
    }
  }
  return best;
}

std::string transcript_entry_to_jsonl(const TranscriptEntry& entry) {
  nlohmann::ordered_json scores = nlohmann::ordered_json::object();
  for (const auto& [task, value] : entry.scores) scores[to_string(task)] = value;
  nlohmann::ordered_json j{{"prompt_id", entry.prompt_id},
                           {"round", entry.round},
                           {"candidate_index", entry.candidate_index},
                           {"scores", scores},
                           {"combined", entry.combined},
                           {"chosen", entry.chosen}};
  return j.dump();
}

namespace {

std::uint64_t fnv1a(const std::string& text, std::uint64_t salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ salt;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::optional<double> parse_feedback_best(const std::string& feedback) {
  const auto pos = feedback.find("best=");
  if (pos == std::string::npos) return std::nullopt;
  const double v = std::strtod(feedback.c_str() + pos + 5, nullptr);
  return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
}

}  // namespace

SimGenerator::SimGenerator(std::uint64_t seed, double fail_prob)
    : seed_(seed), fail_prob_(fail_prob) {}

std::string SimGenerator::generate(const std::string& prompt, const std::string& feedback) {
  int ordinal = 0;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    ordinal = ordinals_[prompt + "\x1f" + feedback]++;
  }
  Rng rng(derive_seed(seed_, {fnv1a(prompt, 1), fnv1a(feedback, 2),
                              static_cast<std::uint64_t>(ordinal)}));
  if (fail_prob_ > 0.0 && rng.uniform() < fail_prob_)
    throw std::runtime_error("sim generator: transient failure");

  const auto anchor = parse_feedback_best(feedback);
  double latent[3];
  for (int t = 0; t < 3; ++t) {
    if (anchor.has_value()) {
      // refinement drifts upward around the reported best, with regressions
      latent[t] = *anchor + 0.5 * rng.uniform() - 0.15;
    } else {
      latent[t] = rng.uniform(1.0, 5.0);
    }
    latent[t] = std::clamp(latent[t], 1.0, 5.0);
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "sim;tech=%.17g;aes=%.17g;align=%.17g", latent[0], latent[1],
                latent[2]);
  return buf;
}

SimScorer::SimScorer(double fail_prob, std::uint64_t seed) : fail_prob_(fail_prob), seed_(seed) {}

double SimScorer::score(const std::string& artifact, TaskKind task) {
  if (fail_prob_ > 0.0) {
    Rng rng(derive_seed(seed_, {fnv1a(artifact, 3), static_cast<std::uint64_t>(task)}));
    if (rng.uniform() < fail_prob_) throw std::runtime_error("sim scorer: transient failure");
  }
  const char* key = task == TaskKind::technical ? "tech=" : task == TaskKind::aesthetic ? "aes=" : "align=";
  const auto pos = artifact.find(key);
  if (pos == std::string::npos)
    throw data_error("sim scorer: artifact '" + artifact + "' lacks '" + key + "'");
  return std::strtod(artifact.c_str() + pos + std::string(key).size(), nullptr);
}

}  // namespace scoretune
