#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "scoretune/errors.hpp"
#include "scoretune/rng.hpp"
#include "scoretune/tts.hpp"

using namespace scoretune;

namespace {

// generator whose artifacts carry an explicit target deviation; candidates,
// in call order, decode a fixed latent table
class TableGenerator : public GeneratorClient {
 public:
  explicit TableGenerator(std::vector<double> values) : values_(std::move(values)) {}
  std::string generate(const std::string&, const std::string&) override {
    const double v = values_.at(next_ % values_.size());
    ++next_;
    return "v=" + std::to_string(v);
  }

 private:
  std::vector<double> values_;
  std::size_t next_ = 0;
};

// scorer: -|decoded - target|, identical for every task
class DeviationScorer : public ScorerClient {
 public:
  explicit DeviationScorer(double target) : target_(target) {}
  double score(const std::string& artifact, TaskKind) override {
    const double v = std::strtod(artifact.c_str() + 2, nullptr);
    return -std::abs(v - target_);
  }

 private:
  double target_;
};

TtsConfig small_cfg(int n, int rounds = 0) {
  TtsConfig cfg;
  cfg.n_candidates = n;
  cfg.reflection_rounds = rounds;
  cfg.backoff_base_ms = 0;
  return cfg;
}

}  // namespace

TEST_CASE("combine_scores modes") {
  const std::map<TaskKind, double> scores{{TaskKind::aesthetic, 4.0}, {TaskKind::technical, 3.0}};
  Combiner mean;
  CHECK(combine_scores(scores, mean) == 3.5);

  Combiner aes_only;
  aes_only.mode = CombinerMode::weighted;
  aes_only.w_aes = 1.0;
  aes_only.w_tech = 0.0;
  CHECK(combine_scores(scores, aes_only) == 4.0);

  Combiner weighted;
  weighted.mode = CombinerMode::weighted;
  weighted.w_aes = 3.0;
  weighted.w_tech = 1.0;
  CHECK(combine_scores(scores, weighted) == doctest::Approx(3.75));

  Combiner single;
  single.mode = CombinerMode::single;
  single.task = TaskKind::technical;
  CHECK(combine_scores({{TaskKind::technical, 2.5}}, single) == 2.5);

  CHECK_THROWS_AS(combine_scores({{TaskKind::alignment, 1.0}}, single), std::invalid_argument);
  CHECK_THROWS_AS(combine_scores({}, mean), std::invalid_argument);
  Combiner invalid;
  invalid.mode = CombinerMode::weighted;
  invalid.w_aes = 0.0;
  invalid.w_tech = 0.0;
  CHECK_THROWS_AS(combine_scores(scores, invalid), config_error);
}

TEST_CASE("best_of_n with N=1 returns the sole candidate") {
  TableGenerator gen({2.0});
  DeviationScorer scorer(3.0);
  const SelectionResult result = best_of_n("p", "prompt", gen, scorer, small_cfg(1));
  CHECK(result.winner.index == 0);
  CHECK(result.all.size() == 1);
  CHECK(result.winner.combined == doctest::Approx(-1.0));
}

TEST_CASE("best_of_n winner matches an exhaustive scan of the deviation mock") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(19));
    std::vector<double> values(n);
    for (double& v : values) v = rng.uniform(0.0, 5.0);
    const double target = rng.uniform(0.0, 5.0);

    TableGenerator gen(values);
    DeviationScorer scorer(target);
    const SelectionResult result = best_of_n("p", "prompt", gen, scorer, small_cfg(n));

    int expected = 0;
    for (int i = 1; i < n; ++i)
      if (-std::abs(values[i] - target) > -std::abs(values[expected] - target)) expected = i;
    CHECK(result.winner.index == expected);
  }
}

TEST_CASE("best_of_n breaks ties toward the lower index") {
  TableGenerator gen({1.0, 3.0, 3.0, 2.0});  // candidates 1 and 2 tie at score 0
  DeviationScorer scorer(3.0);
  const SelectionResult result = best_of_n("p", "prompt", gen, scorer, small_cfg(4));
  CHECK(result.winner.index == 1);
}

TEST_CASE("failed candidates are excluded; all-failed raises") {
  struct FlakyGen : GeneratorClient {
    int calls = 0;
    std::string generate(const std::string&, const std::string&) override {
      ++calls;
      if (calls % 2 == 1) throw std::runtime_error("boom");
      return "v=" + std::to_string(static_cast<double>(calls));
    }
  };
  // zero retries: odd calls fail outright
  TtsConfig cfg = small_cfg(4);
  cfg.max_retries = 0;
  FlakyGen gen;
  DeviationScorer scorer(100.0);  // higher decoded value wins
  const SelectionResult result = best_of_n("p", "prompt", gen, scorer, cfg);
  int failed = 0;
  for (const auto& cand : result.all) failed += cand.failed;
  CHECK(failed == 2);
  CHECK(result.winner.index == 3);  // call 4 decodes highest

  struct DeadGen : GeneratorClient {
    std::string generate(const std::string&, const std::string&) override {
      throw std::runtime_error("down");
    }
  };
  DeadGen dead;
  CHECK_THROWS_AS(best_of_n("p", "prompt", dead, scorer, cfg), data_error);
}

TEST_CASE("retries recover transient generator failures") {
  struct OnceFlaky : GeneratorClient {
    std::atomic<int> attempts{0};
    std::string generate(const std::string&, const std::string&) override {
      if (attempts++ == 0) throw std::runtime_error("first call dies");
      return "v=1.0";
    }
  };
  OnceFlaky gen;
  DeviationScorer scorer(1.0);
  TtsConfig cfg = small_cfg(1);
  cfg.max_retries = 2;
  const SelectionResult result = best_of_n("p", "prompt", gen, scorer, cfg);
  CHECK_FALSE(result.winner.failed);
  CHECK(gen.attempts == 2);
}

TEST_CASE("reflect_loop with zero rounds returns the seed unchanged") {
  TableGenerator gen({2.0});
  DeviationScorer scorer(2.0);
  const SelectionResult seed = best_of_n("p", "prompt", gen, scorer, small_cfg(1));
  const Candidate out = reflect_loop("p", "prompt", seed.winner, gen, scorer, small_cfg(1, 0));
  CHECK(out.combined == seed.winner.combined);
  CHECK(out.artifact == seed.winner.artifact);
}

TEST_CASE("reflect_loop follows closed-form fixed-delta improvement") {
  // generator that improves the decoded value by delta per feedback round,
  // capped at the scorer maximum of 5
  struct ImprovingGen : GeneratorClient {
    double current = 1.0;
    double delta = 0.5;
    std::string generate(const std::string&, const std::string& feedback) override {
      if (!feedback.empty()) current = std::min(5.0, current + delta);
      return "v=" + std::to_string(current);
    }
  };
  struct ValueScorer : ScorerClient {
    double score(const std::string& artifact, TaskKind) override {
      return std::strtod(artifact.c_str() + 2, nullptr);
    }
  };
  ImprovingGen gen;
  ValueScorer scorer;
  const TtsConfig cfg = small_cfg(1, 20);
  const SelectionResult seed = best_of_n("p", "prompt", gen, scorer, cfg);
  CHECK(seed.winner.combined == doctest::Approx(1.0));
  const Candidate out = reflect_loop("p", "prompt", seed.winner, gen, scorer, cfg);
  // seed 1.0 + 20 rounds * 0.5 capped at 5
  CHECK(out.combined == doctest::Approx(5.0));
}

TEST_CASE("reflect_loop never degrades below the seed under an adversarial mock") {
  struct WorseningGen : GeneratorClient {
    double current = 4.0;
    std::string generate(const std::string&, const std::string& feedback) override {
      if (!feedback.empty()) current = std::max(0.0, current - 0.7);
      return "v=" + std::to_string(current);
    }
  };
  struct ValueScorer : ScorerClient {
    double score(const std::string& artifact, TaskKind) override {
      return std::strtod(artifact.c_str() + 2, nullptr);
    }
  };
  WorseningGen gen;
  ValueScorer scorer;
  const TtsConfig cfg = small_cfg(1, 10);
  const SelectionResult seed = best_of_n("p", "prompt", gen, scorer, cfg);
  const Candidate out = reflect_loop("p", "prompt", seed.winner, gen, scorer, cfg);
  CHECK(out.combined >= seed.winner.combined);
  CHECK(out.combined == doctest::Approx(4.0));
}

TEST_CASE("reflect_loop skips failed rounds and stops after the failure budget") {
  struct CountingDeadGen : GeneratorClient {
    int calls = 0;
    std::string generate(const std::string&, const std::string& feedback) override {
      ++calls;
      if (!feedback.empty()) throw std::runtime_error("reflection backend down");
      return "v=2.0";
    }
  };
  struct ValueScorer : ScorerClient {
    double score(const std::string& artifact, TaskKind) override {
      return std::strtod(artifact.c_str() + 2, nullptr);
    }
  };
  CountingDeadGen gen;
  ValueScorer scorer;
  TtsConfig cfg = small_cfg(1, 50);
  cfg.max_retries = 0;
  cfg.failure_budget = 3;
  const SelectionResult seed = best_of_n("p", "prompt", gen, scorer, cfg);
  const Candidate out = reflect_loop("p", "prompt", seed.winner, gen, scorer, cfg);
  CHECK(out.combined == seed.winner.combined);
  CHECK(gen.calls == 1 + 3);  // seed + three consecutive failures, then early stop
}

TEST_CASE("sim clients give byte-identical transcripts across runs") {
  auto run_once = [](int parallelism) {
    SimGenerator gen(2024);
    SimScorer scorer;
    TtsConfig cfg;
    cfg.n_candidates = 8;
    cfg.reflection_rounds = 5;
    cfg.parallelism = parallelism;
    std::string transcript;
    const TranscriptSink sink = [&](const TranscriptEntry& e) {
      transcript += transcript_entry_to_jsonl(e) + "\n";
    };
    const SelectionResult seed = best_of_n("p0", "a quiet harbor", gen, scorer, cfg, sink);
    const Candidate out = reflect_loop("p0", "a quiet harbor", seed.winner, gen, scorer, cfg, {},
                                       sink);
    return transcript + "final=" + std::to_string(out.combined);
  };
  const std::string a = run_once(1);
  const std::string b = run_once(1);
  const std::string c = run_once(4);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(a.find("\"chosen\":true") != std::string::npos);
}

TEST_CASE("sim reflection tends upward and the winner improves over rounds") {
  SimGenerator gen(77);
  SimScorer scorer;
  TtsConfig cfg;
  cfg.n_candidates = 6;
  cfg.reflection_rounds = 12;
  const SelectionResult seed = best_of_n("p1", "mountain dawn", gen, scorer, cfg);
  const Candidate out = reflect_loop("p1", "mountain dawn", seed.winner, gen, scorer, cfg);
  CHECK(out.combined >= seed.winner.combined);
}

TEST_CASE("tts config validation") {
  TtsConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.n_candidates = 0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = TtsConfig{};
  cfg.tasks.clear();
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = TtsConfig{};
  cfg.failure_budget = 0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  CHECK_THROWS_AS(combiner_mode_from_string("max"), config_error);
}
