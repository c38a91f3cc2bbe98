#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scoretune/policy.hpp"
#include "scoretune/reward.hpp"
#include "scoretune/rng.hpp"
#include "scoretune/types.hpp"

namespace scoretune {

enum class Provenance { teacher, human, synthetic };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& name);

// One teacher trajectory for an item. The plan conditions generation but is
// stripped from every exported training record.
struct PlanReasonRecord {
  std::string item_id;
  TaskKind task = TaskKind::technical;
  std::string question;
  std::string plan;
  std::vector<int> reasoning_tokens;
  double final_score = 0.0;
  Provenance provenance = Provenance::teacher;

  bool operator==(const PlanReasonRecord&) const = default;
};

struct RejectionPolicy {
  int teacher_samples = 8;         // K candidates per item
  double accept_reward_min = 0.7;  // r_keep: Gaussian reward a candidate must reach
  int keep_limit = 2;              // m: exported candidates per kept item

  bool operator==(const RejectionPolicy&) const = default;
  void validate() const;
};

// Simulated teacher: score = truth + Gaussian noise + per-task bias; reasoning
// tokens drawn from a seeded stream. fail_prob injects whole-item failures.
struct SimulatedTeacher {
  double noise_sigma = 0.4;
  double bias_technical = 0.0;
  double bias_aesthetic = 0.0;
  double bias_alignment = 0.0;
  double fail_prob = 0.0;
  int reason_len = 6;

  bool operator==(const SimulatedTeacher&) const = default;
  void validate() const;
  double bias_for(TaskKind task) const;
};

std::string question_for(TaskKind task, const Vocabulary& vocab);

/// K independent plan-reason candidates for one item, or nullopt when the
/// teacher fails on the item (the item is then marked skipped).
std::optional<std::vector<PlanReasonRecord>> generate_candidates(const ToyItem& item,
                                                                 const SimulatedTeacher& teacher,
                                                                 int k, const Vocabulary& vocab,
                                                                 Rng& rng);

enum class Disposition { kept, easy_dropped, hard_dropped, skipped };

const char* to_string(Disposition d);

struct ItemOutcome {
  std::string item_id;
  Disposition disposition = Disposition::skipped;
  int candidates = 0;
  int passing = 0;
  int exported = 0;
};

struct ItemCandidates {
  ToyItem item;
  std::optional<std::vector<PlanReasonRecord>> candidates;  // nullopt: teacher failed
};

struct FilterResult {
  std::vector<PlanReasonRecord> kept;  // plan already stripped
  std::vector<ItemOutcome> ledger;
};

/// Rejective sampling: a candidate passes iff its Gaussian reward vs the item
/// truth reaches accept_reward_min. Items where all candidates pass are easy-
/// dropped, where none pass hard-dropped; kept items export up to keep_limit
/// passing candidates ordered by reward (ties: lowest candidate index).
FilterResult filter_items(std::span<const ItemCandidates> per_item, const RejectionPolicy& policy,
                          const RewardSpec& reward);

struct CorpusManifest {
  int total = 0;
  std::string config_hash;
  std::map<std::string, int> per_task;
  std::map<std::string, int> per_disposition;
};

/// Writes line-delimited records plus a manifest; re-import round-trips
/// losslessly.
CorpusManifest export_corpus(const FilterResult& result, const std::string& path,
                             const std::string& config_hash = "");

std::vector<PlanReasonRecord> import_corpus(const std::string& path);

std::string manifest_to_json(const CorpusManifest& manifest);

}  // namespace scoretune
