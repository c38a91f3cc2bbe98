#include "scoretune/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "scoretune/errors.hpp"
#include "scoretune/serialization.hpp"

namespace scoretune {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::teacher: return "teacher";
    case Provenance::human: return "human";
    case Provenance::synthetic: return "synthetic";
  }
  return "teacher";
}

Provenance provenance_from_string(const std::string& name) {
  if (name == "teacher") return Provenance::teacher;
  if (name == "human") return Provenance::human;
  if (name == "synthetic") return Provenance::synthetic;
  throw data_error("unknown provenance '" + name + "'");
}

const char* to_string(Disposition d) {
  switch (d) {
    case Disposition::kept: return "kept";
    case Disposition::easy_dropped: return "easy_dropped";
    case Disposition::hard_dropped: return "hard_dropped";
    case Disposition::skipped: return "skipped";
  }
  return "skipped";
}

void RejectionPolicy::validate() const {
  if (teacher_samples < 1) throw config_error("rejection.teacher_samples must be >= 1");
  if (!(accept_reward_min > 0.0 && accept_reward_min <= 1.0))
    throw config_error("rejection.accept_reward_min must lie in (0, 1]");
  if (keep_limit < 1 || keep_limit > teacher_samples)
    throw config_error("rejection.keep_limit must lie in [1, teacher_samples]");
}

void SimulatedTeacher::validate() const {
  if (noise_sigma < 0.0) throw config_error("teacher.noise_sigma must be >= 0");
  if (fail_prob < 0.0 || fail_prob > 1.0)
    throw config_error("teacher.fail_prob must lie in [0, 1]");
  if (reason_len < 0) throw config_error("teacher.reason_len must be >= 0");
}

double SimulatedTeacher::bias_for(TaskKind task) const {
  switch (task) {
    case TaskKind::technical: return bias_technical;
    case TaskKind::aesthetic: return bias_aesthetic;
    case TaskKind::alignment: return bias_alignment;
  }
  return 0.0;
}

std::string question_for(TaskKind task, const Vocabulary& vocab) {
  const char* aspect = "technical quality";
  if (task == TaskKind::aesthetic) aspect = "aesthetic quality";
  if (task == TaskKind::alignment) aspect = "text-image alignment";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "Please provide a %s rating for this item on a scale from %g to %g.",
                aspect, vocab.score_min, vocab.score_max);
  return buf;
}

namespace {

std::string plan_for(TaskKind task) {
  switch (task) {
    case TaskKind::technical:
      return "1) inspect sharpness and noise 2) check exposure and artifacts 3) settle a score";
    case TaskKind::aesthetic:
      return "1) judge composition 2) weigh color and lighting 3) settle a score";
    case TaskKind::alignment:
      return "1) list prompted elements 2) verify each appears 3) settle a score";
  }
  return "1) inspect 2) weigh 3) settle a score";
}

}  // namespace

std::optional<std::vector<PlanReasonRecord>> generate_candidates(const ToyItem& item,
                                                                 const SimulatedTeacher& teacher,
                                                                 int k, const Vocabulary& vocab,
                                                                 Rng& rng) {
  if (k < 1) throw std::invalid_argument("generate_candidates: k must be >= 1");
  teacher.validate();
  if (teacher.fail_prob > 0.0 && rng.uniform() < teacher.fail_prob) return std::nullopt;

  std::vector<PlanReasonRecord> records;
  records.reserve(k);
  for (int c = 0; c < k; ++c) {
    PlanReasonRecord rec;
    rec.item_id = item.id;
    rec.task = item.task;
    rec.question = question_for(item.task, vocab);
    rec.plan = plan_for(item.task);
    rec.reasoning_tokens.reserve(teacher.reason_len);
    for (int t = 0; t < teacher.reason_len; ++t)
      rec.reasoning_tokens.push_back(
          vocab.reason_tokens > 0 ? static_cast<int>(rng.uniform_int(vocab.reason_tokens)) : 0);
    double score = item.truth_score + teacher.bias_for(item.task);
    if (teacher.noise_sigma > 0.0) score += teacher.noise_sigma * rng.normal();
    rec.final_score = std::clamp(score, vocab.score_min, vocab.score_max);
    rec.provenance = Provenance::teacher;
    records.push_back(std::move(rec));
  }
  return records;
}

FilterResult filter_items(std::span<const ItemCandidates> per_item, const RejectionPolicy& policy,
                          const RewardSpec& reward) {
  policy.validate();
  reward.validate();
  FilterResult result;
  for (const auto& entry : per_item) {
    ItemOutcome outcome;
    outcome.item_id = entry.item.id;
    if (!entry.candidates.has_value()) {
      outcome.disposition = Disposition::skipped;
      result.ledger.push_back(std::move(outcome));
      continue;
    }
    const auto& candidates = *entry.candidates;
    outcome.candidates = static_cast<int>(candidates.size());

    std::vector<std::pair<double, std::size_t>> passing;  // (reward, candidate index)
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double r =
          gaussian_reward(candidates[c].final_score, entry.item.truth_score, reward.sigma);
      if (r >= policy.accept_reward_min) passing.emplace_back(r, c);
    }
    outcome.passing = static_cast<int>(passing.size());

    if (passing.size() == candidates.size()) {
      outcome.disposition = Disposition::easy_dropped;
    } else if (passing.empty()) {
      outcome.disposition = Disposition::hard_dropped;
    } else {
      outcome.disposition = Disposition::kept;
      std::stable_sort(passing.begin(), passing.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      const std::size_t take = std::min<std::size_t>(policy.keep_limit, passing.size());
      for (std::size_t p = 0; p < take; ++p) {
        PlanReasonRecord rec = candidates[passing[p].second];
        rec.plan.clear();  // training-export form never carries the plan
        result.kept.push_back(std::move(rec));
        ++outcome.exported;
      }
    }
    result.ledger.push_back(std::move(outcome));
  }
  return result;
}

namespace {

nlohmann::ordered_json record_to_json(const PlanReasonRecord& rec) {
  return nlohmann::ordered_json{{"item_id", rec.item_id},
                                {"task", to_string(rec.task)},
                                {"question", rec.question},
                                {"reasoning", rec.reasoning_tokens},
                                {"score", rec.final_score},
                                {"provenance", to_string(rec.provenance)}};
}

PlanReasonRecord record_from_json(const nlohmann::json& j) {
  PlanReasonRecord rec;
  j.at("item_id").get_to(rec.item_id);
  rec.task = task_kind_from_string(j.at("task").get<std::string>());
  j.at("question").get_to(rec.question);
  j.at("reasoning").get_to(rec.reasoning_tokens);
  j.at("score").get_to(rec.final_score);
  rec.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  return rec;
}

}  // namespace

CorpusManifest export_corpus(const FilterResult& result, const std::string& path,
                             const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("export_corpus: cannot open '" + path + "' for writing");

  CorpusManifest manifest;
  manifest.config_hash = config_hash;
  for (const auto& rec : result.kept) {
    out << record_to_json(rec).dump() << "\n";
    ++manifest.total;
    ++manifest.per_task[to_string(rec.task)];
  }
  out.flush();
  if (!out) throw data_error("export_corpus: write failure on '" + path + "'");
  for (const auto& outcome : result.ledger)
    ++manifest.per_disposition[to_string(outcome.disposition)];
  return manifest;
}

std::vector<PlanReasonRecord> import_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("import_corpus: cannot open '" + path + "'");
  std::vector<PlanReasonRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw data_error("import_corpus: '" + path + "' line " + std::to_string(lineno) + ": " +
                       e.what());
    }
  }
  return records;
}

std::string manifest_to_json(const CorpusManifest& manifest) {
  nlohmann::ordered_json j{{"total", manifest.total},
                           {"config_hash", manifest.config_hash},
                           {"per_task", manifest.per_task},
                           {"per_disposition", manifest.per_disposition}};
  return j.dump(2) + "\n";
}

}  // namespace scoretune
