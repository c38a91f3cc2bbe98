#include "scoretune/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "scoretune/errors.hpp"
#include "scoretune/parallel.hpp"

namespace scoretune {

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::technical: return "technical";
    case TaskKind::aesthetic: return "aesthetic";
    case TaskKind::alignment: return "alignment";
  }
  return "technical";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "technical") return TaskKind::technical;
  if (name == "aesthetic") return TaskKind::aesthetic;
  if (name == "alignment") return TaskKind::alignment;
  throw config_error("unknown task kind '" + name + "' (expected technical|aesthetic|alignment)");
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the average of 1-based ranks i+1..j+1
    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> plcc(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("plcc: length mismatch");
  const std::size_t n = pred.size();
  if (n < 2) throw std::invalid_argument("plcc: need at least 2 points");

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += pred[i];
    my += truth[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred[i] - mx;
    const double dy = truth[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> srcc(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("srcc: length mismatch");
  const auto rp = fractional_ranks(pred);
  const auto rt = fractional_ranks(truth);
  return plcc(rp, rt);
}

namespace {

bool is_number_char(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Parses a decimal numeral starting at pos; returns value and end position.
std::optional<std::pair<double, std::size_t>> parse_numeral_at(const std::string& s,
                                                               std::size_t pos) {
  std::size_t p = pos;
  if (p < s.size() && (s[p] == '+' || s[p] == '-')) ++p;
  std::size_t digits_begin = p;
  while (p < s.size() && is_number_char(s[p])) ++p;
  if (p == digits_begin) return std::nullopt;
  if (p < s.size() && s[p] == '.') {
    std::size_t q = p + 1;
    while (q < s.size() && is_number_char(s[q])) ++q;
    if (q > p + 1) p = q;
  }
  double value = 0.0;
  const auto res = std::from_chars(s.data() + pos, s.data() + p, value);
  if (res.ec != std::errc{}) return std::nullopt;
  return std::make_pair(value, p);
}

std::optional<double> number_after(const std::string& s, std::size_t from) {
  for (std::size_t i = from; i < s.size() && s[i] != '\n'; ++i) {
    if (is_number_char(s[i]) ||
        ((s[i] == '+' || s[i] == '-') && i + 1 < s.size() && is_number_char(s[i + 1]))) {
      if (auto num = parse_numeral_at(s, i)) return num->first;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::size_t find_last_ci(const std::string& haystack, const std::string& needle) {
  if (needle.empty() || haystack.size() < needle.size()) return std::string::npos;
  auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
  for (std::size_t i = haystack.size() - needle.size() + 1; i-- > 0;) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      if (lower(haystack[i + k]) != needle[k]) {
        match = false;
        break;
      }
    }
    if (match) return i;
  }
  return std::string::npos;
}

bool standalone_boundaries(const std::string& s, std::size_t begin, std::size_t end) {
  auto word_like = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '.' || c == '_';
  };
  if (begin > 0 && word_like(s[begin - 1])) return false;
  if (end < s.size() && word_like(s[end])) return false;
  return true;
}

}  // namespace

std::optional<double> parse_score(const std::string& response, ParseRange range) {
  // 1. tagged line
  if (const auto tag = find_last_ci(response, "score:"); tag != std::string::npos) {
    if (auto v = number_after(response, tag + 6)) return v;
  }
  // 2. boxed answer
  if (const auto box = response.rfind("\\boxed{"); box != std::string::npos) {
    if (auto v = number_after(response, box + 7)) return v;
  }
  // 3. last standalone numeral within range
  std::optional<double> best;
  std::size_t i = 0;
  while (i < response.size()) {
    const char c = response[i];
    const bool starts_number =
        is_number_char(c) ||
        ((c == '+' || c == '-') && i + 1 < response.size() && is_number_char(response[i + 1]));
    if (!starts_number) {
      ++i;
      continue;
    }
    auto num = parse_numeral_at(response, i);
    if (!num) {
      ++i;
      continue;
    }
    const auto [value, end] = *num;
    if (standalone_boundaries(response, i, end) && value >= range.lo && value <= range.hi)
      best = value;
    i = end;
  }
  return best;
}

EvalReport evaluate(const std::vector<ScoreItem>& items, const Predictor& predict,
                    const std::string& dataset_id, ParseRange range, int threads) {
  EvalReport report;
  report.dataset_id = dataset_id;
  report.n_items = static_cast<int>(items.size());

  std::vector<std::optional<double>> parsed(items.size());
  parallel_for(items.size(), threads, [&](std::size_t i) {
    try {
      parsed[i] = parse_score(predict(items[i], i), range);
    } catch (const std::exception&) {
      parsed[i] = std::nullopt;  // predictor failure counts as a parse failure
    }
  });

  std::vector<double> pred, truth;
  std::map<TaskKind, std::pair<std::vector<double>, std::vector<double>>> by_task;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!parsed[i].has_value()) {
      ++report.n_parse_failures;
      continue;
    }
    pred.push_back(*parsed[i]);
    truth.push_back(items[i].truth_score);
    auto& bucket = by_task[items[i].task];
    bucket.first.push_back(*parsed[i]);
    bucket.second.push_back(items[i].truth_score);
  }

  if (pred.size() >= 2) {
    report.plcc = plcc(pred, truth);
    report.srcc = srcc(pred, truth);
  }
  for (const auto& [task, vecs] : by_task) {
    TaskCorrelation tc;
    tc.n_items = static_cast<int>(vecs.first.size());
    if (vecs.first.size() >= 2) {
      tc.plcc = plcc(vecs.first, vecs.second);
      tc.srcc = srcc(vecs.first, vecs.second);
    }
    report.per_task[task] = tc;
  }
  return report;
}

std::map<std::string, Prediction> read_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("read_predictions: cannot open '" + path + "'");
  std::map<std::string, Prediction> predictions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Prediction pred;
      const std::string id = j.at("item_id").get<std::string>();
      if (j.contains("response_text")) {
        pred.response_text = j.at("response_text").get<std::string>();
      } else if (j.contains("score")) {
        pred.score = j.at("score").get<double>();
      } else {
        throw data_error("needs response_text or score");
      }
      predictions[id] = std::move(pred);
    } catch (const std::exception& e) {
      throw data_error("read_predictions: '" + path + "' line " + std::to_string(lineno) + ": " +
                       e.what());
    }
  }
  return predictions;
}

EvalReport evaluate_predictions(const std::vector<ScoreItem>& items,
                                const std::map<std::string, Prediction>& predictions,
                                const std::string& dataset_id, ParseRange range) {
  const Predictor from_map = [&](const ScoreItem& item, std::size_t) -> std::string {
    const auto it = predictions.find(item.id);
    if (it == predictions.end()) throw data_error("no prediction for '" + item.id + "'");
    if (it->second.score.has_value()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "SCORE: %.17g", *it->second.score);
      return buf;
    }
    return it->second.response_text;
  };
  return evaluate(items, from_map, dataset_id, range, 1);
}

std::string eval_report_to_json(const EvalReport& report, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["dataset_id"] = report.dataset_id;
  j["config_hash"] = config_hash;
  j["n_items"] = report.n_items;
  j["n_parse_failures"] = report.n_parse_failures;
  auto corr = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    if (v.has_value()) return *v;
    return nullptr;  // undefined-flag: value absent
  };
  j["plcc"] = corr(report.plcc);
  j["srcc"] = corr(report.srcc);
  nlohmann::ordered_json per_task = nlohmann::ordered_json::object();
  for (const auto& [task, tc] : report.per_task) {
    per_task[to_string(task)] = {
        {"n_items", tc.n_items}, {"plcc", corr(tc.plcc)}, {"srcc", corr(tc.srcc)}};
  }
  j["per_task"] = per_task;
  return j.dump(2) + "\n";
}

}  // namespace scoretune
