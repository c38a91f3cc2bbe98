#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scoretune/types.hpp"

namespace scoretune {

/// 1-based fractional ranks; tied values receive the average of their ranks.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Pearson product-moment correlation. Degenerate (zero-variance) input yields
/// an empty optional instead of NaN.
std::optional<double> plcc(std::span<const double> pred, std::span<const double> truth);

/// Spearman rank correlation: Pearson over fractional ranks.
std::optional<double> srcc(std::span<const double> pred, std::span<const double> truth);

struct ParseRange {
  double lo = 1.0;
  double hi = 5.0;
};

/// Extracts the final numeric score from a free-text response. Priority:
/// a "SCORE:" tagged line, a \boxed{...} answer, else the last standalone
/// numeral inside [lo, hi]. Empty optional when nothing qualifies.
std::optional<double> parse_score(const std::string& response, ParseRange range = {});

struct TaskCorrelation {
  int n_items = 0;
  std::optional<double> plcc;
  std::optional<double> srcc;
};

struct EvalReport {
  std::string dataset_id;
  int n_items = 0;
  int n_parse_failures = 0;
  std::optional<double> plcc;
  std::optional<double> srcc;
  std::map<TaskKind, TaskCorrelation> per_task;
};

/// Produces a textual response for one item; index is the item's position in
/// the dataset so callers can look up side data (e.g. toy features).
using Predictor = std::function<std::string(const ScoreItem&, std::size_t index)>;

/// Runs the predictor per item, parses scores, and correlates the successfully
/// parsed subset against the ground truth. Predictor exceptions count as parse
/// failures. Aggregation order is by item index regardless of thread count.
EvalReport evaluate(const std::vector<ScoreItem>& items, const Predictor& predict,
                    const std::string& dataset_id, ParseRange range = {}, int threads = 1);

// Prediction files: one JSON object per line carrying item_id plus either
// response_text (parsed like any model output) or a bare numeric score.
// Extra fields are ignored, so exported corpus records are ingestible too.
struct Prediction {
  std::string response_text;  // empty when a bare score was given
  std::optional<double> score;
};

std::map<std::string, Prediction> read_predictions(const std::string& path);

/// Evaluates stored predictions against the items' truth scores; items without
/// a prediction count as parse failures.
EvalReport evaluate_predictions(const std::vector<ScoreItem>& items,
                                const std::map<std::string, Prediction>& predictions,
                                const std::string& dataset_id, ParseRange range = {});

std::string eval_report_to_json(const EvalReport& report, const std::string& config_hash);

}  // namespace scoretune
