#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mutflow/dataio.hpp"
#include "mutflow/error.hpp"

namespace mutflow {

// Thrown when a statistic is undefined for its input (constant vectors,
// single-class labels, no qualifying groups).
struct UndefinedMetric : Error {
  using Error::Error;
};

double pearson(std::span<const double> x, std::span<const double> y);
// 1-based ranks, tied values share their mean rank.
std::vector<double> average_ranks(std::span<const double> x);
double spearman(std::span<const double> x, std::span<const double> y);

struct ErrorStats {
  double rmse = 0.0;
  double mae = 0.0;
};
ErrorStats rmse_mae(std::span<const double> pred, std::span<const double> truth);

// P(score of a positive > score of a negative), ties counted 1/2. Positive
// means truth > 0.
double auroc(std::span<const double> scores, std::span<const double> truth);

// One prediction joined with its record.
struct ScoredRecord {
  std::string complex_id;
  std::string mutations;
  std::size_t mutation_count = 1;
  double pred = 0.0;
  std::optional<double> truth;
};

struct PerStructure {
  double pearson = 0.0;
  double spearman = 0.0;
  std::size_t groups = 0;
};

inline constexpr std::size_t kMinGroupSize = 10;

// Groups by complex id, drops groups with fewer than ten labelled records and
// averages the per-group correlations without weighting. Groups whose
// correlation is undefined are skipped.
PerStructure per_structure(std::span<const ScoredRecord> records);

// rank/total for each target after sorting predictions ascending; ties share
// their average rank. DataError for an unknown target.
std::vector<double> ranking_ratio(std::span<const double> predictions, std::span<const std::size_t> targets);

struct SubsetSplit {
  std::vector<ScoredRecord> single;
  std::vector<ScoredRecord> multiple;
};
SubsetSplit subset_split(std::span<const ScoredRecord> records);

struct SubsetReport {
  std::string subset;  // all | single | multiple
  std::size_t count = 0;
  std::optional<double> pearson, spearman, rmse, mae, auroc;
  std::optional<PerStructure> per_structure;
};

struct EvalReport {
  std::vector<SubsetReport> subsets;
  std::string to_json() const;
};

// Metrics over labelled records; undefined statistics are left empty.
EvalReport evaluate_records(std::span<const ScoredRecord> records);

// complex_id,mutations,ddg_pred[,ddg_true]
std::string predictions_csv(std::span<const ScoredRecord> records);
std::vector<ScoredRecord> parse_predictions_csv(std::string_view text);
// subset,complex_id,mutations,ddg_pred,ddg_true for plotting
std::string scatter_csv(std::span<const ScoredRecord> records);

// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace mutflow
