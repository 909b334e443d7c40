#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "xsell/ensemble.hpp"
#include "xsell/metrics.hpp"
#include "xsell/schema.hpp"

namespace xsell {

struct FoldAssignment {
  std::vector<int> fold_of_row;
  int k = 0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> test_rows(int fold) const;
  std::vector<std::size_t> train_rows(int fold) const;

  nlohmann::json to_json() const;
  static FoldAssignment from_json(const nlohmann::json& j);
};

// Shuffles each class, deals the positives round-robin over the folds and
// continues with the negatives where the positives stopped. Throws DataError
// for k < 2 or a class with fewer than k members.
FoldAssignment stratified_kfold(std::span<const std::uint8_t> labels, int k, std::uint64_t seed);

struct FoldMetrics {
  int fold = -1;  // -1 for the mean row
  std::size_t n = 0;
  std::size_t positives = 0;
  double auc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f2 = 0.0;
  Confusion counts;
  bool precision_degenerate = false;
  bool recall_degenerate = false;

  nlohmann::json to_json() const;
  static FoldMetrics from_json(const nlohmann::json& j);
};

FoldMetrics evaluate_scores(std::span<const std::uint8_t> labels, std::span<const double> scores,
                            double threshold);

struct MetricsReport {
  std::optional<CrossSellCase> cross_sell_case;
  ModelKind kind = ModelKind::BalancedRF;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::vector<FoldMetrics> folds;
  FoldMetrics mean;  // metric means over folds, summed counts

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

MetricsReport summarize_folds(std::vector<FoldMetrics> folds);

struct CrossValidationResult {
  MetricsReport report;
  FoldAssignment folds;
  std::vector<double> oof_scores;
  std::vector<EnsembleModel> models;  // one per fold
};

// Fold models use derive_seed(seed, {fold + 1}) and fold assignment
// derive_seed(seed, {0}).
std::uint64_t fold_assignment_seed(std::uint64_t seed);
std::uint64_t fold_model_seed(std::uint64_t seed, int fold);

// Folds run in parallel; errors are rethrown annotated with the fold id.
CrossValidationResult cross_validate(const TrainingData& data, ModelKind kind,
                                     const EnsembleParams& params, int k, std::uint64_t seed,
                                     int threads = 1, double threshold = 0.5);

}  // namespace xsell
