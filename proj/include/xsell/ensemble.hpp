#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xsell/cart.hpp"
#include "xsell/matrix.hpp"

namespace xsell {

enum class ModelKind { BalancedRF, RUSBoost };

// "balanced_rf", "rusboost"
std::string_view model_kind_name(ModelKind k);
// Also accepts "BalancedRF" and "RUSBoost".
ModelKind parse_model_kind(std::string_view s);
// "Balanced RF", "RUSBoost"
std::string_view model_kind_label(ModelKind k);

// How RUSBoost draws the majority class each round: uniformly, with the
// current boosting weights carried into the tree fit, or proportionally to
// those weights.
enum class RusSampling { Uniform, Weighted };

struct EnsembleParams {
  int n_estimators = 100;
  TreeParams tree;
  bool bootstrap = true;        // BalancedRF: bootstrap the minority class
  double learning_rate = 0.1;   // RUSBoost
  bool replacement = true;      // RUSBoost majority draws
  RusSampling sampling = RusSampling::Uniform;

  // n_estimators 1600, max_depth 50, min_samples_split 5, min_samples_leaf 2,
  // max_features sqrt, bootstrap.
  static EnsembleParams balanced_rf_defaults();
  // n_estimators 200, learning_rate 0.1, replacement, stumps.
  static EnsembleParams rusboost_defaults();
  static EnsembleParams defaults(ModelKind kind);

  void validate() const;
  nlohmann::json to_json(ModelKind kind) const;
  // Keys missing from `j` keep the defaults of `kind`.
  static EnsembleParams from_json(ModelKind kind, const nlohmann::json& j);
};

struct EnsembleModel {
  ModelKind kind = ModelKind::BalancedRF;
  EnsembleParams params;
  std::uint64_t seed = 0;
  std::vector<std::string> feature_names;
  std::vector<Tree> trees;
  std::vector<double> tree_weights;
  // Rounds discarded because their weighted error reached 0.5 (RUSBoost).
  std::size_t rejected_rounds = 0;

  // Leaf value for BalancedRF, hard vote (value > 0.5) for RUSBoost.
  double leaf_output(const TreeNode& leaf) const;
  double tree_output(std::size_t t, std::span<const double> row) const;
  double weight_sum() const;

  nlohmann::json to_json() const;
  static EnsembleModel from_json(const nlohmann::json& j);
};

struct TrainingData {
  const FeatureMatrix& x;
  std::span<const std::uint8_t> y;
  std::span<const std::string> feature_names;
};

// All minority indices plus as many majority draws; the result is sorted.
// With `weights` non-empty, majority draws are proportional to them (only
// meaningful with replacement). Throws DataError for single-class input.
std::vector<std::size_t> undersample_majority(std::span<const std::uint8_t> labels,
                                              std::uint64_t seed, bool replacement,
                                              std::span<const double> weights = {});

EnsembleModel fit_balanced_rf(const TrainingData& data, const EnsembleParams& params,
                              std::uint64_t seed, int threads = 1);
EnsembleModel fit_rusboost(const TrainingData& data, const EnsembleParams& params,
                           std::uint64_t seed);
EnsembleModel fit_model(ModelKind kind, const TrainingData& data, const EnsembleParams& params,
                        std::uint64_t seed, int threads = 1);

// Weighted mean of tree outputs, divided by the weight sum.
double predict_proba(const EnsembleModel& model, std::span<const double> row);
std::vector<double> predict_proba(const EnsembleModel& model, const FeatureMatrix& x,
                                  int threads = 1);
bool classify(const EnsembleModel& model, std::span<const double> row, double threshold = 0.5);

}  // namespace xsell
