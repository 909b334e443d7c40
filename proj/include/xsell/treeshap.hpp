#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsell/cart.hpp"
#include "xsell/ensemble.hpp"
#include "xsell/matrix.hpp"

namespace xsell {

// Per-node outputs used for explanation: node.value by default, or the
// ensemble's leaf transform (hard votes for RUSBoost).
std::vector<double> node_outputs(const Tree& tree);
std::vector<double> node_outputs(const Tree& tree, const EnsembleModel& model);

// Cover-weighted mean leaf output.
double expected_value(const Tree& tree, std::span<const double> outputs);

// Path-dependent TreeSHAP. Adds scale * phi into `phi` (size n_features).
// Throws NumericError on a node without weight.
void tree_shap(const Tree& tree, std::span<const double> outputs, std::span<const double> row,
               std::span<double> phi, double scale = 1.0);

struct ShapVector {
  std::vector<double> values;
  double base = 0.0;
};
ShapVector tree_shap(const Tree& tree, std::span<const double> row);

// Expected output when only the features in `mask` are known: known splits
// follow the row, unknown ones average both children by node weight.
double path_dependent_value(const Tree& tree, std::span<const double> outputs,
                            std::span<const double> row, std::uint64_t mask);

inline constexpr std::size_t kMaxBruteForceFeatures = 12;

// Exact Shapley values of the game `value(mask)` over d players by full
// subset enumeration. Throws DataError for d > kMaxBruteForceFeatures.
std::vector<double> brute_force_shapley(const std::function<double(std::uint64_t)>& value,
                                        std::size_t d);
std::vector<double> brute_force_shapley(const Tree& tree, std::span<const double> outputs,
                                        std::span<const double> row);

struct ShapMatrix {
  FeatureMatrix values;
  double base_value = 0.0;
  std::vector<std::string> feature_names;
  int fold_id = -1;
  std::vector<std::string> instance_ids;
  std::vector<double> outputs;  // model output for each instance
  std::string model_ref;

  std::size_t rows() const { return values.rows(); }
  // Largest |base + sum(phi) - output| / max(1, |output|, |base|).
  double max_additivity_error() const;

  std::string values_csv() const;
  nlohmann::json meta_json() const;
  // <stem>.csv + <stem>.json
  void write(const std::filesystem::path& stem) const;
  static ShapMatrix read(const std::filesystem::path& stem);
};

// Tree attributions combined with normalized tree weights, in the same space
// as predict_proba.
ShapMatrix ensemble_shap(const EnsembleModel& model, const FeatureMatrix& rows, int threads = 1);

// Row-wise concatenation; feature names and base value must agree.
ShapMatrix concat_shap(std::span<const ShapMatrix> parts);

struct FeatureImportance {
  std::size_t rank = 0;  // 1-based
  std::string feature;
  std::size_t column = 0;
  double mean_abs = 0.0;
  double mean_shap = 0.0;
  // Sign of the correlation between feature value and SHAP value (0 if
  // undefined): +1 means high values push the prediction up.
  int direction = 0;
};

struct BeeswarmPoint {
  std::size_t rank = 0;
  std::string feature;
  std::string instance_id;
  double shap = 0.0;
  double color = 0.0;   // min-max normalized feature value, 0.5 if constant
  double jitter = 0.0;  // seeded offset in [-0.4, 0.4]
};

struct ShapSummary {
  std::vector<FeatureImportance> ranking;  // every feature
  std::vector<BeeswarmPoint> points;       // top_k features only

  std::string ranking_csv() const;
  std::string points_csv() const;
  static std::vector<FeatureImportance> parse_ranking_csv(std::string_view text,
                                                          const std::string& source);
};

// Ranked by mean |SHAP| descending, ties by feature name.
ShapSummary shap_summary(const ShapMatrix& shap, const FeatureMatrix& feature_values,
                         std::size_t top_k, std::uint64_t seed = 0);

}  // namespace xsell
