#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsell/prep.hpp"
#include "xsell/stats.hpp"
#include "xsell/treeshap.hpp"

namespace xsell {

// ---------------------------------------------------------------------------
// Fold robustness.

enum class RobustnessTag { RobustNs, RobustSmallEffect, NotRobust };

std::string_view tag_name(RobustnessTag t);
// green / yellow / red
std::string_view tag_light(RobustnessTag t);
RobustnessTag parse_tag(std::string_view s);

RobustnessTag robustness_tag(double p, double effect_size, double alpha, double small_effect_cutoff);

// "***" p < .001, "**" p < .01, "*" p < .05, "n.s." otherwise.
std::string significance_stars(double p);

struct FeatureRobustness {
  std::size_t rank = 0;
  std::string feature;
  double h = 0.0;
  double df = 0.0;
  double p = 1.0;
  double effect_size = 0.0;
  RobustnessTag tag = RobustnessTag::RobustNs;

  // "*** 0.03", "n.s."
  std::string annotation() const;
};

struct RobustnessOptions {
  double alpha = 0.05;
  double small_effect_cutoff = 0.06;
};

struct RobustnessReport {
  double alpha = 0.05;
  double small_effect_cutoff = 0.06;
  std::vector<int> fold_ids;                 // folds that took part
  std::vector<std::size_t> buyer_count;      // per fold in fold_ids
  std::vector<int> dropped_folds;            // folds without buyers
  std::vector<std::string> warnings;
  std::vector<FeatureRobustness> features;   // in ranking order

  std::size_t robust_count(std::size_t top_k) const;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  static RobustnessReport from_json(const nlohmann::json& j);
};

// One ShapMatrix and one buyer mask per test fold. For every feature, the
// buyers' SHAP values form one group per fold. `order` lists the features in
// report order (ranking); empty means matrix column order. Folds without
// buyers are dropped with a warning; fewer than two remaining folds is a
// DataError.
RobustnessReport fold_robustness(std::span<const ShapMatrix> folds,
                                 std::span<const std::vector<std::uint8_t>> buyers,
                                 const RobustnessOptions& options = {},
                                 std::span<const std::string> order = {}, int threads = 1);

// ---------------------------------------------------------------------------
// Next-year validation.

struct Hypothesis {
  std::size_t rank = 0;
  std::string feature;  // encoded training-year name
  Direction direction = Direction::Greater;
};

// Top-k features of a SHAP ranking; the SHAP direction sets whether buyers
// are expected to have higher (+1) or lower (-1) values. Features without a
// direction get a two-sided hypothesis.
std::vector<Hypothesis> hypotheses_from_ranking(std::span<const FeatureImportance> ranking,
                                                std::size_t top_k);

enum class ValidationTest { WelchT, StudentT, ChiSquared };
std::string_view test_name(ValidationTest t);
ValidationTest parse_test(std::string_view s);

struct ValidationOptions {
  double alpha = 0.05;
  bool bonferroni = false;
  // Student's t is used when var(buyers)/var(non-buyers) lies in this range.
  double variance_ratio_low = 0.5;
  double variance_ratio_high = 2.0;
  LabelOptions labels;
};

struct ValidationRow {
  std::size_t rank = 0;
  std::string feature;   // training-year name
  std::string variable;  // name in the validation year
  ValidationTest test = ValidationTest::WelchT;
  Direction direction = Direction::Greater;
  std::size_t n_buyers = 0;
  std::size_t n_non_buyers = 0;
  double mean_buyers = 0.0;      // share of ones for binary features
  double mean_non_buyers = 0.0;
  double statistic = 0.0;
  double df = 0.0;
  double p = 1.0;
  double p_adjusted = 1.0;
  double effect_size = 0.0;  // Cohen's d or omega
  bool direction_matches = false;
  bool confirmed = false;
  std::string note;  // why a test could not be run, empty otherwise
};

struct ValidationReport {
  CrossSellCase validation_case;
  double alpha = 0.05;
  bool bonferroni = false;
  std::vector<ValidationRow> rows;

  std::size_t confirmed_count() const;
  // "#,Variable,df,Statistic,p,Eff. Size"
  std::string table_csv() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static ValidationReport from_json(const nlohmann::json& j);
};

// "< .001" or ".128"
std::string format_p_value(double p);

// Tests each hypothesis on the eligible population of `validation_case`
// (buyers vs non-buyers of its test year), reading the features in its
// train year. Numeric features use a one-sided Welch t-test, or Student's
// t-test when the variances are homogeneous; binary features use a 2x2
// chi-squared test. Missing values are left out per feature. Throws
// DataError when a hypothesis names a feature the encoding does not know.
ValidationReport validate_next_year(std::span<const Hypothesis> hypotheses,
                                    const EncodingMap& encoding,
                                    std::span<const CustomerRecord> customers,
                                    const CrossSellCase& validation_case,
                                    const ValidationOptions& options = {}, int threads = 1);

}  // namespace xsell
