#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "xsell/matrix.hpp"

namespace xsell {

enum class MaxFeatures { All, Sqrt, Log2, Fraction };

struct TreeParams {
  int max_depth = -1;  // -1: unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  MaxFeatures max_features = MaxFeatures::All;
  double max_features_fraction = 1.0;  // used with MaxFeatures::Fraction
  std::uint64_t seed = 0;

  void validate() const;
  // Features examined per split out of d: all, ceil(sqrt d), ceil(log2 d) or
  // ceil(fraction * d), at least 1.
  std::size_t features_per_split(std::size_t d) const;

  nlohmann::json to_json() const;
  static TreeParams from_json(const nlohmann::json& j);
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight = 0.0;  // summed training weight reaching the node
  double value = 0.0;   // weighted positive fraction

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Flat node array; node 0 is the root, children always follow their parent.
struct Tree {
  std::vector<TreeNode> nodes;
  std::size_t n_features = 0;

  int depth() const;
  std::size_t leaf_count() const;
  // Throws DataError on malformed index structure or inconsistent weights.
  void validate() const;

  nlohmann::json to_json() const;
  static Tree from_json(const nlohmann::json& j);
  friend bool operator==(const Tree&, const Tree&) = default;
};

// 1 - p0^2 - p1^2. Throws NumericError when both weights are zero.
double gini_impurity(double w0, double w1);

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

// Gains closer than this are treated as ties.
inline constexpr double kGainTolerance = 1e-12;

// Best split of the sample multiset `rows` over `features` (ascending order is
// the tie-break order). Gain is the parent impurity minus the weight-averaged
// child impurities; children must keep at least min_samples_leaf samples.
std::optional<Split> best_split(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                                std::span<const double> w, std::span<const std::size_t> rows,
                                std::span<const std::size_t> features,
                                int min_samples_leaf = 1);

// `rows` is a multiset of training indices (duplicates from bootstrapping are
// separate samples).
Tree fit_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y, std::span<const double> w,
              std::span<const std::size_t> rows, const TreeParams& params);
// All rows, unit weights.
Tree fit_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y, const TreeParams& params);

std::size_t leaf_index(const Tree& tree, std::span<const double> row);
double predict_tree(const Tree& tree, std::span<const double> row);

}  // namespace xsell
