#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xsell/ensemble.hpp"

namespace xsell {

// Discrete grid: parameter name -> candidate values (JSON scalars, null for
// an unlimited max_depth).
struct ParamSpace {
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> dims;

  // Valid points in row-major order; combinations rejected by
  // EnsembleParams::validate (e.g. min_samples_leaf > min_samples_split) are
  // skipped.
  std::vector<nlohmann::json> grid(ModelKind kind) const;

  nlohmann::json to_json() const;
  static ParamSpace from_json(const nlohmann::json& j);
};

// BalancedRF: n_estimators {200,400,800,1600}, max_depth {10,25,50,none},
// min_samples_split {2,5,10}, min_samples_leaf {1,2,4}, max_features
// {sqrt,log2}. RUSBoost: n_estimators {50,100,200,400}, learning_rate
// {0.05,0.1,0.5,1.0}, max_depth {1,2,3}.
ParamSpace default_param_space(ModelKind kind);

struct SearchCandidate {
  nlohmann::json point;
  EnsembleParams params;
  double mean_auc = 0.0;
  std::vector<double> fold_aucs;
};

struct SearchResult {
  ModelKind kind = ModelKind::BalancedRF;
  std::uint64_t seed = 0;
  int k_folds = 0;
  std::size_t best_index = 0;
  std::vector<SearchCandidate> candidates;  // in sampling order

  const EnsembleParams& best() const { return candidates.at(best_index).params; }
  nlohmann::json to_json() const;
  static SearchResult from_json(const nlohmann::json& j);
};

// The first n_iter points of a seeded shuffle of the grid (all of it when
// smaller), each applied on top of `base` and scored by stratified k-fold
// mean AUC. Ties keep the earlier candidate.
SearchResult random_param_search(ModelKind kind, const ParamSpace& space,
                                 const EnsembleParams& base, const TrainingData& data, int n_iter,
                                 int k_folds, std::uint64_t seed, int threads = 1);

}  // namespace xsell
