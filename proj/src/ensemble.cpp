#include "xsell/ensemble.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xsell/error.hpp"
#include "xsell/parallel.hpp"
#include "xsell/rng.hpp"

namespace xsell {

namespace {

constexpr int kFormatVersion = 1;
constexpr int kMaxRetries = 10;
const double kAlphaCapLog = std::log(1e12);

void check_data(const TrainingData& d) {
  if (d.x.rows() == 0) throw DataError("training data is empty");
  if (d.y.size() != d.x.rows()) throw DataError("labels and rows differ in length");
  if (!d.feature_names.empty() && d.feature_names.size() != d.x.cols()) {
    throw DataError("feature names and columns differ in length");
  }
  const auto pos = std::count(d.y.begin(), d.y.end(), std::uint8_t{1});
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(d.y.size())) {
    throw DataError("training data contains a single class");
  }
}

EnsembleModel empty_model(ModelKind kind, const TrainingData& d, const EnsembleParams& p,
                          std::uint64_t seed) {
  EnsembleModel m;
  m.kind = kind;
  m.params = p;
  m.seed = seed;
  m.feature_names.assign(d.feature_names.begin(), d.feature_names.end());
  if (m.feature_names.empty()) {
    for (std::size_t j = 0; j < d.x.cols(); ++j) m.feature_names.push_back(fmt::format("x{}", j));
  }
  return m;
}

std::size_t draw_weighted(Rng& rng, std::span<const double> cumulative) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                               cumulative.size() - 1);
}

}  // namespace

std::string_view model_kind_name(ModelKind k) {
  return k == ModelKind::BalancedRF ? "balanced_rf" : "rusboost";
}

std::string_view model_kind_label(ModelKind k) {
  return k == ModelKind::BalancedRF ? "Balanced RF" : "RUSBoost";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "balanced_rf" || s == "BalancedRF" || s == "brf") return ModelKind::BalancedRF;
  if (s == "rusboost" || s == "RUSBoost" || s == "rus") return ModelKind::RUSBoost;
  throw ConfigError(fmt::format("unknown model kind '{}'", s));
}

EnsembleParams EnsembleParams::balanced_rf_defaults() {
  EnsembleParams p;
  p.n_estimators = 1600;
  p.tree.max_depth = 50;
  p.tree.min_samples_split = 5;
  p.tree.min_samples_leaf = 2;
  p.tree.max_features = MaxFeatures::Sqrt;
  p.bootstrap = true;
  return p;
}

EnsembleParams EnsembleParams::rusboost_defaults() {
  EnsembleParams p;
  p.n_estimators = 200;
  p.learning_rate = 0.1;
  p.replacement = true;
  p.tree.max_depth = 1;
  p.tree.min_samples_split = 2;
  p.tree.min_samples_leaf = 1;
  p.tree.max_features = MaxFeatures::All;
  return p;
}

EnsembleParams EnsembleParams::defaults(ModelKind kind) {
  return kind == ModelKind::BalancedRF ? balanced_rf_defaults() : rusboost_defaults();
}

void EnsembleParams::validate() const {
  if (n_estimators < 1) throw ConfigError("n_estimators must be >= 1");
  if (!(learning_rate > 0.0) || std::isinf(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  tree.validate();
}

nlohmann::json EnsembleParams::to_json(ModelKind kind) const {
  nlohmann::json j = tree.to_json();
  j["n_estimators"] = n_estimators;
  if (kind == ModelKind::BalancedRF) {
    j["bootstrap"] = bootstrap;
  } else {
    j["learning_rate"] = learning_rate;
    j["replacement"] = replacement;
    j["sampling"] = sampling == RusSampling::Uniform ? "uniform" : "weighted";
  }
  return j;
}

EnsembleParams EnsembleParams::from_json(ModelKind kind, const nlohmann::json& j) {
  EnsembleParams p = defaults(kind);
  nlohmann::json tree = p.tree.to_json();
  try {
    for (const char* key : {"max_depth", "min_samples_split", "min_samples_leaf", "max_features",
                            "max_features_fraction"}) {
      if (j.contains(key)) tree[key] = j.at(key);
    }
    p.tree = TreeParams::from_json(tree);
    p.n_estimators = j.value("n_estimators", p.n_estimators);
    p.bootstrap = j.value("bootstrap", p.bootstrap);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.replacement = j.value("replacement", p.replacement);
    if (j.contains("sampling")) {
      const auto s = j.at("sampling").get<std::string>();
      if (s == "uniform") {
        p.sampling = RusSampling::Uniform;
      } else if (s == "weighted") {
        p.sampling = RusSampling::Weighted;
      } else {
        throw ConfigError(fmt::format("unknown RUSBoost sampling '{}'", s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model parameters: {}", e.what()));
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------

double EnsembleModel::leaf_output(const TreeNode& leaf) const {
  if (kind == ModelKind::BalancedRF) return leaf.value;
  return leaf.value > 0.5 ? 1.0 : 0.0;
}

double EnsembleModel::tree_output(std::size_t t, std::span<const double> row) const {
  return leaf_output(trees[t].nodes[leaf_index(trees[t], row)]);
}

double EnsembleModel::weight_sum() const {
  double s = 0.0;
  for (double w : tree_weights) s += w;
  return s;
}

nlohmann::json EnsembleModel::to_json() const {
  nlohmann::json trees_json = nlohmann::json::array();
  for (const auto& t : trees) trees_json.push_back(t.to_json());
  return {{"format_version", kFormatVersion},
          {"kind", std::string(model_kind_name(kind))},
          {"params", params.to_json(kind)},
          {"seed", seed},
          {"feature_names", feature_names},
          {"rejected_rounds", rejected_rounds},
          {"trees", trees_json},
          {"tree_weights", tree_weights}};
}

EnsembleModel EnsembleModel::from_json(const nlohmann::json& j) {
  EnsembleModel m;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) {
      throw DataError("unsupported model format version");
    }
    m.kind = parse_model_kind(j.at("kind").get<std::string>());
    m.params = EnsembleParams::from_json(m.kind, j.at("params"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.rejected_rounds = j.value("rejected_rounds", std::size_t{0});
    for (const auto& t : j.at("trees")) m.trees.push_back(Tree::from_json(t));
    m.tree_weights = j.at("tree_weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("model: {}", e.what()));
  }
  if (m.trees.empty() || m.trees.size() != m.tree_weights.size()) {
    throw DataError("model: trees and tree weights differ in length");
  }
  for (const auto& t : m.trees) {
    if (t.n_features != m.feature_names.size()) throw DataError("model: tree dimension mismatch");
  }
  return m;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> undersample_majority(std::span<const std::uint8_t> labels,
                                              std::uint64_t seed, bool replacement,
                                              std::span<const double> weights) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw DataError("undersampling needs both classes");
  if (!weights.empty() && weights.size() != labels.size()) {
    throw DataError("undersampling weights and labels differ in length");
  }
  const bool pos_minority = pos.size() <= neg.size();
  std::vector<std::size_t>& minority = pos_minority ? pos : neg;
  std::vector<std::size_t>& majority = pos_minority ? neg : pos;

  Rng rng(seed);
  std::vector<std::size_t> out = minority;
  const std::size_t m = minority.size();
  if (replacement) {
    if (weights.empty()) {
      for (std::size_t i = 0; i < m; ++i) out.push_back(majority[rng.below(majority.size())]);
    } else {
      std::vector<double> cumulative(majority.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < majority.size(); ++i) {
        acc += weights[majority[i]];
        cumulative[i] = acc;
      }
      if (!(acc > 0.0)) throw NumericError("undersampling weights sum to zero");
      for (std::size_t i = 0; i < m; ++i) out.push_back(majority[draw_weighted(rng, cumulative)]);
    }
  } else {
    // Partial Fisher-Yates: the first m positions become the sample.
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng.below(majority.size() - i);
      std::swap(majority[i], majority[j]);
      out.push_back(majority[i]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

EnsembleModel fit_balanced_rf(const TrainingData& data, const EnsembleParams& params,
                              std::uint64_t seed, int threads) {
  params.validate();
  check_data(data);
  EnsembleModel model = empty_model(ModelKind::BalancedRF, data, params, seed);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < data.y.size(); ++i) (data.y[i] ? pos : neg).push_back(i);
  const auto& minority = pos.size() <= neg.size() ? pos : neg;
  const auto& majority = pos.size() <= neg.size() ? neg : pos;
  const std::vector<double> unit(data.x.rows(), 1.0);

  const auto n = static_cast<std::size_t>(params.n_estimators);
  model.trees.resize(n);
  parallel_for(n, threads, [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(seed, {t});
    Rng rng(derive_seed(tree_seed, {0}));
    std::vector<std::size_t> sample;
    sample.reserve(2 * minority.size());
    const std::size_t m = minority.size();
    if (params.bootstrap) {
      for (std::size_t i = 0; i < m; ++i) sample.push_back(minority[rng.below(m)]);
    } else {
      sample = minority;
    }
    std::vector<std::size_t> maj = majority;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng.below(maj.size() - i);
      std::swap(maj[i], maj[j]);
      sample.push_back(maj[i]);
    }
    std::sort(sample.begin(), sample.end());
    TreeParams tp = params.tree;
    tp.seed = derive_seed(tree_seed, {1});
    model.trees[t] = fit_tree(data.x, data.y, unit, sample, tp);
  });
  model.tree_weights.assign(n, 1.0 / static_cast<double>(n));
  return model;
}

EnsembleModel fit_rusboost(const TrainingData& data, const EnsembleParams& params,
                           std::uint64_t seed) {
  params.validate();
  check_data(data);
  EnsembleModel model = empty_model(ModelKind::RUSBoost, data, params, seed);
  const std::size_t n = data.x.rows();
  // Each class starts with total weight 1/2: the round error is measured on
  // the full set, and this keeps that distribution as balanced as the
  // undersampled fits.
  std::size_t n_pos = 0;
  for (std::uint8_t v : data.y) n_pos += v;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 / static_cast<double>(data.y[i] ? n_pos : n - n_pos);
  }
  const double alpha_cap = params.learning_rate * kAlphaCapLog;
  std::vector<std::uint8_t> miss(n);

  for (int round = 0; round < params.n_estimators; ++round) {
    bool accepted = false;
    bool perfect = false;
    for (int attempt = 0; attempt <= kMaxRetries && !accepted; ++attempt) {
      double class_total[2] = {0.0, 0.0};
      for (std::size_t i = 0; i < n; ++i) class_total[data.y[i]] += w[i];
      const std::uint64_t round_seed =
          derive_seed(seed, {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(attempt)});
      const auto sample = undersample_majority(
          data.y, derive_seed(round_seed, {0}), params.replacement,
          params.sampling == RusSampling::Weighted ? std::span<const double>(w)
                                                   : std::span<const double>());
      // Each class of the balanced sample is reweighted to the total boosting
      // weight of that class in the full training set, so the tree fits the
      // same distribution the round's error is measured on.
      double sample_weight[2] = {0.0, 0.0};
      double sample_count[2] = {0.0, 0.0};
      for (std::size_t r : sample) {
        sample_weight[data.y[r]] += w[r];
        sample_count[data.y[r]] += 1.0;
      }
      std::vector<double> fit_w(n, 0.0);
      for (std::size_t r : sample) {
        const int c = data.y[r];
        fit_w[r] = params.sampling == RusSampling::Uniform
                       ? w[r] * class_total[c] / sample_weight[c]
                       : class_total[c] / sample_count[c];
      }
      TreeParams tp = params.tree;
      tp.seed = derive_seed(round_seed, {1});
      Tree tree = fit_tree(data.x, data.y, fit_w, sample, tp);

      double err = 0.0, total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double vote = tree.nodes[leaf_index(tree, data.x.row(i))].value > 0.5 ? 1.0 : 0.0;
        miss[i] = (vote == 1.0) != (data.y[i] == 1) ? 1 : 0;
        err += miss[i] * w[i];
        total += w[i];
      }
      const double eps = err / total;
      if (!(eps < 0.5)) {
        ++model.rejected_rounds;
        continue;
      }
      accepted = true;
      double alpha = alpha_cap;
      if (eps > 0.0) alpha = std::min(alpha_cap, params.learning_rate * std::log((1.0 - eps) / eps));
      model.trees.push_back(std::move(tree));
      model.tree_weights.push_back(alpha);
      if (eps <= 0.0) {
        perfect = true;
        break;
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (miss[i]) w[i] *= std::exp(alpha);
        sum += w[i];
      }
      for (double& wi : w) wi /= sum;
    }
    if (!accepted) {
      throw NumericError(fmt::format(
          "RUSBoost round {}: weighted error stayed at or above 0.5 after {} retries", round,
          kMaxRetries));
    }
    if (perfect) break;
  }
  return model;
}

EnsembleModel fit_model(ModelKind kind, const TrainingData& data, const EnsembleParams& params,
                        std::uint64_t seed, int threads) {
  return kind == ModelKind::BalancedRF ? fit_balanced_rf(data, params, seed, threads)
                                       : fit_rusboost(data, params, seed);
}

double predict_proba(const EnsembleModel& model, std::span<const double> row) {
  if (row.size() != model.feature_names.size()) {
    throw DataError(fmt::format("row has {} features, model expects {}", row.size(),
                                model.feature_names.size()));
  }
  double s = 0.0;
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    s += model.tree_weights[t] * model.tree_output(t, row);
  }
  const double total = model.weight_sum();
  if (!(total > 0.0)) throw NumericError("model tree weights sum to zero");
  return std::clamp(s / total, 0.0, 1.0);
}

std::vector<double> predict_proba(const EnsembleModel& model, const FeatureMatrix& x,
                                  int threads) {
  std::vector<double> out(x.rows());
  parallel_for(x.rows(), threads, [&](std::size_t i) { out[i] = predict_proba(model, x.row(i)); });
  return out;
}

bool classify(const EnsembleModel& model, std::span<const double> row, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  return predict_proba(model, row) >= threshold;
}

}  // namespace xsell
