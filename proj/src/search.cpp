#include "xsell/search.hpp"

#include <fmt/format.h>

#include "xsell/cv.hpp"
#include "xsell/error.hpp"
#include "xsell/rng.hpp"

namespace xsell {

namespace {

EnsembleParams apply_point(ModelKind kind, const EnsembleParams& base, const nlohmann::json& point) {
  nlohmann::json merged = base.to_json(kind);
  for (const auto& [key, value] : point.items()) merged[key] = value;
  return EnsembleParams::from_json(kind, merged);
}

}  // namespace

std::vector<nlohmann::json> ParamSpace::grid(ModelKind kind) const {
  std::vector<nlohmann::json> out;
  std::vector<std::size_t> idx(dims.size(), 0);
  for (const auto& [name, values] : dims) {
    if (values.empty()) throw ConfigError(fmt::format("parameter space: '{}' has no values", name));
  }
  const EnsembleParams defaults = EnsembleParams::defaults(kind);
  for (;;) {
    nlohmann::json point = nlohmann::json::object();
    for (std::size_t d = 0; d < dims.size(); ++d) point[dims[d].first] = dims[d].second[idx[d]];
    try {
      apply_point(kind, defaults, point);
      out.push_back(std::move(point));
    } catch (const ConfigError&) {
    }
    std::size_t d = dims.size();
    while (d > 0) {
      --d;
      if (++idx[d] < dims[d].second.size()) break;
      idx[d] = 0;
      if (d == 0) return out;
    }
    if (dims.empty()) return out;
  }
}

nlohmann::json ParamSpace::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, values] : dims) j[name] = values;
  return j;
}

ParamSpace ParamSpace::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("parameter space must be an object");
  ParamSpace s;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_array()) throw ConfigError(fmt::format("parameter space: '{}' must be a list", key));
    s.dims.emplace_back(key, value.get<std::vector<nlohmann::json>>());
  }
  return s;
}

ParamSpace default_param_space(ModelKind kind) {
  using nlohmann::json;
  ParamSpace s;
  if (kind == ModelKind::BalancedRF) {
    s.dims = {{"n_estimators", {200, 400, 800, 1600}},
              {"max_depth", {10, 25, 50, nullptr}},
              {"min_samples_split", {2, 5, 10}},
              {"min_samples_leaf", {1, 2, 4}},
              {"max_features", {"sqrt", "log2"}}};
  } else {
    s.dims = {{"n_estimators", {50, 100, 200, 400}},
              {"learning_rate", {0.05, 0.1, 0.5, 1.0}},
              {"max_depth", {1, 2, 3}}};
  }
  return s;
}

nlohmann::json SearchResult::to_json() const {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : candidates) {
    cands.push_back({{"point", c.point},
                     {"params", c.params.to_json(kind)},
                     {"mean_auc", c.mean_auc},
                     {"fold_aucs", c.fold_aucs}});
  }
  return {{"kind", std::string(model_kind_name(kind))},
          {"seed", seed},
          {"k_folds", k_folds},
          {"best_index", best_index},
          {"best_params", best().to_json(kind)},
          {"candidates", cands}};
}

SearchResult SearchResult::from_json(const nlohmann::json& j) {
  SearchResult r;
  try {
    r.kind = parse_model_kind(j.at("kind").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.k_folds = j.at("k_folds").get<int>();
    r.best_index = j.at("best_index").get<std::size_t>();
    for (const auto& c : j.at("candidates")) {
      r.candidates.push_back({c.at("point"), EnsembleParams::from_json(r.kind, c.at("params")),
                              c.at("mean_auc").get<double>(),
                              c.at("fold_aucs").get<std::vector<double>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("search result: {}", e.what()));
  }
  if (r.best_index >= r.candidates.size()) throw DataError("search result: bad best index");
  return r;
}

SearchResult random_param_search(ModelKind kind, const ParamSpace& space,
                                 const EnsembleParams& base, const TrainingData& data, int n_iter,
                                 int k_folds, std::uint64_t seed, int threads) {
  if (n_iter < 1) throw ConfigError("random search needs n_iter >= 1");
  std::vector<nlohmann::json> grid = space.grid(kind);
  if (grid.empty()) throw ConfigError("parameter space has no valid configuration");
  Rng rng(derive_seed(seed, {0x5EA4C4}));
  rng.shuffle(std::span<nlohmann::json>(grid));
  grid.resize(std::min<std::size_t>(grid.size(), static_cast<std::size_t>(n_iter)));

  SearchResult res;
  res.kind = kind;
  res.seed = seed;
  res.k_folds = k_folds;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    SearchCandidate cand;
    cand.point = grid[c];
    cand.params = apply_point(kind, base, grid[c]);
    // Every candidate sees the same folds.
    const auto cv = cross_validate(data, kind, cand.params, k_folds, seed, threads);
    for (const auto& f : cv.report.folds) cand.fold_aucs.push_back(f.auc);
    cand.mean_auc = cv.report.mean.auc;
    if (c == 0 || cand.mean_auc > res.candidates[res.best_index].mean_auc) res.best_index = c;
    res.candidates.push_back(std::move(cand));
  }
  return res;
}

}  // namespace xsell
