#include "xsell/cv.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "xsell/error.hpp"
#include "xsell/parallel.hpp"
#include "xsell/prep.hpp"
#include "xsell/rng.hpp"

namespace xsell {

std::vector<std::size_t> FoldAssignment::test_rows(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_row.size(); ++i) {
    if (fold_of_row[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::train_rows(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_row.size(); ++i) {
    if (fold_of_row[i] != fold) out.push_back(i);
  }
  return out;
}

nlohmann::json FoldAssignment::to_json() const {
  return {{"k", k}, {"seed", seed}, {"fold_of_row", fold_of_row}};
}

FoldAssignment FoldAssignment::from_json(const nlohmann::json& j) {
  FoldAssignment f;
  try {
    f.k = j.at("k").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.fold_of_row = j.at("fold_of_row").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("fold assignment: {}", e.what()));
  }
  for (int v : f.fold_of_row) {
    if (v < 0 || v >= f.k) throw DataError("fold assignment: fold id out of range");
  }
  return f;
}

FoldAssignment stratified_kfold(std::span<const std::uint8_t> labels, int k, std::uint64_t seed) {
  if (k < 2) throw DataError("cross-validation needs k >= 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  const auto uk = static_cast<std::size_t>(k);
  if (pos.size() < uk || neg.size() < uk) {
    throw DataError(fmt::format("stratified {}-fold split needs at least {} rows per class "
                                "({} positives, {} negatives)",
                                k, k, pos.size(), neg.size()));
  }
  Rng rng_pos(derive_seed(seed, {1}));
  Rng rng_neg(derive_seed(seed, {0}));
  rng_pos.shuffle(std::span<std::size_t>(pos));
  rng_neg.shuffle(std::span<std::size_t>(neg));
  FoldAssignment f;
  f.k = k;
  f.seed = seed;
  f.fold_of_row.assign(labels.size(), 0);
  for (std::size_t i = 0; i < pos.size(); ++i) f.fold_of_row[pos[i]] = static_cast<int>(i % uk);
  const std::size_t offset = pos.size();
  for (std::size_t i = 0; i < neg.size(); ++i) {
    f.fold_of_row[neg[i]] = static_cast<int>((offset + i) % uk);
  }
  return f;
}

// ---------------------------------------------------------------------------

nlohmann::json FoldMetrics::to_json() const {
  return {{"fold", fold},
          {"n", n},
          {"positives", positives},
          {"auc", auc},
          {"precision", precision},
          {"recall", recall},
          {"f2", f2},
          {"tp", counts.tp},
          {"fp", counts.fp},
          {"tn", counts.tn},
          {"fn", counts.fn},
          {"precision_degenerate", precision_degenerate},
          {"recall_degenerate", recall_degenerate}};
}

FoldMetrics FoldMetrics::from_json(const nlohmann::json& j) {
  FoldMetrics m;
  m.fold = j.at("fold").get<int>();
  m.n = j.at("n").get<std::size_t>();
  m.positives = j.at("positives").get<std::size_t>();
  m.auc = j.at("auc").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f2 = j.at("f2").get<double>();
  m.counts = {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(),
              j.at("tn").get<std::size_t>(), j.at("fn").get<std::size_t>()};
  m.precision_degenerate = j.at("precision_degenerate").get<bool>();
  m.recall_degenerate = j.at("recall_degenerate").get<bool>();
  return m;
}

FoldMetrics evaluate_scores(std::span<const std::uint8_t> labels, std::span<const double> scores,
                            double threshold) {
  FoldMetrics m;
  m.n = labels.size();
  m.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  m.auc = roc_auc(labels, scores);
  m.counts = confusion_at(labels, scores, threshold);
  const Rate p = precision(m.counts.tp, m.counts.fp);
  const Rate r = recall(m.counts.tp, m.counts.fn);
  m.precision = p.value;
  m.recall = r.value;
  m.precision_degenerate = p.degenerate;
  m.recall_degenerate = r.degenerate;
  m.f2 = f_beta(p.value, r.value, 2.0);
  return m;
}

MetricsReport summarize_folds(std::vector<FoldMetrics> folds) {
  MetricsReport r;
  std::sort(folds.begin(), folds.end(),
            [](const FoldMetrics& a, const FoldMetrics& b) { return a.fold < b.fold; });
  FoldMetrics mean;
  for (const auto& f : folds) {
    mean.n += f.n;
    mean.positives += f.positives;
    mean.auc += f.auc;
    mean.precision += f.precision;
    mean.recall += f.recall;
    mean.f2 += f.f2;
    mean.counts.tp += f.counts.tp;
    mean.counts.fp += f.counts.fp;
    mean.counts.tn += f.counts.tn;
    mean.counts.fn += f.counts.fn;
    mean.precision_degenerate = mean.precision_degenerate || f.precision_degenerate;
    mean.recall_degenerate = mean.recall_degenerate || f.recall_degenerate;
  }
  if (!folds.empty()) {
    const double k = static_cast<double>(folds.size());
    mean.auc /= k;
    mean.precision /= k;
    mean.recall /= k;
    mean.f2 /= k;
  }
  r.folds = std::move(folds);
  r.mean = mean;
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) folds_json.push_back(f.to_json());
  nlohmann::json j{{"kind", std::string(model_kind_name(kind))},
                   {"seed", seed},
                   {"threshold", threshold},
                   {"folds", folds_json},
                   {"mean", mean.to_json()}};
  if (cross_sell_case) j["case"] = case_to_json(*cross_sell_case);
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.kind = parse_model_kind(j.at("kind").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.threshold = j.at("threshold").get<double>();
    for (const auto& f : j.at("folds")) r.folds.push_back(FoldMetrics::from_json(f));
    r.mean = FoldMetrics::from_json(j.at("mean"));
    if (j.contains("case")) r.cross_sell_case = case_from_json(j.at("case"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("metrics report: {}", e.what()));
  }
  return r;
}

// ---------------------------------------------------------------------------

std::uint64_t fold_assignment_seed(std::uint64_t seed) { return derive_seed(seed, {0}); }

std::uint64_t fold_model_seed(std::uint64_t seed, int fold) {
  return derive_seed(seed, {static_cast<std::uint64_t>(fold) + 1});
}

CrossValidationResult cross_validate(const TrainingData& data, ModelKind kind,
                                     const EnsembleParams& params, int k, std::uint64_t seed,
                                     int threads, double threshold) {
  if (data.y.size() != data.x.rows()) throw DataError("labels and rows differ in length");
  CrossValidationResult res;
  res.folds = stratified_kfold(data.y, k, fold_assignment_seed(seed));
  res.oof_scores.assign(data.y.size(), 0.0);
  res.models.resize(static_cast<std::size_t>(k));
  std::vector<FoldMetrics> metrics(static_cast<std::size_t>(k));

  // Folds in parallel when there are enough workers, otherwise trees.
  const int fold_threads = threads >= k ? threads : 1;
  const int inner_threads = threads >= k ? 1 : threads;
  parallel_for(static_cast<std::size_t>(k), fold_threads, [&](std::size_t f) {
    const int fold = static_cast<int>(f);
    try {
      const auto train = res.folds.train_rows(fold);
      const auto test = res.folds.test_rows(fold);
      const FeatureMatrix xtr = select_rows(data.x, train);
      std::vector<std::uint8_t> ytr, yte;
      for (std::size_t r : train) ytr.push_back(data.y[r]);
      for (std::size_t r : test) yte.push_back(data.y[r]);
      res.models[f] = fit_model(kind, {xtr, ytr, data.feature_names}, params,
                                fold_model_seed(seed, fold), inner_threads);
      std::vector<double> scores(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) {
        scores[i] = predict_proba(res.models[f], data.x.row(test[i]));
        res.oof_scores[test[i]] = scores[i];
      }
      metrics[f] = evaluate_scores(yte, scores, threshold);
      metrics[f].fold = fold;
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("fold {}: {}", fold, e.what()));
    } catch (const DataError& e) {
      throw DataError(fmt::format("fold {}: {}", fold, e.what()));
    }
  });
  res.report = summarize_folds(std::move(metrics));
  res.report.kind = kind;
  res.report.seed = seed;
  res.report.threshold = threshold;
  return res;
}

}  // namespace xsell
