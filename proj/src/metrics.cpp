#include "xsell/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "xsell/error.hpp"

namespace xsell {

Confusion confusion(std::span<const std::uint8_t> labels,
                    std::span<const std::uint8_t> predictions) {
  if (labels.size() != predictions.size()) {
    throw DataError("confusion: labels and predictions differ in length");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool y = labels[i] != 0;
    const bool p = predictions[i] != 0;
    if (y && p) {
      ++c.tp;
    } else if (!y && p) {
      ++c.fp;
    } else if (!y) {
      ++c.tn;
    } else {
      ++c.fn;
    }
  }
  return c;
}

Confusion confusion_at(std::span<const std::uint8_t> labels, std::span<const double> scores,
                       double threshold) {
  if (labels.size() != scores.size()) throw DataError("confusion: labels and scores differ in length");
  std::vector<std::uint8_t> pred(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
  return confusion(labels, pred);
}

Rate precision(std::size_t tp, std::size_t fp) {
  if (tp + fp == 0) return {0.0, true};
  return {static_cast<double>(tp) / static_cast<double>(tp + fp), false};
}

Rate recall(std::size_t tp, std::size_t fn) {
  if (tp + fn == 0) return {0.0, true};
  return {static_cast<double>(tp) / static_cast<double>(tp + fn), false};
}

double f_beta(double p, double r, double beta) {
  if (!(beta > 0.0)) throw ConfigError("f_beta: beta must be positive");
  const double b2 = beta * beta;
  const double denom = b2 * p + r;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * p * r / denom;
}

double roc_auc(std::span<const std::uint8_t> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw DataError("roc_auc: labels and scores differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share the midrank (i + 1 + j) / 2.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        rank_sum += midrank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DataError("roc_auc needs both classes");
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

}  // namespace xsell
