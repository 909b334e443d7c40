#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace xsell {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Ratio with the 0/0 case reported as 0 and flagged.
struct Rate {
  double value = 0.0;
  bool degenerate = false;
};

Confusion confusion(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions);
// Predictions are scores >= threshold.
Confusion confusion_at(std::span<const std::uint8_t> labels, std::span<const double> scores,
                       double threshold);

Rate precision(std::size_t tp, std::size_t fp);
Rate recall(std::size_t tp, std::size_t fn);
// (1 + b^2) P R / (b^2 P + R); 0 when P = R = 0.
double f_beta(double precision, double recall, double beta);

// Mann-Whitney AUC with midranks for ties. Throws DataError unless both
// classes are present.
double roc_auc(std::span<const std::uint8_t> labels, std::span<const double> scores);

}  // namespace xsell
