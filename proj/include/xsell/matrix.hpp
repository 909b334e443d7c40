#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace xsell {

// Dense row-major matrix of doubles.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  void append_row(std::span<const double> values) {
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }
  void set_cols(std::size_t cols) { cols_ = cols; }

  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.set_cols(m.cols());
  for (std::size_t r : rows) out.append_row(m.row(r));
  return out;
}

}  // namespace xsell
