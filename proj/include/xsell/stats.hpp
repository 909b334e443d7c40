#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace xsell {

// Alternative hypothesis about sample a relative to sample b.
enum class Direction { Greater, Less, TwoSided };

std::string_view direction_name(Direction d);
Direction parse_direction(std::string_view s);

struct KruskalWallisResult {
  double h = 0.0;
  double df = 0.0;
  double p = 1.0;
  double effect_size = 0.0;  // eta^2_H, clamped to [0, 1]
  std::size_t n = 0;
};

// Tie-corrected H over midranks; p from the chi-squared tail with k-1
// degrees of freedom. Needs at least two non-empty groups and n >= 5.
KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  double cohens_d = 0.0;  // pooled standard deviation
  double mean_a = 0.0;
  double mean_b = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
};

// Each sample needs n >= 2. Throws NumericError when the standard error is
// zero.
TTestResult welch_t(std::span<const double> a, std::span<const double> b, Direction direction);
TTestResult student_t(std::span<const double> a, std::span<const double> b, Direction direction);

double cohens_d(std::span<const double> a, std::span<const double> b);

struct ChiSquaredResult {
  double chi2 = 0.0;
  double df = 1.0;
  double p = 1.0;
  double omega = 0.0;
  // table[feature][group]
  std::uint64_t table[2][2] = {{0, 0}, {0, 0}};
  std::uint64_t n = 0;
};

// Pearson statistic without continuity correction. Throws DataError when a
// row or column margin is empty.
ChiSquaredResult chi_squared_2x2(const std::uint64_t (&table)[2][2]);
ChiSquaredResult chi_squared_2x2(std::span<const std::uint8_t> feature,
                                 std::span<const std::uint8_t> group);

double sample_mean(std::span<const double> x);
double sample_variance(std::span<const double> x);  // n - 1 denominator

}  // namespace xsell
