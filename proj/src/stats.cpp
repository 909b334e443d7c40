#include "xsell/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xsell/distributions.hpp"
#include "xsell/error.hpp"

namespace xsell {

namespace {

double one_sided_p(double t, double df, Direction d) {
  switch (d) {
    case Direction::Greater:
      return student_t_sf(t, df);
    case Direction::Less:
      return student_t_cdf(t, df);
    case Direction::TwoSided:
      break;
  }
  return std::min(1.0, 2.0 * student_t_sf(std::abs(t), df));
}

void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw DataError(fmt::format("t-test needs at least 2 observations per sample (got {} and {})",
                                a.size(), b.size()));
  }
  for (double v : a) {
    if (!std::isfinite(v)) throw DataError("t-test sample contains a non-finite value");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw DataError("t-test sample contains a non-finite value");
  }
}

TTestResult moments(std::span<const double> a, std::span<const double> b) {
  TTestResult r;
  r.mean_a = sample_mean(a);
  r.mean_b = sample_mean(b);
  r.var_a = sample_variance(a);
  r.var_b = sample_variance(b);
  return r;
}

double pooled_variance(const TTestResult& r, std::size_t na, std::size_t nb) {
  return ((na - 1.0) * r.var_a + (nb - 1.0) * r.var_b) / (na + nb - 2.0);
}

}  // namespace

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::Greater:
      return "greater";
    case Direction::Less:
      return "less";
    case Direction::TwoSided:
      break;
  }
  return "two_sided";
}

Direction parse_direction(std::string_view s) {
  if (s == "greater") return Direction::Greater;
  if (s == "less") return Direction::Less;
  if (s == "two_sided") return Direction::TwoSided;
  throw DataError(fmt::format("unknown test direction '{}'", s));
}

double sample_mean(std::span<const double> x) {
  if (x.empty()) throw DataError("mean of an empty sample");
  // Two-pass compensated for large, shifted samples.
  double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double c = 0.0;
  for (double v : x) c += v - m;
  return m + c / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) throw DataError("variance needs at least 2 observations");
  const double m = sample_mean(x);
  double ss = 0.0, c = 0.0;
  for (double v : x) {
    ss += (v - m) * (v - m);
    c += v - m;
  }
  return (ss - c * c / static_cast<double>(x.size())) / static_cast<double>(x.size() - 1);
}

KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw DataError("Kruskal-Wallis needs at least 2 groups");
  struct Obs {
    double v;
    std::size_t g;
  };
  std::vector<Obs> all;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw DataError(fmt::format("Kruskal-Wallis group {} is empty", g));
    for (double v : groups[g]) {
      if (!std::isfinite(v)) throw DataError("Kruskal-Wallis sample contains a non-finite value");
      all.push_back({v, g});
    }
  }
  const std::size_t n = all.size();
  if (n < 5) throw DataError(fmt::format("Kruskal-Wallis needs n >= 5, got {}", n));
  std::sort(all.begin(), all.end(), [](const Obs& a, const Obs& b) { return a.v < b.v; });

  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].v == all[i].v) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t q = i; q < j; ++q) rank_sum[all[q].g] += midrank;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  KruskalWallisResult r;
  r.n = n;
  const double k = static_cast<double>(groups.size());
  const double dn = static_cast<double>(n);
  r.df = k - 1.0;
  const double correction = 1.0 - tie_term / (dn * dn * dn - dn);
  if (correction <= 0.0) return r;  // every observation tied
  double s = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    s += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
  }
  const double h = 12.0 / (dn * (dn + 1.0)) * s - 3.0 * (dn + 1.0);
  r.h = std::max(0.0, h / correction);
  r.p = chi_squared_sf(r.h, r.df);
  r.effect_size = dn > k ? std::clamp((r.h - k + 1.0) / (dn - k), 0.0, 1.0) : 0.0;
  return r;
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const TTestResult r = moments(a, b);
  const double sp = std::sqrt(pooled_variance(r, a.size(), b.size()));
  if (!(sp > 0.0)) return 0.0;
  return (r.mean_a - r.mean_b) / sp;
}

TTestResult welch_t(std::span<const double> a, std::span<const double> b, Direction direction) {
  check_samples(a, b);
  TTestResult r = moments(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = r.var_a / na;
  const double sb = r.var_b / nb;
  const double se2 = sa + sb;
  if (!(se2 > 0.0)) throw NumericError("Welch t-test: both samples have zero variance");
  r.t = (r.mean_a - r.mean_b) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = one_sided_p(r.t, r.df, direction);
  r.cohens_d = (r.mean_a - r.mean_b) / std::sqrt(pooled_variance(r, a.size(), b.size()));
  return r;
}

TTestResult student_t(std::span<const double> a, std::span<const double> b, Direction direction) {
  check_samples(a, b);
  TTestResult r = moments(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sp2 = pooled_variance(r, a.size(), b.size());
  if (!(sp2 > 0.0)) throw NumericError("Student t-test: both samples have zero variance");
  r.t = (r.mean_a - r.mean_b) / std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  r.df = na + nb - 2.0;
  r.p = one_sided_p(r.t, r.df, direction);
  r.cohens_d = (r.mean_a - r.mean_b) / std::sqrt(sp2);
  return r;
}

ChiSquaredResult chi_squared_2x2(const std::uint64_t (&table)[2][2]) {
  ChiSquaredResult r;
  double row[2] = {0, 0}, col[2] = {0, 0};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      r.table[i][j] = table[i][j];
      row[i] += static_cast<double>(table[i][j]);
      col[j] += static_cast<double>(table[i][j]);
    }
  }
  const double n = row[0] + row[1];
  if (row[0] == 0 || row[1] == 0 || col[0] == 0 || col[1] == 0) {
    throw DataError("chi-squared test: a row or column of the 2x2 table is empty");
  }
  r.n = static_cast<std::uint64_t>(n);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double e = row[i] * col[j] / n;
      const double d = static_cast<double>(table[i][j]) - e;
      r.chi2 += d * d / e;
    }
  }
  r.p = chi_squared_sf(r.chi2, 1.0);
  r.omega = std::min(1.0, std::sqrt(r.chi2 / n));
  return r;
}

ChiSquaredResult chi_squared_2x2(std::span<const std::uint8_t> feature,
                                 std::span<const std::uint8_t> group) {
  if (feature.size() != group.size()) throw DataError("chi-squared test: length mismatch");
  std::uint64_t t[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < feature.size(); ++i) {
    if (feature[i] > 1 || group[i] > 1) throw DataError("chi-squared test: values must be 0 or 1");
    ++t[feature[i]][group[i]];
  }
  return chi_squared_2x2(t);
}

}  // namespace xsell
