#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "xsell/cv.hpp"
#include "xsell/error.hpp"
#include "xsell/metrics.hpp"
#include "xsell/rng.hpp"

using namespace xsell;

namespace {

double pair_count_auc(const std::vector<std::uint8_t>& y, const std::vector<double>& s) {
  double wins = 0;
  std::size_t p = 0, n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i]) continue;
    ++p;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j]) continue;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  for (auto v : y) n += !v;
  return wins / (double(p) * double(n));
}

std::vector<std::size_t> fold_positive_counts(const FoldAssignment& a,
                                              const std::vector<std::uint8_t>& y) {
  std::vector<std::size_t> c(a.k, 0);
  for (std::size_t i = 0; i < y.size(); ++i) c[a.fold_of_row[i]] += y[i];
  return c;
}

}  // namespace

TEST_SUITE("stratified_kfold") {
  TEST_CASE("one positive per fold") {
    std::vector<std::uint8_t> y(100, 0);
    for (int i = 0; i < 10; ++i) y[i * 7] = 1;
    const auto a = stratified_kfold(y, 10, 3);
    CHECK(fold_positive_counts(a, y) == std::vector<std::size_t>(10, 1));
  }

  TEST_CASE("pigeonhole split") {
    std::vector<std::uint8_t> y(57, 0);
    for (int i = 0; i < 7; ++i) y[i] = 1;
    const auto a = stratified_kfold(y, 5, 9);
    auto c = fold_positive_counts(a, y);
    std::sort(c.begin(), c.end());
    CHECK(c == std::vector<std::size_t>{1, 1, 1, 2, 2});
    std::vector<std::size_t> sizes(5, 0);
    for (int f : a.fold_of_row) ++sizes[f];
    CHECK(*std::max_element(sizes.begin(), sizes.end()) -
              *std::min_element(sizes.begin(), sizes.end()) <=
          1);
  }

  TEST_CASE("partition and balance on random labels") {
    Rng rng(17);
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t n = 20 + rng.below(400);
      const int k = 2 + int(rng.below(9));
      std::vector<std::uint8_t> y(n);
      for (auto& v : y) v = rng.bernoulli(0.2);
      std::size_t pos = std::accumulate(y.begin(), y.end(), std::size_t{0});
      if (pos < std::size_t(k) || n - pos < std::size_t(k)) continue;
      const auto a = stratified_kfold(y, k, rep);
      const auto c = fold_positive_counts(a, y);
      for (auto v : c) CHECK(std::abs(double(v) - double(pos) / k) <= 1.0);
      std::vector<int> seen(n, 0);
      for (int f = 0; f < k; ++f) {
        for (auto i : a.test_rows(f)) ++seen[i];
        CHECK(a.test_rows(f).size() + a.train_rows(f).size() == n);
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    }
  }

  TEST_CASE("errors and determinism") {
    std::vector<std::uint8_t> y = {1, 0, 1, 0, 0, 1, 0};
    CHECK_THROWS_AS(stratified_kfold(y, 1, 0), DataError);
    CHECK_THROWS_AS(stratified_kfold(y, 4, 0), DataError);
    CHECK(stratified_kfold(y, 3, 5).fold_of_row == stratified_kfold(y, 3, 5).fold_of_row);
    const auto a = stratified_kfold(y, 3, 5);
    CHECK(FoldAssignment::from_json(a.to_json()).fold_of_row == a.fold_of_row);
  }
}

TEST_SUITE("confusion") {
  TEST_CASE("fixtures") {
    const std::vector<std::uint8_t> y = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
    CHECK(confusion(y, y) == Confusion{3, 0, 7, 0});
    const std::vector<std::uint8_t> none(10, 0);
    CHECK(confusion(y, none) == Confusion{0, 0, 7, 3});
  }

  TEST_CASE("score threshold enumeration") {
    Rng rng(23);
    std::vector<std::uint8_t> y(200);
    std::vector<double> s(200);
    for (std::size_t i = 0; i < 200; ++i) {
      y[i] = rng.bernoulli(0.3);
      s[i] = std::round(rng.uniform() * 20) / 20;
    }
    for (double th : {0.0, 0.25, 0.5, 0.55, 1.0}) {
      Confusion want;
      for (std::size_t i = 0; i < 200; ++i) {
        const bool flag = s[i] >= th;
        if (flag && y[i]) ++want.tp;
        if (flag && !y[i]) ++want.fp;
        if (!flag && !y[i]) ++want.tn;
        if (!flag && y[i]) ++want.fn;
      }
      CHECK(confusion_at(y, s, th) == want);
    }
  }
}

TEST_SUITE("rates") {
  TEST_CASE("precision and recall") {
    CHECK(precision(0, 0).value == 0.0);
    CHECK(precision(0, 0).degenerate);
    CHECK(precision(5, 5).value == 0.5);
    CHECK_FALSE(precision(5, 5).degenerate);
    CHECK(recall(0, 0).degenerate);
    CHECK(precision(1508, 45000 - 1508).value == doctest::Approx(0.0335).epsilon(1e-3));
  }

  TEST_CASE("f beta") {
    CHECK(f_beta(0.032, 0.972, 2) == doctest::Approx(0.141).epsilon(0.0005 / 0.141));
    CHECK(f_beta(0.038, 0.963, 2) == doctest::Approx(0.164).epsilon(0.0005 / 0.164));
    CHECK(f_beta(0.106, 0.833, 2) == doctest::Approx(0.351).epsilon(0.0005 / 0.351));
    for (double x : {0.1, 0.37, 0.9})
      for (double b : {0.5, 1.0, 2.0, 3.0}) CHECK(f_beta(x, x, b) == doctest::Approx(x));
    CHECK(f_beta(0.0, 0.0, 2) == 0.0);
    // Recall dominates at beta = 2.
    CHECK(f_beta(0.2, 0.8, 2) > f_beta(0.8, 0.2, 2));
  }
}

TEST_SUITE("roc_auc") {
  TEST_CASE("fixtures") {
    const std::vector<std::uint8_t> y = {0, 0, 1, 1};
    CHECK(roc_auc(y, std::vector<double>{0.1, 0.2, 0.8, 0.9}) == 1.0);
    CHECK(roc_auc(y, std::vector<double>{0.5, 0.5, 0.5, 0.5}) == 0.5);
    CHECK(roc_auc(y, std::vector<double>{0.9, 0.8, 0.2, 0.1}) == 0.0);
    CHECK_THROWS_AS(roc_auc(std::vector<std::uint8_t>{1, 1}, std::vector<double>{0.1, 0.2}),
                    DataError);
  }

  TEST_CASE("all-pairs oracle with ties") {
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 2 + rng.below(120);
      std::vector<std::uint8_t> y(n);
      std::vector<double> s(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.bernoulli(0.4);
        s[i] = double(rng.below(8));
      }
      y[0] = 1;
      y[1] = 0;
      CHECK(std::abs(roc_auc(y, s) - pair_count_auc(y, s)) <= 1e-12);
    }
  }
}

TEST_SUITE("cross_validate") {
  TEST_CASE("label feature gives AUC 1 and reports are reproducible") {
    Rng rng(41);
    const std::size_t n = 300;
    FeatureMatrix x(n, 3);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i % 10 == 0;
      x(i, 0) = y[i];
      x(i, 1) = rng.normal();
      x(i, 2) = rng.normal();
    }
    const std::vector<std::string> names = {"label", "a", "b"};
    auto params = EnsembleParams::defaults(ModelKind::BalancedRF);
    params.n_estimators = 10;
    const auto r = cross_validate({x, y, names}, ModelKind::BalancedRF, params, 5, 7);
    CHECK(r.report.mean.auc == 1.0);
    CHECK(r.report.folds.size() == 5);
    CHECK(r.oof_scores.size() == n);
    const auto r2 = cross_validate({x, y, names}, ModelKind::BalancedRF, params, 5, 7, 3);
    CHECK(r.report.to_json().dump() == r2.report.to_json().dump());
    CHECK(MetricsReport::from_json(r.report.to_json()).to_json() == r.report.to_json());
  }

  TEST_CASE("shuffled labels give chance AUC") {
    double sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      const std::size_t n = 600;
      FeatureMatrix x(n, 4);
      std::vector<std::uint8_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 4; ++c) x(i, c) = rng.normal();
        y[i] = x(i, 0) > 1.0;
      }
      rng.shuffle(std::span<std::uint8_t>(y));
      const std::vector<std::string> names = {"a", "b", "c", "d"};
      auto params = EnsembleParams::defaults(ModelKind::BalancedRF);
      params.n_estimators = 20;
      sum += cross_validate({x, y, names}, ModelKind::BalancedRF, params, 5, seed).report.mean.auc;
    }
    const double mean = sum / 5;
    CHECK(mean >= 0.45);
    CHECK(mean <= 0.55);
  }

  TEST_CASE("seed derivation") {
    CHECK(fold_assignment_seed(9) == derive_seed(9, {0}));
    CHECK(fold_model_seed(9, 2) == derive_seed(9, {3}));
  }

  TEST_CASE("summary means fold metrics and sums counts") {
    std::vector<FoldMetrics> folds(2);
    folds[0].fold = 0;
    folds[0].auc = 0.7;
    folds[0].counts = {1, 2, 3, 4};
    folds[1].fold = 1;
    folds[1].auc = 0.9;
    folds[1].counts = {4, 3, 2, 1};
    const auto r = summarize_folds(folds);
    CHECK(r.mean.auc == doctest::Approx(0.8));
    CHECK(r.mean.counts == Confusion{5, 5, 5, 5});
    CHECK(r.mean.fold == -1);
  }
}
