#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "xsell/ensemble.hpp"
#include "xsell/error.hpp"
#include "xsell/rng.hpp"
#include "xsell/search.hpp"

using namespace xsell;

namespace {

struct Data {
  FeatureMatrix x;
  std::vector<std::uint8_t> y;
  std::vector<std::string> names;
  TrainingData view() const { return {x, y, names}; }
};

Data planted(std::uint64_t seed, std::size_t n, double rate) {
  Rng rng(seed);
  Data d{FeatureMatrix(n, 5), std::vector<std::uint8_t>(n), {"a", "b", "c", "d", "e"}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 5; ++c) d.x(i, c) = rng.normal();
    const double score = 1.5 * d.x(i, 0) - 1.0 * d.x(i, 1) + 0.8 * d.x(i, 2) * d.x(i, 3);
    d.y[i] = rng.uniform() < rate * std::exp(score) / (1 + rate * std::exp(score)) * 4;
  }
  return d;
}

Tree leaf(double value) {
  Tree t;
  t.n_features = 1;
  t.nodes = {{-1, 0.0, -1, -1, 1.0, value}};
  return t;
}

}  // namespace

TEST_SUITE("undersample_majority") {
  TEST_CASE("equalizes the classes") {
    std::vector<std::uint8_t> y(100, 0);
    y[42] = 1;
    const auto s = undersample_majority(y, 3, true);
    REQUIRE(s.size() == 2);
    CHECK(std::count(s.begin(), s.end(), 42u) == 1);
  }

  TEST_CASE("balanced input without replacement keeps everything") {
    std::vector<std::uint8_t> y = {1, 0, 1, 0, 0, 1};
    CHECK(undersample_majority(y, 11, false) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  }

  TEST_CASE("matches a reference seeded sampler") {
    Rng gen(4);
    std::vector<std::uint8_t> y(1000);
    for (auto& v : y) v = gen.bernoulli(0.1);
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
    {
      Rng rng(77);
      std::vector<std::size_t> want = pos;
      for (std::size_t i = 0; i < pos.size(); ++i) want.push_back(neg[rng.below(neg.size())]);
      std::sort(want.begin(), want.end());
      CHECK(undersample_majority(y, 77, true) == want);
    }
    {
      Rng rng(78);
      std::vector<std::size_t> maj = neg, want = pos;
      for (std::size_t i = 0; i < pos.size(); ++i) {
        std::swap(maj[i], maj[i + rng.below(maj.size() - i)]);
        want.push_back(maj[i]);
      }
      std::sort(want.begin(), want.end());
      const auto got = undersample_majority(y, 78, false);
      CHECK(got == want);
      CHECK(std::adjacent_find(got.begin(), got.end()) == got.end());
    }
  }

  TEST_CASE("weighted draws follow the weights") {
    std::vector<std::uint8_t> y(50, 0);
    for (int i = 0; i < 10; ++i) y[i] = 1;
    std::vector<double> w(50, 0.0);
    w[20] = 1.0;
    const auto s = undersample_majority(y, 5, true, w);
    CHECK(std::count(s.begin(), s.end(), 20u) == 10);
    CHECK_THROWS_AS(undersample_majority(std::vector<std::uint8_t>(5, 1), 0, true), DataError);
  }
}

TEST_SUITE("balanced_rf") {
  TEST_CASE("single tree forest predicts like its tree") {
    const Data d = planted(1, 400, 0.05);
    auto p = EnsembleParams::defaults(ModelKind::BalancedRF);
    p.n_estimators = 1;
    const auto m = fit_balanced_rf(d.view(), p, 3);
    for (std::size_t r = 0; r < 50; ++r)
      CHECK(predict_proba(m, d.x.row(r)) == predict_tree(m.trees[0], d.x.row(r)));
  }

  TEST_CASE("each tree sees a balanced sample") {
    const Data d = planted(2, 600, 0.05);
    std::size_t pos = 0;
    for (auto v : d.y) pos += v;
    auto p = EnsembleParams::defaults(ModelKind::BalancedRF);
    p.n_estimators = 15;
    const auto m = fit_balanced_rf(d.view(), p, 4);
    for (const auto& t : m.trees) CHECK(t.nodes[0].weight == double(2 * pos));
    p.bootstrap = false;
    const auto m2 = fit_balanced_rf(d.view(), p, 4);
    for (const auto& t : m2.trees) CHECK(t.nodes[0].value == doctest::Approx(0.5));
  }

  TEST_CASE("thread count does not change the model") {
    const Data d = planted(3, 800, 0.05);
    auto p = EnsembleParams::defaults(ModelKind::BalancedRF);
    p.n_estimators = 40;
    const auto a = fit_balanced_rf(d.view(), p, 9, 1), b = fit_balanced_rf(d.view(), p, 9, 8);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(EnsembleModel::from_json(a.to_json()).to_json() == a.to_json());
  }
}

TEST_SUITE("rusboost") {
  TEST_CASE("separable data reaches zero training error") {
    FeatureMatrix x(20, 1);
    std::vector<std::uint8_t> y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      x(i, 0) = double(i);
      y[i] = i >= 14;
    }
    const std::vector<std::string> names = {"x"};
    auto p = EnsembleParams::defaults(ModelKind::RUSBoost);
    p.n_estimators = 10;
    const auto m = fit_rusboost({x, y, names}, p, 1);
    CHECK(m.trees.size() <= 10);
    for (std::size_t i = 0; i < 20; ++i) CHECK(classify(m, x.row(i)) == bool(y[i]));
  }

  TEST_CASE("two rounds follow the AdaBoost weight update") {
    FeatureMatrix x(8, 1);
    const std::vector<std::uint8_t> y = {0, 0, 0, 1, 0, 1, 1, 1};
    for (std::size_t i = 0; i < 8; ++i) x(i, 0) = double(i + 1);
    const std::vector<std::string> names = {"x"};
    auto p = EnsembleParams::defaults(ModelKind::RUSBoost);
    p.n_estimators = 2;
    p.learning_rate = 1.0;
    p.replacement = false;
    p.tree.max_depth = 1;
    const auto m = fit_rusboost({x, y, names}, p, 5);
    REQUIRE(m.trees.size() == 2);
    // Round 1: uniform weights 1/8, the stump at 3.5 misclassifies x = 5 only.
    CHECK(m.trees[0].nodes[0].threshold == 3.5);
    CHECK(m.tree_weights[0] == doctest::Approx(std::log(7.0)));
    // Round 2: x = 5 carries half the mass, every other point 1/14.
    std::vector<double> w(8, 1.0 / 14);
    w[4] = 0.5;
    double eps = 0;
    for (std::size_t i = 0; i < 8; ++i)
      if ((m.tree_output(1, x.row(i)) > 0.5) != bool(y[i])) eps += w[i];
    CHECK(eps < 0.5);
    CHECK(m.tree_weights[1] == doctest::Approx(std::log((1 - eps) / eps)));
  }

  TEST_CASE("tree weights follow the sequential recursion") {
    const Data d = planted(6, 500, 0.08);
    auto p = EnsembleParams::defaults(ModelKind::RUSBoost);
    p.n_estimators = 25;
    p.learning_rate = 0.5;
    const auto m = fit_rusboost(d.view(), p, 12);
    REQUIRE(m.rejected_rounds == 0);
    const std::size_t n = d.y.size();
    double npos = 0;
    for (auto v : d.y) npos += v;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = d.y[i] ? 0.5 / npos : 0.5 / (n - npos);
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
      std::vector<bool> miss(n);
      double eps = 0;
      for (std::size_t i = 0; i < n; ++i) {
        miss[i] = (m.tree_output(t, d.x.row(i)) > 0.5) != bool(d.y[i]);
        if (miss[i]) eps += w[i];
      }
      const double alpha = 0.5 * std::log((1 - eps) / eps);
      CHECK(m.tree_weights[t] == doctest::Approx(alpha).epsilon(1e-9));
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (miss[i]) w[i] *= std::exp(alpha);
        s += w[i];
      }
      for (auto& v : w) v /= s;
    }
  }

  TEST_CASE("zero-information rounds are rejected") {
    FeatureMatrix x(10, 1, 1.0);
    const std::vector<std::uint8_t> y = {1, 0, 1, 0, 1, 0, 0, 1, 0, 1};
    const std::vector<std::string> names = {"x"};
    auto p = EnsembleParams::defaults(ModelKind::RUSBoost);
    p.n_estimators = 3;
    CHECK_THROWS_AS(fit_rusboost({x, y, names}, p, 1), NumericError);
  }

  TEST_CASE("deterministic") {
    const Data d = planted(7, 300, 0.08);
    auto p = EnsembleParams::defaults(ModelKind::RUSBoost);
    p.n_estimators = 20;
    CHECK(fit_rusboost(d.view(), p, 3).to_json() == fit_rusboost(d.view(), p, 3).to_json());
  }
}

TEST_SUITE("prediction") {
  TEST_CASE("weighted mean of tree outputs") {
    EnsembleModel m;
    m.feature_names = {"x"};
    m.trees = {leaf(0.2), leaf(0.6)};
    m.tree_weights = {0.5, 0.5};
    const double row[] = {0.0};
    CHECK(predict_proba(m, row) == doctest::Approx(0.4));
    m.trees = {leaf(1.0), leaf(1.0), leaf(1.0)};
    m.tree_weights = {1, 1, 1};
    CHECK(predict_proba(m, row) == 1.0);
    m.kind = ModelKind::RUSBoost;
    m.trees = {leaf(0.7), leaf(0.3)};
    m.tree_weights = {0.25, 0.75};
    CHECK(predict_proba(m, row) == doctest::Approx(0.25));
  }

  TEST_CASE("matches per-tree aggregation") {
    const Data d = planted(8, 400, 0.06);
    for (auto kind : {ModelKind::BalancedRF, ModelKind::RUSBoost}) {
      auto p = EnsembleParams::defaults(kind);
      p.n_estimators = 12;
      const auto m = fit_model(kind, d.view(), p, 2);
      const auto all = predict_proba(m, d.x, 4);
      for (std::size_t r = 0; r < 50; ++r) {
        double s = 0, w = 0;
        for (std::size_t t = 0; t < m.trees.size(); ++t) {
          const auto& lf = m.trees[t].nodes[leaf_index(m.trees[t], d.x.row(r))];
          const double out = kind == ModelKind::BalancedRF ? lf.value : (lf.value > 0.5 ? 1 : 0);
          s += m.tree_weights[t] * out;
          w += m.tree_weights[t];
        }
        CHECK(all[r] == doctest::Approx(s / w).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("classification threshold") {
    EnsembleModel m;
    m.feature_names = {"x"};
    m.trees = {leaf(0.5)};
    m.tree_weights = {1};
    const double row[] = {0.0};
    CHECK(classify(m, row, 0.5));
    m.trees = {leaf(0.49)};
    CHECK_FALSE(classify(m, row, 0.5));
  }

  TEST_CASE("params round trip and validation") {
    for (auto kind : {ModelKind::BalancedRF, ModelKind::RUSBoost}) {
      const auto p = EnsembleParams::defaults(kind);
      CHECK(EnsembleParams::from_json(kind, p.to_json(kind)).to_json(kind) == p.to_json(kind));
      CHECK(parse_model_kind(model_kind_name(kind)) == kind);
    }
    const auto rf = EnsembleParams::balanced_rf_defaults();
    CHECK(rf.n_estimators == 1600);
    CHECK(rf.tree.max_depth == 50);
    CHECK(rf.tree.min_samples_split == 5);
    CHECK(rf.tree.min_samples_leaf == 2);
    CHECK(rf.tree.max_features == MaxFeatures::Sqrt);
    auto bad = rf;
    bad.n_estimators = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_SUITE("random_param_search") {
  TEST_CASE("single configuration") {
    const Data d = planted(9, 300, 0.08);
    ParamSpace s;
    s.dims = {{"n_estimators", {nlohmann::json(7)}}};
    const auto r = random_param_search(ModelKind::BalancedRF, s,
                                       EnsembleParams::defaults(ModelKind::BalancedRF), d.view(), 5,
                                       3, 1);
    REQUIRE(r.candidates.size() == 1);
    CHECK(r.best().n_estimators == 7);
  }

  TEST_CASE("same seed gives the same candidate sequence") {
    const Data d = planted(10, 300, 0.08);
    const auto space = default_param_space(ModelKind::RUSBoost);
    auto base = EnsembleParams::defaults(ModelKind::RUSBoost);
    ParamSpace small;
    small.dims = {{"n_estimators", {5, 10}}, {"learning_rate", {0.1, 0.5, 1.0}}};
    const auto a = random_param_search(ModelKind::RUSBoost, small, base, d.view(), 4, 3, 8);
    const auto b = random_param_search(ModelKind::RUSBoost, small, base, d.view(), 4, 3, 8);
    CHECK(a.to_json() == b.to_json());
    CHECK(SearchResult::from_json(a.to_json()).to_json() == a.to_json());
    CHECK(space.grid(ModelKind::RUSBoost).size() == 4 * 4 * 3);
  }

  TEST_CASE("deep forest beats a forest of stumps") {
    const Data d = planted(11, 3000, 0.03);
    ParamSpace s;
    s.dims = {{"max_depth", {1, 50}}};
    auto base = EnsembleParams::balanced_rf_defaults();
    base.n_estimators = 200;
    const auto r = random_param_search(ModelKind::BalancedRF, s, base, d.view(), 2, 3, 2);
    CHECK(r.best().tree.max_depth == 50);
  }
}
