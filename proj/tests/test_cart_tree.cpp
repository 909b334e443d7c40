#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "doctest.h"
#include "xsell/cart.hpp"
#include "xsell/error.hpp"
#include "xsell/rng.hpp"

using namespace xsell;

namespace {

struct Fixture {
  FeatureMatrix x;
  std::vector<std::uint8_t> y;
};

Fixture random_fixture(Rng& rng, std::size_t n, std::size_t d, int levels) {
  Fixture f{FeatureMatrix(n, d), std::vector<std::uint8_t>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) f.x(r, c) = double(rng.below(levels));
    f.y[r] = (f.x(r, 0) + f.x(r, d - 1) > levels - 1) != rng.bernoulli(0.15);
  }
  return f;
}

double gini_counts(double n0, double n1) {
  const double n = n0 + n1;
  return 1.0 - (n0 / n) * (n0 / n) - (n1 / n) * (n1 / n);
}

// Every (feature, midpoint) pair, first maximum wins.
std::optional<Split> exhaustive_split(const Fixture& f, const std::vector<std::size_t>& rows,
                                      int min_leaf) {
  double p0 = 0, p1 = 0;
  for (auto r : rows) (f.y[r] ? p1 : p0) += 1;
  const double parent = gini_counts(p0, p1);
  std::optional<Split> best;
  for (std::size_t c = 0; c < f.x.cols(); ++c) {
    std::set<double> vals;
    for (auto r : rows) vals.insert(f.x(r, c));
    for (auto it = vals.begin(); std::next(it) != vals.end(); ++it) {
      const double th = 0.5 * (*it + *std::next(it));
      double l0 = 0, l1 = 0, r0 = 0, r1 = 0;
      for (auto r : rows) {
        if (f.x(r, c) <= th)
          (f.y[r] ? l1 : l0) += 1;
        else
          (f.y[r] ? r1 : r0) += 1;
      }
      if (l0 + l1 < min_leaf || r0 + r1 < min_leaf) continue;
      const double n = double(rows.size());
      const double gain =
          parent - (l0 + l1) / n * gini_counts(l0, l1) - (r0 + r1) / n * gini_counts(r0, r1);
      if (gain <= kGainTolerance) continue;
      if (!best || gain > best->gain + kGainTolerance) best = Split{c, th, gain};
    }
  }
  return best;
}

void reference_grow(const Fixture& f, const std::vector<std::size_t>& rows, int depth,
                    int max_depth, std::vector<TreeNode>& out) {
  double n1 = 0;
  for (auto r : rows) n1 += f.y[r];
  const int id = int(out.size());
  out.push_back(TreeNode{-1, 0.0, -1, -1, double(rows.size()), n1 / double(rows.size())});
  if (depth >= max_depth || n1 == 0 || n1 == double(rows.size()) || rows.size() < 2) return;
  const auto s = exhaustive_split(f, rows, 1);
  if (!s) return;
  std::vector<std::size_t> l, r;
  for (auto i : rows) (f.x(i, s->feature) <= s->threshold ? l : r).push_back(i);
  out[id].feature = int(s->feature);
  out[id].threshold = s->threshold;
  out[id].left = int(out.size());
  reference_grow(f, l, depth + 1, max_depth, out);
  out[id].right = int(out.size());
  reference_grow(f, r, depth + 1, max_depth, out);
}

double manual_walk(const Tree& t, std::span<const double> row) {
  int i = 0;
  while (t.nodes[i].feature >= 0) {
    const auto& n = t.nodes[i];
    i = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return t.nodes[i].value;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

}  // namespace

TEST_CASE("gini impurity") {
  CHECK(gini_impurity(10, 0) == 0.0);
  CHECK(gini_impurity(5, 5) == 0.5);
  CHECK(gini_impurity(3, 1) == doctest::Approx(0.375));
  CHECK_THROWS_AS(gini_impurity(0, 0), NumericError);
}

TEST_CASE("separable feature is split with gain equal to parent impurity") {
  FeatureMatrix x(6, 2);
  std::vector<std::uint8_t> y = {0, 0, 0, 1, 1, 1};
  for (std::size_t r = 0; r < 6; ++r) {
    x(r, 0) = double(r % 2);
    x(r, 1) = double(r);
  }
  const std::vector<double> w(6, 1.0);
  const auto rows = all_rows(6);
  const std::vector<std::size_t> feats = {0, 1};
  const auto s = best_split(x, y, w, rows, feats);
  REQUIRE(s);
  CHECK(s->feature == 1);
  CHECK(s->threshold == 2.5);
  CHECK(s->gain == doctest::Approx(0.5));
}

TEST_CASE("constant features give no split") {
  FeatureMatrix x(5, 2, 3.0);
  std::vector<std::uint8_t> y = {0, 1, 0, 1, 1};
  const std::vector<double> w(5, 1.0);
  const auto rows = all_rows(5);
  const std::vector<std::size_t> feats = {0, 1};
  CHECK_FALSE(best_split(x, y, w, rows, feats).has_value());
}

TEST_CASE("best split equals exhaustive enumeration") {
  Rng rng(5);
  for (int rep = 0; rep < 300; ++rep) {
    const Fixture f = random_fixture(rng, 12, 4, 5);
    const std::vector<double> w(12, 1.0);
    const auto rows = all_rows(12);
    const std::vector<std::size_t> feats = {0, 1, 2, 3};
    const int min_leaf = 1 + rep % 3;
    const auto got = best_split(f.x, f.y, w, rows, feats, min_leaf);
    const auto want = exhaustive_split(f, rows, min_leaf);
    REQUIRE(got.has_value() == want.has_value());
    if (!got) continue;
    CHECK(got->feature == want->feature);
    CHECK(got->threshold == want->threshold);
    CHECK(got->gain == doctest::Approx(want->gain).epsilon(1e-12));
  }
}

TEST_CASE("duplicated rows count as separate samples") {
  Rng rng(6);
  const Fixture f = random_fixture(rng, 12, 3, 4);
  std::vector<std::size_t> rows = all_rows(12);
  rows.insert(rows.end(), {0, 0, 3, 5});
  // Expand into an explicit fixture with the duplicates materialized.
  Fixture g{FeatureMatrix(), {}};
  g.x.set_cols(3);
  for (auto r : rows) {
    g.x.append_row(f.x.row(r));
    g.y.push_back(f.y[r]);
  }
  const std::vector<double> w(12, 1.0);
  const std::vector<std::size_t> feats = {0, 1, 2};
  const auto got = best_split(f.x, f.y, w, rows, feats);
  const auto want = exhaustive_split(g, all_rows(rows.size()), 1);
  REQUIRE(got.has_value() == want.has_value());
  if (got) {
    CHECK(got->feature == want->feature);
    CHECK(got->gain == doctest::Approx(want->gain));
  }
}

TEST_CASE("max depth 0 is a single leaf") {
  Rng rng(7);
  const Fixture f = random_fixture(rng, 40, 3, 4);
  TreeParams p;
  p.max_depth = 0;
  const Tree t = fit_tree(f.x, f.y, p);
  REQUIRE(t.nodes.size() == 1);
  double pos = 0;
  for (auto v : f.y) pos += v;
  CHECK(t.nodes[0].value == doctest::Approx(pos / 40));
  CHECK(predict_tree(t, f.x.row(3)) == t.nodes[0].value);
}

TEST_CASE("unlimited depth fits separable data exactly") {
  Rng rng(8);
  FeatureMatrix x(200, 3);
  std::vector<std::uint8_t> y(200);
  for (std::size_t r = 0; r < 200; ++r) {
    for (std::size_t c = 0; c < 3; ++c) x(r, c) = rng.uniform();
    y[r] = x(r, 0) + 0.5 * x(r, 1) > 0.8;
  }
  const Tree t = fit_tree(x, y, TreeParams{});
  for (std::size_t r = 0; r < 200; ++r) CHECK(predict_tree(t, x.row(r)) == double(y[r]));
  t.validate();
}

TEST_CASE("depth-2 tree equals the reference grower") {
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    const Fixture f = random_fixture(rng, 30, 4, 6);
    TreeParams p;
    p.max_depth = 2;
    const Tree t = fit_tree(f.x, f.y, p);
    std::vector<TreeNode> want;
    reference_grow(f, all_rows(30), 0, 2, want);
    REQUIRE(t.nodes.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(t.nodes[i].feature == want[i].feature);
      CHECK(t.nodes[i].threshold == want[i].threshold);
      CHECK(t.nodes[i].left == want[i].left);
      CHECK(t.nodes[i].right == want[i].right);
      CHECK(t.nodes[i].weight == want[i].weight);
      CHECK(t.nodes[i].value == doctest::Approx(want[i].value));
    }
  }
}

TEST_CASE("threshold ties go left") {
  Tree t;
  t.n_features = 1;
  t.nodes = {{0, 0.5, 1, 2, 2.0, 0.5}, {-1, 0, -1, -1, 1.0, 0.0}, {-1, 0, -1, -1, 1.0, 1.0}};
  const double at[] = {0.5}, above[] = {0.5000001};
  CHECK(predict_tree(t, at) == 0.0);
  CHECK(predict_tree(t, above) == 1.0);
}

TEST_CASE("prediction equals a manual root-to-leaf walk") {
  Rng rng(10);
  const Fixture f = random_fixture(rng, 150, 5, 7);
  TreeParams p;
  p.max_features = MaxFeatures::Sqrt;
  p.min_samples_leaf = 2;
  p.seed = 4;
  const Tree t = fit_tree(f.x, f.y, p);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> row(5);
    for (auto& v : row) v = rng.uniform() * 7;
    CHECK(predict_tree(t, row) == manual_walk(t, row));
  }
  for (const auto& n : t.nodes)
    if (n.is_leaf()) CHECK(n.weight >= 2.0);
}

TEST_CASE("fit is deterministic and serializes") {
  Rng rng(11);
  const Fixture f = random_fixture(rng, 80, 6, 5);
  TreeParams p;
  p.max_features = MaxFeatures::Log2;
  p.seed = 99;
  const Tree a = fit_tree(f.x, f.y, p), b = fit_tree(f.x, f.y, p);
  CHECK(a == b);
  CHECK(Tree::from_json(a.to_json()) == a);
  CHECK(TreeParams::from_json(p.to_json()).to_json() == p.to_json());
}

TEST_CASE("features per split") {
  TreeParams p;
  CHECK(p.features_per_split(10) == 10);
  p.max_features = MaxFeatures::Sqrt;
  CHECK(p.features_per_split(10) == 4);
  p.max_features = MaxFeatures::Log2;
  CHECK(p.features_per_split(10) == 4);
  p.max_features = MaxFeatures::Fraction;
  p.max_features_fraction = 0.01;
  CHECK(p.features_per_split(10) == 1);
}

TEST_CASE("invalid inputs") {
  TreeParams p;
  p.min_samples_split = 1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  Tree t;
  t.n_features = 1;
  t.nodes = {{0, 0.5, 5, 6, 1.0, 0.5}};
  CHECK_THROWS_AS(t.validate(), DataError);
  const std::vector<double> row = {1.0, 2.0};
  t.nodes = {{-1, 0, -1, -1, 1.0, 0.5}};
  CHECK_THROWS_AS(predict_tree(t, row), DataError);
}
