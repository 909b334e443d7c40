#include "xsell/cart.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xsell/error.hpp"
#include "xsell/rng.hpp"

namespace xsell {

namespace {

std::string_view max_features_name(MaxFeatures m) {
  switch (m) {
    case MaxFeatures::All:
      return "all";
    case MaxFeatures::Sqrt:
      return "sqrt";
    case MaxFeatures::Log2:
      return "log2";
    case MaxFeatures::Fraction:
      return "fraction";
  }
  return "?";
}

MaxFeatures parse_max_features(std::string_view s) {
  for (MaxFeatures m : {MaxFeatures::All, MaxFeatures::Sqrt, MaxFeatures::Log2,
                        MaxFeatures::Fraction}) {
    if (max_features_name(m) == s) return m;
  }
  throw ConfigError(fmt::format("unknown max_features '{}'", s));
}

struct Grower {
  const FeatureMatrix& x;
  std::span<const std::uint8_t> y;
  std::span<const double> w;
  const TreeParams& params;
  std::size_t k;
  Tree tree;
  std::vector<std::size_t> all_features;

  int grow(std::vector<std::size_t>& rows, int depth, std::uint64_t seed) {
    double w0 = 0.0, w1 = 0.0;
    for (std::size_t r : rows) (y[r] ? w1 : w0) += w[r];
    const int id = static_cast<int>(tree.nodes.size());
    TreeNode node;
    node.weight = w0 + w1;
    if (!(node.weight > 0.0)) throw NumericError("tree node with zero total weight");
    node.value = w1 / node.weight;
    tree.nodes.push_back(node);

    const bool depth_ok = params.max_depth < 0 || depth < params.max_depth;
    const bool enough = static_cast<int>(rows.size()) >= params.min_samples_split &&
                        static_cast<int>(rows.size()) >= 2 * params.min_samples_leaf;
    if (!depth_ok || !enough || w0 == 0.0 || w1 == 0.0) return id;

    const std::optional<Split> split = choose_split(rows, seed);
    if (!split) return id;

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) (x(r, split->feature) <= split->threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    tree.nodes[id].feature = static_cast<int>(split->feature);
    tree.nodes[id].threshold = split->threshold;
    const int l = grow(left, depth + 1, derive_seed(seed, {0}));
    tree.nodes[id].left = l;
    const int r = grow(right, depth + 1, derive_seed(seed, {1}));
    tree.nodes[id].right = r;
    return id;
  }

  std::optional<Split> choose_split(std::span<const std::size_t> rows, std::uint64_t seed) {
    if (k >= x.cols()) return best_split(x, y, w, rows, all_features, params.min_samples_leaf);
    std::vector<std::size_t> order = all_features;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    // Constant features do not count towards k; past k, keep drawing only
    // until some split is found.
    std::optional<Split> best;
    std::size_t visited = 0;
    for (std::size_t f : order) {
      if (visited >= k && best) break;
      const double first = x(rows[0], f);
      const bool constant = std::all_of(rows.begin(), rows.end(),
                                        [&](std::size_t r) { return x(r, f) == first; });
      if (constant) continue;
      ++visited;
      const std::size_t one[] = {f};
      const auto s = best_split(x, y, w, rows, one, params.min_samples_leaf);
      if (!s) continue;
      const bool better = !best || s->gain > best->gain + kGainTolerance ||
                          (!(s->gain < best->gain - kGainTolerance) &&
                           (s->feature < best->feature));
      if (better) best = s;
    }
    return best;
  }
};

}  // namespace

void TreeParams::validate() const {
  if (max_depth < -1) throw ConfigError("max_depth must be >= 0 or unlimited");
  if (min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
  if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
  if (min_samples_leaf > min_samples_split) {
    throw ConfigError("min_samples_leaf must not exceed min_samples_split");
  }
  if (max_features == MaxFeatures::Fraction &&
      !(max_features_fraction > 0.0 && max_features_fraction <= 1.0)) {
    throw ConfigError("max_features fraction must lie in (0, 1]");
  }
}

std::size_t TreeParams::features_per_split(std::size_t d) const {
  if (d == 0) return 0;
  double k = static_cast<double>(d);
  switch (max_features) {
    case MaxFeatures::All:
      break;
    case MaxFeatures::Sqrt:
      k = std::ceil(std::sqrt(static_cast<double>(d)));
      break;
    case MaxFeatures::Log2:
      k = std::ceil(std::log2(static_cast<double>(d)));
      break;
    case MaxFeatures::Fraction:
      k = std::ceil(max_features_fraction * d);
      break;
  }
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, d);
}

nlohmann::json TreeParams::to_json() const {
  nlohmann::json j{{"max_depth", nullptr},
                   {"min_samples_split", min_samples_split},
                   {"min_samples_leaf", min_samples_leaf},
                   {"max_features", std::string(max_features_name(max_features))}};
  if (max_depth >= 0) j["max_depth"] = max_depth;
  if (max_features == MaxFeatures::Fraction) j["max_features_fraction"] = max_features_fraction;
  return j;
}

TreeParams TreeParams::from_json(const nlohmann::json& j) {
  TreeParams p;
  try {
    if (j.contains("max_depth")) {
      const auto& d = j.at("max_depth");
      p.max_depth = d.is_null() || (d.is_string() && d.get<std::string>() == "none")
                        ? -1
                        : d.get<int>();
    }
    p.min_samples_split = j.value("min_samples_split", p.min_samples_split);
    p.min_samples_leaf = j.value("min_samples_leaf", p.min_samples_leaf);
    if (j.contains("max_features")) {
      const auto& m = j.at("max_features");
      if (m.is_number()) {
        p.max_features = MaxFeatures::Fraction;
        p.max_features_fraction = m.get<double>();
      } else {
        p.max_features = parse_max_features(m.get<std::string>());
      }
    }
    p.max_features_fraction = j.value("max_features_fraction", p.max_features_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("tree parameters: {}", e.what()));
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------

int Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes[i].is_leaf()) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
  }
  return best;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

void Tree::validate() const {
  if (nodes.empty()) throw DataError("tree has no nodes");
  const int n = static_cast<int>(nodes.size());
  for (int i = 0; i < n; ++i) {
    const TreeNode& node = nodes[i];
    if (node.is_leaf()) continue;
    if (node.feature >= static_cast<int>(n_features)) {
      throw DataError(fmt::format("tree node {} splits on feature {} of {}", i, node.feature,
                                  n_features));
    }
    if (node.left <= i || node.right <= i || node.left >= n || node.right >= n) {
      throw DataError(fmt::format("tree node {} has invalid children", i));
    }
    const double sum = nodes[node.left].weight + nodes[node.right].weight;
    if (std::abs(sum - node.weight) > 1e-9 * std::max(1.0, std::abs(node.weight))) {
      throw DataError(fmt::format("tree node {}: child weights do not sum to parent", i));
    }
  }
}

nlohmann::json Tree::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : nodes) {
    arr.push_back(nlohmann::json::array({n.feature, n.threshold, n.left, n.right, n.weight, n.value}));
  }
  return {{"n_features", n_features}, {"nodes", arr}};
}

Tree Tree::from_json(const nlohmann::json& j) {
  Tree t;
  try {
    t.n_features = j.at("n_features").get<std::size_t>();
    for (const auto& a : j.at("nodes")) {
      TreeNode n;
      n.feature = a.at(0).get<int>();
      n.threshold = a.at(1).get<double>();
      n.left = a.at(2).get<int>();
      n.right = a.at(3).get<int>();
      n.weight = a.at(4).get<double>();
      n.value = a.at(5).get<double>();
      t.nodes.push_back(n);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("tree: {}", e.what()));
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------

double gini_impurity(double w0, double w1) {
  const double total = w0 + w1;
  if (!(total > 0.0)) throw NumericError("gini impurity of an empty node");
  const double p0 = w0 / total;
  const double p1 = w1 / total;
  return 1.0 - p0 * p0 - p1 * p1;
}

std::optional<Split> best_split(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                                std::span<const double> w, std::span<const std::size_t> rows,
                                std::span<const std::size_t> features, int min_samples_leaf) {
  const std::size_t n = rows.size();
  const std::size_t min_leaf = static_cast<std::size_t>(std::max(1, min_samples_leaf));
  if (n < 2 * min_leaf) return std::nullopt;
  double tw0 = 0.0, tw1 = 0.0;
  for (std::size_t r : rows) (y[r] ? tw1 : tw0) += w[r];
  const double total = tw0 + tw1;
  if (!(total > 0.0)) return std::nullopt;
  const double parent = gini_impurity(tw0, tw1);

  std::optional<Split> best;
  std::vector<std::size_t> order(rows.begin(), rows.end());
  for (std::size_t f : features) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
    double lw0 = 0.0, lw1 = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const std::size_t r = order[i];
      (y[r] ? lw1 : lw0) += w[r];
      const double v = x(r, f);
      const double next = x(order[i + 1], f);
      if (!(v < next)) continue;
      if (i + 1 < min_leaf || n - (i + 1) < min_leaf) continue;
      const double lw = lw0 + lw1;
      const double rw = total - lw;
      if (!(lw > 0.0) || !(rw > 0.0)) continue;
      const double child =
          (lw / total) * gini_impurity(lw0, lw1) + (rw / total) * gini_impurity(tw0 - lw0, tw1 - lw1);
      const double gain = parent - child;
      if (!(gain > kGainTolerance)) continue;
      if (!best || gain > best->gain + kGainTolerance) {
        double threshold = 0.5 * (v + next);
        // Midpoint of adjacent doubles can round up to `next`.
        if (!(threshold < next)) threshold = v;
        best = Split{f, threshold, gain};
      }
    }
  }
  return best;
}

Tree fit_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y, std::span<const double> w,
              std::span<const std::size_t> rows, const TreeParams& params) {
  params.validate();
  if (rows.empty() || x.rows() == 0) throw DataError("cannot fit a tree on empty data");
  if (y.size() != x.rows() || w.size() != x.rows()) {
    throw DataError("fit_tree: labels and weights must match the row count");
  }
  Grower g{x, y, w, params, params.features_per_split(x.cols()), {}, {}};
  g.tree.n_features = x.cols();
  g.all_features.resize(x.cols());
  std::iota(g.all_features.begin(), g.all_features.end(), std::size_t{0});
  std::vector<std::size_t> root(rows.begin(), rows.end());
  g.grow(root, 0, params.seed);
  return std::move(g.tree);
}

Tree fit_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y, const TreeParams& params) {
  std::vector<double> w(x.rows(), 1.0);
  std::vector<std::size_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return fit_tree(x, y, w, rows, params);
}

std::size_t leaf_index(const Tree& tree, std::span<const double> row) {
  if (row.size() != tree.n_features) {
    throw DataError(fmt::format("row has {} features, tree expects {}", row.size(),
                                tree.n_features));
  }
  std::size_t i = 0;
  while (!tree.nodes[i].is_leaf()) {
    const TreeNode& n = tree.nodes[i];
    i = static_cast<std::size_t>(row[n.feature] <= n.threshold ? n.left : n.right);
  }
  return i;
}

double predict_tree(const Tree& tree, std::span<const double> row) {
  return tree.nodes[leaf_index(tree, row)].value;
}

}  // namespace xsell
