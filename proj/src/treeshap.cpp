#include "xsell/treeshap.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include "xsell/csv.hpp"
#include "xsell/error.hpp"
#include "xsell/parallel.hpp"
#include "xsell/rng.hpp"

namespace xsell {

namespace {

struct PathElement {
  int feature = -1;
  double zero = 0.0;
  double one = 0.0;
  double pweight = 0.0;
};

void extend_path(PathElement* path, int depth, double zero, double one, int feature) {
  path[depth] = {feature, zero, one, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[i].pweight = zero * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

void unwind_path(PathElement* path, int depth, int index) {
  const double one = path[index].one;
  const double zero = path[index].zero;
  double next = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].pweight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero = path[i + 1].zero;
    path[i].one = path[i + 1].one;
  }
}

double unwound_path_sum(const PathElement* path, int depth, int index) {
  const double one = path[index].one;
  const double zero = path[index].zero;
  double next = path[depth].pweight;
  double total = 0.0;
  if (one != 0.0) {
    for (int i = depth - 1; i >= 0; --i) {
      const double tmp = next / ((i + 1) * one);
      total += tmp;
      next = path[i].pweight - tmp * zero * (depth - i);
    }
  } else {
    for (int i = depth - 1; i >= 0; --i) total += path[i].pweight / (zero * (depth - i));
  }
  return total * (depth + 1);
}

struct ShapWalker {
  const Tree& tree;
  std::span<const double> outputs;
  std::span<const double> row;
  std::span<double> phi;
  double scale;
  std::vector<PathElement> buffer;

  // `path` points at the parent's segment; this node's segment follows it.
  void recurse(int node, int depth, PathElement* parent, double zero, double one, int feature) {
    PathElement* path = parent + depth + 1;
    std::copy(parent, parent + depth + 1, path);
    extend_path(path, depth, zero, one, feature);
    const TreeNode& n = tree.nodes[node];
    if (n.is_leaf()) {
      const double v = outputs[node] * scale;
      for (int i = 1; i <= depth; ++i) {
        const double w = unwound_path_sum(path, depth, i);
        phi[path[i].feature] += w * (path[i].one - path[i].zero) * v;
      }
      return;
    }
    if (!(n.weight > 0.0)) throw NumericError(fmt::format("tree node {} has no weight", node));
    const bool go_left = row[n.feature] <= n.threshold;
    const int hot = go_left ? n.left : n.right;
    const int cold = go_left ? n.right : n.left;
    double in_zero = 1.0, in_one = 1.0;
    int k = 1;
    for (; k <= depth; ++k) {
      if (path[k].feature == n.feature) break;
    }
    if (k <= depth) {
      in_zero = path[k].zero;
      in_one = path[k].one;
      unwind_path(path, depth, k);
      --depth;
    }
    const double hot_frac = tree.nodes[hot].weight / n.weight;
    const double cold_frac = tree.nodes[cold].weight / n.weight;
    recurse(hot, depth + 1, path, hot_frac * in_zero, in_one, n.feature);
    recurse(cold, depth + 1, path, cold_frac * in_zero, 0.0, n.feature);
  }
};

double path_value(const Tree& tree, std::span<const double> outputs, std::span<const double> row,
                  std::uint64_t mask, int node) {
  const TreeNode& n = tree.nodes[node];
  if (n.is_leaf()) return outputs[node];
  if (mask >> n.feature & 1U) {
    return path_value(tree, outputs, row, mask, row[n.feature] <= n.threshold ? n.left : n.right);
  }
  if (!(n.weight > 0.0)) throw NumericError(fmt::format("tree node {} has no weight", node));
  const double wl = tree.nodes[n.left].weight / n.weight;
  const double wr = tree.nodes[n.right].weight / n.weight;
  return wl * path_value(tree, outputs, row, mask, n.left) +
         wr * path_value(tree, outputs, row, mask, n.right);
}

double parse_cell(const std::string& s, const std::string& source, std::size_t row,
                  std::string_view column) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(fmt::format("{}: row {}, column '{}': non-numeric value '{}'", source, row,
                                column, s));
  }
  return v;
}

}  // namespace

std::vector<double> node_outputs(const Tree& tree) {
  std::vector<double> out(tree.nodes.size());
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) out[i] = tree.nodes[i].value;
  return out;
}

std::vector<double> node_outputs(const Tree& tree, const EnsembleModel& model) {
  std::vector<double> out(tree.nodes.size());
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) out[i] = model.leaf_output(tree.nodes[i]);
  return out;
}

double expected_value(const Tree& tree, std::span<const double> outputs) {
  const double root = tree.nodes.at(0).weight;
  if (!(root > 0.0)) throw NumericError("tree root has no weight");
  double s = 0.0;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (tree.nodes[i].is_leaf()) s += tree.nodes[i].weight / root * outputs[i];
  }
  return s;
}

void tree_shap(const Tree& tree, std::span<const double> outputs, std::span<const double> row,
               std::span<double> phi, double scale) {
  if (row.size() != tree.n_features || phi.size() != tree.n_features) {
    throw DataError(fmt::format("row has {} features, tree expects {}", row.size(),
                                tree.n_features));
  }
  if (outputs.size() != tree.nodes.size()) throw DataError("tree_shap: one output per node required");
  const int max_depth = tree.depth() + 2;
  ShapWalker walker{tree, outputs, row, phi, scale, {}};
  walker.buffer.resize(static_cast<std::size_t>((max_depth + 1) * (max_depth + 2)));
  walker.recurse(0, 0, walker.buffer.data(), 1.0, 1.0, -1);
}

ShapVector tree_shap(const Tree& tree, std::span<const double> row) {
  const auto out = node_outputs(tree);
  ShapVector v;
  v.values.assign(tree.n_features, 0.0);
  tree_shap(tree, out, row, v.values);
  v.base = expected_value(tree, out);
  return v;
}

double path_dependent_value(const Tree& tree, std::span<const double> outputs,
                            std::span<const double> row, std::uint64_t mask) {
  return path_value(tree, outputs, row, mask, 0);
}

std::vector<double> brute_force_shapley(const std::function<double(std::uint64_t)>& value,
                                        std::size_t d) {
  if (d > kMaxBruteForceFeatures) {
    throw DataError(fmt::format("brute-force Shapley supports at most {} features, got {}",
                                kMaxBruteForceFeatures, d));
  }
  const std::uint64_t n_masks = std::uint64_t{1} << d;
  std::vector<double> v(n_masks);
  for (std::uint64_t m = 0; m < n_masks; ++m) v[m] = value(m);
  // weight[s] = s! (d - s - 1)! / d!
  std::vector<double> weight(d == 0 ? 1 : d);
  for (std::size_t s = 0; s < d; ++s) {
    double w = 1.0 / static_cast<double>(d);
    // 1 / (d * C(d-1, s))
    for (std::size_t i = 1; i <= s; ++i) w *= static_cast<double>(i) / static_cast<double>(d - i);
    weight[s] = w;
  }
  std::vector<double> phi(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const std::uint64_t bit = std::uint64_t{1} << j;
    for (std::uint64_t m = 0; m < n_masks; ++m) {
      if (m & bit) continue;
      phi[j] += weight[static_cast<std::size_t>(std::popcount(m))] * (v[m | bit] - v[m]);
    }
  }
  return phi;
}

std::vector<double> brute_force_shapley(const Tree& tree, std::span<const double> outputs,
                                        std::span<const double> row) {
  if (row.size() != tree.n_features) throw DataError("brute_force_shapley: dimension mismatch");
  return brute_force_shapley(
      [&](std::uint64_t mask) { return path_dependent_value(tree, outputs, row, mask); },
      tree.n_features);
}

// ---------------------------------------------------------------------------

double ShapMatrix::max_additivity_error() const {
  double worst = 0.0;
  for (std::size_t r = 0; r < values.rows(); ++r) {
    double s = base_value;
    for (double v : values.row(r)) s += v;
    const double scale = std::max({1.0, std::abs(outputs[r]), std::abs(base_value)});
    worst = std::max(worst, std::abs(s - outputs[r]) / scale);
  }
  return worst;
}

std::string ShapMatrix::values_csv() const {
  CsvWriter w;
  std::vector<std::string> cells{"instance_id"};
  cells.insert(cells.end(), feature_names.begin(), feature_names.end());
  w.row(cells);
  for (std::size_t r = 0; r < values.rows(); ++r) {
    cells.clear();
    cells.push_back(instance_ids[r]);
    for (double v : values.row(r)) cells.push_back(format_double(v));
    w.row(cells);
  }
  return w.str();
}

nlohmann::json ShapMatrix::meta_json() const {
  return {{"base_value", base_value},
          {"fold_id", fold_id},
          {"model_ref", model_ref},
          {"feature_names", feature_names},
          {"rows", values.rows()},
          {"max_additivity_error", max_additivity_error()},
          {"outputs", outputs}};
}

void ShapMatrix::write(const std::filesystem::path& stem) const {
  auto csv = stem;
  auto json = stem;
  csv += ".csv";
  json += ".json";
  write_file_atomic(csv, values_csv());
  write_file_atomic(json, meta_json().dump(2) + "\n");
}

ShapMatrix ShapMatrix::read(const std::filesystem::path& stem) {
  auto csv_path = stem;
  auto json_path = stem;
  csv_path += ".csv";
  json_path += ".json";
  ShapMatrix m;
  try {
    const auto meta = nlohmann::json::parse(read_file(json_path));
    m.base_value = meta.at("base_value").get<double>();
    m.fold_id = meta.at("fold_id").get<int>();
    m.model_ref = meta.at("model_ref").get<std::string>();
    m.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
    m.outputs = meta.at("outputs").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", json_path.string(), e.what()));
  }
  const CsvTable t = read_csv(csv_path);
  if (t.header.size() != m.feature_names.size() + 1) {
    throw DataError(fmt::format("{}: header does not match metadata", csv_path.string()));
  }
  m.values = FeatureMatrix(t.rows.size(), m.feature_names.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    m.instance_ids.push_back(t.rows[r][0]);
    for (std::size_t c = 0; c < m.feature_names.size(); ++c) {
      m.values(r, c) = parse_cell(t.rows[r][c + 1], csv_path.string(), r + 1, m.feature_names[c]);
    }
  }
  if (m.outputs.size() != m.values.rows()) {
    throw DataError(fmt::format("{}: output count does not match rows", json_path.string()));
  }
  return m;
}

ShapMatrix ensemble_shap(const EnsembleModel& model, const FeatureMatrix& rows, int threads) {
  const std::size_t d = model.feature_names.size();
  if (rows.cols() != d) {
    throw DataError(fmt::format("rows have {} features, model expects {}", rows.cols(), d));
  }
  const double total = model.weight_sum();
  if (!(total > 0.0)) throw NumericError("model tree weights sum to zero");
  std::vector<std::vector<double>> outputs(model.trees.size());
  ShapMatrix m;
  m.feature_names = model.feature_names;
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    outputs[t] = node_outputs(model.trees[t], model);
    m.base_value += model.tree_weights[t] / total * expected_value(model.trees[t], outputs[t]);
  }
  m.values = FeatureMatrix(rows.rows(), d);
  m.outputs.assign(rows.rows(), 0.0);
  parallel_for(rows.rows(), threads, [&](std::size_t r) {
    std::span<double> phi = m.values.row(r);
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
      tree_shap(model.trees[t], outputs[t], rows.row(r), phi, model.tree_weights[t] / total);
    }
    m.outputs[r] = predict_proba(model, rows.row(r));
  });
  for (std::size_t r = 0; r < rows.rows(); ++r) m.instance_ids.push_back(std::to_string(r));
  return m;
}

ShapMatrix concat_shap(std::span<const ShapMatrix> parts) {
  if (parts.empty()) throw DataError("no SHAP matrices to combine");
  ShapMatrix out;
  out.feature_names = parts[0].feature_names;
  out.base_value = parts[0].base_value;
  out.fold_id = -1;
  out.model_ref = "combined";
  out.values.set_cols(out.feature_names.size());
  double base_sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.feature_names != out.feature_names) throw DataError("SHAP matrices have different features");
    for (std::size_t r = 0; r < p.rows(); ++r) {
      out.values.append_row(p.values.row(r));
      out.instance_ids.push_back(p.instance_ids[r]);
      out.outputs.push_back(p.outputs[r]);
    }
    base_sum += p.base_value * static_cast<double>(p.rows());
    n += p.rows();
  }
  // Fold models have different base values; the combined matrix keeps their
  // row-weighted mean and is not expected to be additive.
  if (n > 0) out.base_value = base_sum / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------

ShapSummary shap_summary(const ShapMatrix& shap, const FeatureMatrix& feature_values,
                         std::size_t top_k, std::uint64_t seed) {
  const std::size_t n = shap.rows();
  const std::size_t d = shap.feature_names.size();
  if (n == 0) throw DataError("SHAP summary of an empty matrix");
  if (feature_values.rows() != n || feature_values.cols() != d) {
    throw DataError("SHAP summary: feature values do not match the SHAP matrix");
  }
  ShapSummary s;
  for (std::size_t j = 0; j < d; ++j) {
    FeatureImportance fi;
    fi.feature = shap.feature_names[j];
    fi.column = j;
    double sx = 0, sy = 0;
    for (std::size_t r = 0; r < n; ++r) {
      fi.mean_abs += std::abs(shap.values(r, j));
      sy += shap.values(r, j);
      sx += feature_values(r, j);
    }
    fi.mean_abs /= n;
    fi.mean_shap = sy / n;
    const double mx = sx / n, my = sy / n;
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const double dx = feature_values(r, j) - mx;
      const double dy = shap.values(r, j) - my;
      cov += dx * dy;
      vx += dx * dx;
      vy += dy * dy;
    }
    if (vx > 0 && vy > 0) {
      const double corr = cov / std::sqrt(vx * vy);
      fi.direction = corr > 1e-12 ? 1 : (corr < -1e-12 ? -1 : 0);
    }
    s.ranking.push_back(std::move(fi));
  }
  std::sort(s.ranking.begin(), s.ranking.end(),
            [](const FeatureImportance& a, const FeatureImportance& b) {
              if (a.mean_abs != b.mean_abs) return a.mean_abs > b.mean_abs;
              return a.feature < b.feature;
            });
  for (std::size_t i = 0; i < s.ranking.size(); ++i) s.ranking[i].rank = i + 1;

  for (std::size_t i = 0; i < std::min(top_k, d); ++i) {
    const FeatureImportance& fi = s.ranking[i];
    const std::size_t j = fi.column;
    double lo = feature_values(0, j), hi = lo;
    for (std::size_t r = 0; r < n; ++r) {
      lo = std::min(lo, feature_values(r, j));
      hi = std::max(hi, feature_values(r, j));
    }
    for (std::size_t r = 0; r < n; ++r) {
      BeeswarmPoint p;
      p.rank = fi.rank;
      p.feature = fi.feature;
      p.instance_id = shap.instance_ids[r];
      p.shap = shap.values(r, j);
      p.color = hi > lo ? (feature_values(r, j) - lo) / (hi - lo) : 0.5;
      Rng rng(derive_seed(seed, {j, r}));
      p.jitter = 0.8 * rng.uniform() - 0.4;
      s.points.push_back(std::move(p));
    }
  }
  return s;
}

std::string ShapSummary::ranking_csv() const {
  CsvWriter w;
  w.row({"rank", "feature", "mean_abs_shap", "mean_shap", "direction"});
  for (const auto& f : ranking) {
    w.row({std::to_string(f.rank), f.feature, format_double(f.mean_abs), format_double(f.mean_shap),
           std::to_string(f.direction)});
  }
  return w.str();
}

std::string ShapSummary::points_csv() const {
  CsvWriter w;
  w.row({"rank", "feature", "instance_id", "shap", "color", "jitter"});
  for (const auto& p : points) {
    w.row({std::to_string(p.rank), p.feature, p.instance_id, format_double(p.shap),
           format_double(p.color), format_double(p.jitter)});
  }
  return w.str();
}

std::vector<FeatureImportance> ShapSummary::parse_ranking_csv(std::string_view text,
                                                              const std::string& source) {
  const CsvTable t = parse_csv(text, source);
  const auto rank = t.column("rank");
  const auto feature = t.column("feature");
  const auto mean_abs = t.column("mean_abs_shap");
  const auto mean = t.column("mean_shap");
  const auto dir = t.column("direction");
  std::vector<FeatureImportance> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    FeatureImportance f;
    f.rank = static_cast<std::size_t>(parse_cell(row[rank], source, r + 1, "rank"));
    f.feature = row[feature];
    f.column = r;
    f.mean_abs = parse_cell(row[mean_abs], source, r + 1, "mean_abs_shap");
    f.mean_shap = parse_cell(row[mean], source, r + 1, "mean_shap");
    f.direction = static_cast<int>(parse_cell(row[dir], source, r + 1, "direction"));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace xsell
