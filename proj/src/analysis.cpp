#include "xsell/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "xsell/csv.hpp"
#include "xsell/error.hpp"
#include "xsell/parallel.hpp"

namespace xsell {

std::string_view tag_name(RobustnessTag t) {
  switch (t) {
    case RobustnessTag::RobustNs:
      return "robust_ns";
    case RobustnessTag::RobustSmallEffect:
      return "robust_small_effect";
    case RobustnessTag::NotRobust:
      break;
  }
  return "not_robust";
}

std::string_view tag_light(RobustnessTag t) {
  switch (t) {
    case RobustnessTag::RobustNs:
      return "green";
    case RobustnessTag::RobustSmallEffect:
      return "yellow";
    case RobustnessTag::NotRobust:
      break;
  }
  return "red";
}

RobustnessTag parse_tag(std::string_view s) {
  if (s == "robust_ns") return RobustnessTag::RobustNs;
  if (s == "robust_small_effect") return RobustnessTag::RobustSmallEffect;
  if (s == "not_robust") return RobustnessTag::NotRobust;
  throw DataError(fmt::format("unknown robustness tag '{}'", s));
}

RobustnessTag robustness_tag(double p, double effect_size, double alpha,
                             double small_effect_cutoff) {
  if (p >= alpha) return RobustnessTag::RobustNs;
  if (effect_size < small_effect_cutoff) return RobustnessTag::RobustSmallEffect;
  return RobustnessTag::NotRobust;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "n.s.";
}

std::string FeatureRobustness::annotation() const {
  const std::string stars = significance_stars(p);
  if (stars == "n.s.") return stars;
  return fmt::format("{} {:.2f}", stars, effect_size);
}

std::size_t RobustnessReport::robust_count(std::size_t top_k) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < std::min(top_k, features.size()); ++i) {
    if (features[i].tag != RobustnessTag::NotRobust) ++n;
  }
  return n;
}

std::string RobustnessReport::to_csv() const {
  CsvWriter w;
  w.row({"rank", "feature", "H", "df", "p", "stars", "effect_size", "tag", "light", "annotation"});
  for (const auto& f : features) {
    w.row({std::to_string(f.rank), f.feature, format_double(f.h), format_double(f.df),
           format_double(f.p), significance_stars(f.p), format_double(f.effect_size),
           std::string(tag_name(f.tag)), std::string(tag_light(f.tag)), f.annotation()});
  }
  return w.str();
}

nlohmann::json RobustnessReport::to_json() const {
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : features) {
    feats.push_back({{"rank", f.rank},
                     {"feature", f.feature},
                     {"H", f.h},
                     {"df", f.df},
                     {"p", f.p},
                     {"effect_size", f.effect_size},
                     {"tag", std::string(tag_name(f.tag))},
                     {"annotation", f.annotation()}});
  }
  return {{"alpha", alpha},
          {"small_effect_cutoff", small_effect_cutoff},
          {"fold_ids", fold_ids},
          {"buyer_count", buyer_count},
          {"dropped_folds", dropped_folds},
          {"warnings", warnings},
          {"features", feats}};
}

RobustnessReport RobustnessReport::from_json(const nlohmann::json& j) {
  RobustnessReport r;
  try {
    r.alpha = j.at("alpha").get<double>();
    r.small_effect_cutoff = j.at("small_effect_cutoff").get<double>();
    r.fold_ids = j.at("fold_ids").get<std::vector<int>>();
    r.buyer_count = j.at("buyer_count").get<std::vector<std::size_t>>();
    r.dropped_folds = j.at("dropped_folds").get<std::vector<int>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& f : j.at("features")) {
      r.features.push_back({f.at("rank").get<std::size_t>(), f.at("feature").get<std::string>(),
                            f.at("H").get<double>(), f.at("df").get<double>(),
                            f.at("p").get<double>(), f.at("effect_size").get<double>(),
                            parse_tag(f.at("tag").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("robustness report: {}", e.what()));
  }
  return r;
}

RobustnessReport fold_robustness(std::span<const ShapMatrix> folds,
                                 std::span<const std::vector<std::uint8_t>> buyers,
                                 const RobustnessOptions& options,
                                 std::span<const std::string> order, int threads) {
  if (folds.size() != buyers.size()) throw DataError("one buyer mask per fold required");
  if (folds.empty()) throw DataError("robustness analysis needs SHAP values of at least 2 folds");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) {
    throw ConfigError(fmt::format("alpha must lie in (0,1), got {}", options.alpha));
  }
  const auto& names = folds[0].feature_names;
  RobustnessReport rep;
  rep.alpha = options.alpha;
  rep.small_effect_cutoff = options.small_effect_cutoff;
  std::vector<std::size_t> used;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (folds[f].feature_names != names) throw DataError("fold SHAP matrices have different features");
    if (buyers[f].size() != folds[f].rows()) {
      throw DataError(fmt::format("fold {}: buyer mask has {} entries for {} rows", folds[f].fold_id,
                                  buyers[f].size(), folds[f].rows()));
    }
    const auto n = static_cast<std::size_t>(std::count(buyers[f].begin(), buyers[f].end(), 1));
    const int id = folds[f].fold_id >= 0 ? folds[f].fold_id : static_cast<int>(f);
    if (n == 0) {
      rep.dropped_folds.push_back(id);
      rep.warnings.push_back(fmt::format("fold {} has no buyers and was left out", id));
      continue;
    }
    used.push_back(f);
    rep.fold_ids.push_back(id);
    rep.buyer_count.push_back(n);
  }
  if (used.size() < 2) {
    throw DataError(fmt::format("robustness analysis needs at least 2 folds with buyers, got {}",
                                used.size()));
  }

  std::vector<std::size_t> columns;
  if (order.empty()) {
    for (std::size_t c = 0; c < names.size(); ++c) columns.push_back(c);
  } else {
    for (const auto& name : order) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw DataError(fmt::format("unknown feature '{}'", name));
      columns.push_back(static_cast<std::size_t>(it - names.begin()));
    }
  }
  rep.features.resize(columns.size());
  parallel_for(columns.size(), threads, [&](std::size_t i) {
    const std::size_t c = columns[i];
    std::vector<std::vector<double>> groups;
    for (std::size_t f : used) {
      std::vector<double> g;
      for (std::size_t r = 0; r < folds[f].rows(); ++r) {
        if (buyers[f][r]) g.push_back(folds[f].values(r, c));
      }
      groups.push_back(std::move(g));
    }
    const KruskalWallisResult kw = kruskal_wallis(groups);
    FeatureRobustness& out = rep.features[i];
    out.rank = i + 1;
    out.feature = names[c];
    out.h = kw.h;
    out.df = kw.df;
    out.p = kw.p;
    out.effect_size = kw.effect_size;
    out.tag = robustness_tag(kw.p, kw.effect_size, options.alpha, options.small_effect_cutoff);
  });
  return rep;
}

// ---------------------------------------------------------------------------

std::vector<Hypothesis> hypotheses_from_ranking(std::span<const FeatureImportance> ranking,
                                                std::size_t top_k) {
  std::vector<Hypothesis> out;
  for (std::size_t i = 0; i < std::min(top_k, ranking.size()); ++i) {
    const auto& f = ranking[i];
    const Direction d = f.direction > 0   ? Direction::Greater
                        : f.direction < 0 ? Direction::Less
                                          : Direction::TwoSided;
    out.push_back({f.rank, f.feature, d});
  }
  return out;
}

std::string_view test_name(ValidationTest t) {
  switch (t) {
    case ValidationTest::WelchT:
      return "welch_t";
    case ValidationTest::StudentT:
      return "student_t";
    case ValidationTest::ChiSquared:
      break;
  }
  return "chi_squared";
}

ValidationTest parse_test(std::string_view s) {
  if (s == "welch_t") return ValidationTest::WelchT;
  if (s == "student_t") return ValidationTest::StudentT;
  if (s == "chi_squared") return ValidationTest::ChiSquared;
  throw DataError(fmt::format("unknown test '{}'", s));
}

std::string format_p_value(double p) {
  if (p < 0.001) return "< .001";
  std::string s = fmt::format("{:.3f}", p);
  if (s.starts_with("0")) s.erase(0, 1);
  return s;
}

std::size_t ValidationReport::confirmed_count() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const ValidationRow& r) { return r.confirmed; }));
}

std::string ValidationReport::table_csv() const {
  CsvWriter w;
  w.row({"#", "Variable", "df", "Statistic", "p", "Eff. Size"});
  for (const auto& r : rows) {
    std::string df;
    switch (r.test) {
      case ValidationTest::WelchT:
        df = fmt::format("{:.2f}", r.df);
        break;
      case ValidationTest::StudentT:
      case ValidationTest::ChiSquared:
        df = fmt::format("{:.0f}", r.df);
        break;
    }
    w.row({std::to_string(r.rank), r.variable, df, fmt::format("{:.2f}", r.statistic),
           format_p_value(bonferroni ? r.p_adjusted : r.p), fmt::format("{:.2f}", r.effect_size)});
  }
  return w.str();
}

std::string ValidationReport::to_csv() const {
  CsvWriter w;
  w.row({"rank", "feature", "variable", "test", "direction", "n_buyers", "n_non_buyers",
         "mean_buyers", "mean_non_buyers", "statistic", "df", "p", "p_adjusted", "effect_size",
         "direction_matches", "confirmed", "note"});
  for (const auto& r : rows) {
    w.row({std::to_string(r.rank), r.feature, r.variable, std::string(test_name(r.test)),
           std::string(direction_name(r.direction)), std::to_string(r.n_buyers),
           std::to_string(r.n_non_buyers), format_double(r.mean_buyers),
           format_double(r.mean_non_buyers), format_double(r.statistic), format_double(r.df),
           format_double(r.p), format_double(r.p_adjusted), format_double(r.effect_size),
           r.direction_matches ? "true" : "false", r.confirmed ? "true" : "false", r.note});
  }
  return w.str();
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"rank", r.rank},
                  {"feature", r.feature},
                  {"variable", r.variable},
                  {"test", std::string(test_name(r.test))},
                  {"direction", std::string(direction_name(r.direction))},
                  {"n_buyers", r.n_buyers},
                  {"n_non_buyers", r.n_non_buyers},
                  {"mean_buyers", r.mean_buyers},
                  {"mean_non_buyers", r.mean_non_buyers},
                  {"statistic", r.statistic},
                  {"df", r.df},
                  {"p", r.p},
                  {"p_adjusted", r.p_adjusted},
                  {"effect_size", r.effect_size},
                  {"direction_matches", r.direction_matches},
                  {"confirmed", r.confirmed},
                  {"note", r.note}});
  }
  return {{"case", case_to_json(validation_case)},
          {"alpha", alpha},
          {"bonferroni", bonferroni},
          {"confirmed", confirmed_count()},
          {"rows", rs}};
}

ValidationReport ValidationReport::from_json(const nlohmann::json& j) {
  ValidationReport rep;
  try {
    rep.validation_case = case_from_json(j.at("case"));
    rep.alpha = j.at("alpha").get<double>();
    rep.bonferroni = j.at("bonferroni").get<bool>();
    for (const auto& r : j.at("rows")) {
      ValidationRow row;
      row.rank = r.at("rank").get<std::size_t>();
      row.feature = r.at("feature").get<std::string>();
      row.variable = r.at("variable").get<std::string>();
      row.test = parse_test(r.at("test").get<std::string>());
      row.direction = parse_direction(r.at("direction").get<std::string>());
      row.n_buyers = r.at("n_buyers").get<std::size_t>();
      row.n_non_buyers = r.at("n_non_buyers").get<std::size_t>();
      row.mean_buyers = r.at("mean_buyers").get<double>();
      row.mean_non_buyers = r.at("mean_non_buyers").get<double>();
      row.statistic = r.at("statistic").get<double>();
      row.df = r.at("df").get<double>();
      row.p = r.at("p").get<double>();
      row.p_adjusted = r.at("p_adjusted").get<double>();
      row.effect_size = r.at("effect_size").get<double>();
      row.direction_matches = r.at("direction_matches").get<bool>();
      row.confirmed = r.at("confirmed").get<bool>();
      row.note = r.at("note").get<std::string>();
      rep.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("validation report: {}", e.what()));
  }
  return rep;
}

namespace {

bool matches(Direction d, double diff) {
  switch (d) {
    case Direction::Greater:
      return diff > 0.0;
    case Direction::Less:
      return diff < 0.0;
    case Direction::TwoSided:
      break;
  }
  return true;
}

void run_binary(ValidationRow& row, const std::vector<double>& values,
                const std::vector<std::uint8_t>& group) {
  std::uint64_t table[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < values.size(); ++i) {
    ++table[values[i] != 0.0 ? 1 : 0][group[i]];
  }
  row.test = ValidationTest::ChiSquared;
  row.df = 1.0;
  row.n_buyers = table[0][1] + table[1][1];
  row.n_non_buyers = table[0][0] + table[1][0];
  row.mean_buyers = row.n_buyers ? static_cast<double>(table[1][1]) / row.n_buyers : 0.0;
  row.mean_non_buyers =
      row.n_non_buyers ? static_cast<double>(table[1][0]) / row.n_non_buyers : 0.0;
  row.direction_matches = matches(row.direction, row.mean_buyers - row.mean_non_buyers);
  try {
    const ChiSquaredResult r = chi_squared_2x2(table);
    row.statistic = r.chi2;
    row.p = r.p;
    row.effect_size = r.omega;
  } catch (const Error& e) {
    row.note = e.what();
  }
}

void run_numeric(ValidationRow& row, const std::vector<double>& values,
                 const std::vector<std::uint8_t>& group, const ValidationOptions& opt) {
  std::vector<double> a, b;
  for (std::size_t i = 0; i < values.size(); ++i) (group[i] ? a : b).push_back(values[i]);
  row.n_buyers = a.size();
  row.n_non_buyers = b.size();
  row.test = ValidationTest::WelchT;
  try {
    row.mean_buyers = sample_mean(a);
    row.mean_non_buyers = sample_mean(b);
    const double va = sample_variance(a);
    const double vb = sample_variance(b);
    if (vb > 0.0) {
      const double ratio = va / vb;
      if (ratio >= opt.variance_ratio_low && ratio <= opt.variance_ratio_high) {
        row.test = ValidationTest::StudentT;
      }
    }
    const TTestResult r = row.test == ValidationTest::StudentT ? student_t(a, b, row.direction)
                                                               : welch_t(a, b, row.direction);
    row.statistic = r.t;
    row.df = r.df;
    row.p = r.p;
    row.effect_size = r.cohens_d;
    row.direction_matches = matches(row.direction, r.t);
  } catch (const Error& e) {
    row.note = e.what();
  }
}

}  // namespace

ValidationReport validate_next_year(std::span<const Hypothesis> hypotheses,
                                    const EncodingMap& encoding,
                                    std::span<const CustomerRecord> customers,
                                    const CrossSellCase& validation_case,
                                    const ValidationOptions& options, int threads) {
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) {
    throw ConfigError(fmt::format("alpha must lie in (0,1), got {}", options.alpha));
  }
  const auto names = encoding.feature_names();
  std::vector<std::size_t> columns;
  for (const auto& h : hypotheses) {
    const auto it = std::find(names.begin(), names.end(), h.feature);
    if (it == names.end()) {
      throw DataError(fmt::format("feature '{}' is not part of the encoded dataset", h.feature));
    }
    columns.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  const LabeledPopulation pop = build_labels(customers, validation_case, options.labels);
  std::vector<const CustomerRecord*> records;
  for (std::size_t i : pop.record_index) records.push_back(&customers[i]);
  const FeatureMatrix encoded = encoding.encode(records);

  ValidationReport rep;
  rep.validation_case = validation_case;
  rep.alpha = options.alpha;
  rep.bonferroni = options.bonferroni;
  rep.rows.resize(hypotheses.size());
  parallel_for(hypotheses.size(), threads, [&](std::size_t i) {
    const Hypothesis& h = hypotheses[i];
    const EncodedColumn& col = encoding.columns[columns[i]];
    const SourceEncoding& src = encoding.sources[col.source];
    ValidationRow& row = rep.rows[i];
    row.rank = h.rank;
    row.feature = h.feature;
    row.variable = encoding.name_in_year(col, validation_case.train_year);
    row.direction = h.direction;

    std::vector<double> values;
    std::vector<std::uint8_t> group;
    const ColumnAccessor* access = nullptr;
    if (col.role == EncodedRole::Value) {
      access = find_column(src.column);
      if (access == nullptr) throw DataError(fmt::format("unknown column '{}'", src.column));
    }
    for (std::size_t r = 0; r < records.size(); ++r) {
      const double v = access ? numeric_value(*records[r], *access) : encoded(r, columns[i]);
      if (std::isnan(v)) continue;
      values.push_back(v);
      group.push_back(pop.labels[r]);
    }
    const bool binary = col.role != EncodedRole::Value || src.kind == ColumnKind::Boolean;
    if (binary) {
      run_binary(row, values, group);
    } else {
      run_numeric(row, values, group, options);
    }
  });
  const double m = static_cast<double>(hypotheses.size());
  for (auto& row : rep.rows) {
    row.p_adjusted = options.bonferroni ? std::min(1.0, row.p * m) : row.p;
    row.confirmed = row.note.empty() && row.p_adjusted < options.alpha && row.direction_matches;
  }
  return rep;
}

}  // namespace xsell
