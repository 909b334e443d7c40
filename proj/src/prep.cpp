#include "xsell/prep.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>

#include "xsell/csv.hpp"
#include "xsell/error.hpp"

namespace xsell {

namespace {

using std::chrono::day;
using std::chrono::month;
using std::chrono::year;
using std::chrono::sys_days;

Date first_of(int y, unsigned m) { return Date{year{y}, month{m}, day{1}}; }
Date last_of(int y, unsigned m) {
  return Date{std::chrono::year_month_day_last{year{y}, std::chrono::month_day_last{month{m}}}};
}

constexpr int kFormatVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------

std::string normalize_salutation(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) || s[e - 1] == '.')) --e;
  std::string out(s.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<ContractRecord> filter_business_customers(std::span<const ContractRecord> contracts,
                                                      const FilterConfig& config) {
  std::set<std::string, std::less<>> allowed;
  for (const auto& s : config.private_salutations) allowed.insert(normalize_salutation(s));

  std::vector<ContractRecord> kept;
  for (const auto& c : contracts) {
    if (!allowed.contains(normalize_salutation(c.salutation))) continue;
    if (c.type == ContractType::Power && c.yearly_consumption_kwh &&
        !(*c.yearly_consumption_kwh < config.business_kwh_threshold)) {
      continue;
    }
    kept.push_back(c);
  }

  const Date window_start = first_of(config.window_first_year, 1);
  const Date window_end = last_of(config.window_last_year, 12);
  std::set<std::string, std::less<>> active_customers;
  for (const auto& c : kept) {
    if (c.start_date <= window_end && (!c.end_date || *c.end_date >= window_start)) {
      active_customers.insert(c.customer_id);
    }
  }
  std::erase_if(kept, [&](const ContractRecord& c) {
    return !active_customers.contains(c.customer_id);
  });
  if (kept.empty()) throw DataError("no eligible customers after business-customer filtering");
  return kept;
}

// ---------------------------------------------------------------------------

void TariffTable::add(Tariff t) {
  if (t.monthly_price < 0.0 || t.rate_per_kwh < 0.0) {
    throw ConfigError(fmt::format("tariff {}: negative price", t.id));
  }
  if (!by_id_.emplace(t.id, t).second) {
    throw ConfigError(fmt::format("duplicate tariff id {}", t.id));
  }
}

const Tariff* TariffTable::find(std::string_view id) const {
  const auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &it->second;
}

TariffTable TariffTable::from_json(const nlohmann::json& j) {
  TariffTable table;
  try {
    for (const auto& t : j.at("tariffs")) {
      Tariff tariff;
      tariff.id = t.at("id").get<std::string>();
      tariff.type = parse_contract_type(t.at("type").get<std::string>());
      if (tariff.type == ContractType::Power) {
        tariff.rate_per_kwh = t.at("rate_per_kwh").get<double>();
      } else {
        tariff.monthly_price = t.at("monthly_price").get<double>();
      }
      table.add(std::move(tariff));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("tariff table: {}", e.what()));
  }
  return table;
}

nlohmann::json TariffTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, t] : by_id_) {
    nlohmann::json e{{"id", id}, {"type", std::string(short_name(t.type))}};
    if (t.type == ContractType::Power) {
      e["rate_per_kwh"] = t.rate_per_kwh;
    } else {
      e["monthly_price"] = t.monthly_price;
    }
    arr.push_back(std::move(e));
  }
  return {{"tariffs", arr}};
}

int days_in_year(int y) { return year{y}.is_leap() ? 366 : 365; }

int active_months(const ContractRecord& c, int y) {
  int months = 0;
  for (unsigned m = 1; m <= 12; ++m) {
    if (c.start_date <= last_of(y, m) && (!c.end_date || *c.end_date >= first_of(y, m))) {
      ++months;
    }
  }
  return months;
}

int active_days(const ContractRecord& c, int y) {
  const Date lo = std::max(c.start_date, first_of(y, 1));
  const Date hi = c.end_date ? std::min(*c.end_date, last_of(y, 12)) : last_of(y, 12);
  if (hi < lo) return 0;
  return static_cast<int>((sys_days{hi} - sys_days{lo}).count()) + 1;
}

Money compute_contract_revenue(const ContractRecord& c, int y, const TariffTable& tariffs) {
  const Tariff* t = tariffs.find(c.tariff_id);
  if (!t) {
    throw DataError(
        fmt::format("contract {}: unknown tariff '{}'", c.contract_id, c.tariff_id));
  }
  if (t->type != c.type) {
    throw DataError(fmt::format("contract {}: tariff '{}' is a {} tariff", c.contract_id,
                                c.tariff_id, short_name(t->type)));
  }
  if (c.type == ContractType::Power) {
    const double kwh = c.yearly_consumption_kwh.value_or(0.0);
    const double daily = kwh / days_in_year(y);
    return Money::from_euros(daily * active_days(c, y) * t->rate_per_kwh);
  }
  const std::int64_t price_cents = std::llround(t->monthly_price * 100.0);
  return Money::from_cents(price_cents * active_months(c, y));
}

// ---------------------------------------------------------------------------

CustomerRecord aggregate_to_customer(std::span<const ContractRecord> contracts, int y,
                                     std::span<const Money> revenues,
                                     const CustomerProfile& profile, const GeoByAddress& geo) {
  if (contracts.empty()) throw DataError(fmt::format("no contracts for year {}", y));
  if (revenues.size() != contracts.size()) {
    throw DataError("aggregate_to_customer: one revenue per contract required");
  }
  const std::string& id = contracts.front().customer_id;
  CustomerRecord r;
  r.customer_id = id;
  r.year = y;

  const Date year_start = first_of(y, 1);
  const Date year_end = last_of(y, 12);
  Date first_start = contracts.front().start_date;
  bool any_active = false;
  std::map<std::string, int, std::less<>> address_counts;

  for (std::size_t i = 0; i < contracts.size(); ++i) {
    const ContractRecord& c = contracts[i];
    if (c.customer_id != id) {
      throw DataError(fmt::format("aggregate_to_customer: contract {} belongs to {}, not {}",
                                  c.contract_id, c.customer_id, id));
    }
    first_start = std::min(first_start, c.start_date);
    const int days = active_days(c, y);
    if (days == 0) continue;
    any_active = true;
    ++address_counts[c.address_key];

    const bool whole_year = c.start_date <= year_start && (!c.end_date || *c.end_date >= year_end);
    const bool started = static_cast<int>(c.start_date.year()) == y;
    switch (c.type) {
      case ContractType::Power:
        r.revenue_power += revenues[i];
        r.norm_power_kwh +=
            c.yearly_consumption_kwh.value_or(0.0) * days / static_cast<double>(days_in_year(y));
        r.existing_power = r.existing_power || whole_year;
        r.purchase_power = r.purchase_power || started;
        break;
      case ContractType::Internet:
        r.revenue_inet += revenues[i];
        r.existing_inet = r.existing_inet || whole_year;
        r.purchase_inet = r.purchase_inet || started;
        break;
      case ContractType::TV:
        r.revenue_tv += revenues[i];
        r.existing_tv = r.existing_tv || whole_year;
        r.purchase_tv = r.purchase_tv || started;
        break;
    }
  }
  if (!any_active) {
    throw DataError(fmt::format("customer {} has no contract active in {}", id, y));
  }
  r.revenue_total = r.revenue_power + r.revenue_inet + r.revenue_tv;

  r.start_year = static_cast<int>(first_start.year());
  r.relationship_months = 12.0 * (y - r.start_year) + 13.0 -
                          static_cast<double>(static_cast<unsigned>(first_start.month()));

  // std::map iterates keys in order, so the first maximum is the smallest key.
  std::string best_address;
  int best = -1;
  for (const auto& [addr, n] : address_counts) {
    if (n > best) {
      best = n;
      best_address = addr;
    }
  }
  if (const auto it = geo.find(best_address); it != geo.end()) r.geo = it->second;

  r.age_years = profile.age_years;
  r.form_of_address = profile.form_of_address;
  r.number_of_contacts = profile.number_of_contacts;
  r.bank_type = profile.bank_type;
  r.number_of_dunnings = profile.number_of_dunnings;
  r.has_title = profile.has_title;
  r.has_phone = profile.has_phone;
  r.has_mobile = profile.has_mobile;
  r.has_email = profile.has_email;
  r.has_diff_billing = profile.has_diff_billing;
  r.has_iban = profile.has_iban;
  r.uses_service_portal = profile.uses_service_portal;
  r.uses_online_bills = profile.uses_online_bills;
  return r;
}

// ---------------------------------------------------------------------------

double LabeledPopulation::positive_ratio() const {
  return labels.empty() ? 0.0 : static_cast<double>(positives) / labels.size();
}

bool holds_product(const CustomerRecord& r, ContractType t) {
  return r.existing(t) || r.purchase(t);
}

LabeledPopulation build_labels(std::span<const CustomerRecord> customers, const CrossSellCase& c,
                               const LabelOptions& options) {
  c.validate();
  std::unordered_map<std::string_view, const CustomerRecord*> test_year;
  bool has_train = false;
  for (const auto& r : customers) {
    if (r.year == c.test_year) test_year.emplace(r.customer_id, &r);
    if (r.year == c.train_year) has_train = true;
  }
  if (!has_train || test_year.empty()) {
    throw DataError(fmt::format("customer table does not cover {} (case {})", c.year_label(),
                                c.label()));
  }

  LabeledPopulation pop;
  pop.eligible.assign(customers.size(), false);
  for (std::size_t i = 0; i < customers.size(); ++i) {
    const CustomerRecord& r = customers[i];
    if (r.year != c.train_year || !r.existing(c.owner_type)) continue;
    const bool holder = holds_product(r, c.target_type);
    if (holder && options.exclude_target_holders) continue;
    pop.eligible[i] = true;
    pop.record_index.push_back(i);
    bool label = false;
    if (!holder) {
      const auto it = test_year.find(r.customer_id);
      label = it != test_year.end() && it->second->purchase(c.target_type);
    }
    pop.labels.push_back(label ? 1 : 0);
    pop.positives += label ? 1 : 0;
  }
  const double ratio = pop.positive_ratio();
  if (pop.positives == 0 || !(ratio < 0.5)) {
    throw NumericError(fmt::format("degenerate case {} {}: {} positives among {} customers",
                                   c.label(), c.year_label(), pop.positives, pop.labels.size()));
  }
  return pop;
}

// ---------------------------------------------------------------------------

std::vector<std::string> EncodingMap::feature_names() const {
  std::vector<std::string> names;
  names.reserve(columns.size());
  for (const auto& c : columns) names.push_back(c.name);
  return names;
}

namespace {

std::string base_name(const SourceEncoding& s, int year) {
  return s.per_year ? fmt::format("{}{}", s.column, year) : s.column;
}

std::string encoded_name(const SourceEncoding& s, EncodedRole role, std::string_view level,
                         int year) {
  switch (role) {
    case EncodedRole::Value:
      return base_name(s, year);
    case EncodedRole::Level:
      return fmt::format("{}={}", base_name(s, year), level);
    case EncodedRole::Other:
      return fmt::format("{}={}", base_name(s, year), kOtherLevel);
    case EncodedRole::MissingIndicator:
      return fmt::format("{}.missing", base_name(s, year));
  }
  return {};
}

std::string_view role_name(EncodedRole r) {
  switch (r) {
    case EncodedRole::Value:
      return "value";
    case EncodedRole::Level:
      return "level";
    case EncodedRole::Other:
      return "other";
    case EncodedRole::MissingIndicator:
      return "missing_indicator";
  }
  return "?";
}

EncodedRole parse_role(std::string_view s) {
  if (s == "value") return EncodedRole::Value;
  if (s == "level") return EncodedRole::Level;
  if (s == "other") return EncodedRole::Other;
  if (s == "missing_indicator") return EncodedRole::MissingIndicator;
  throw DataError(fmt::format("unknown encoded column role '{}'", s));
}

std::string_view kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::Integer:
      return "integer";
    case ColumnKind::Numeric:
      return "numeric";
    case ColumnKind::Money:
      return "money";
    case ColumnKind::Boolean:
      return "boolean";
    case ColumnKind::Categorical:
      return "categorical";
  }
  return "?";
}

ColumnKind parse_kind(std::string_view s) {
  for (ColumnKind k : {ColumnKind::Integer, ColumnKind::Numeric, ColumnKind::Money,
                       ColumnKind::Boolean, ColumnKind::Categorical}) {
    if (kind_name(k) == s) return k;
  }
  throw DataError(fmt::format("unknown column kind '{}'", s));
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string EncodingMap::name_in_year(const EncodedColumn& col, int year) const {
  return encoded_name(sources.at(col.source), col.role, col.level, year);
}

FeatureMatrix EncodingMap::encode(std::span<const CustomerRecord* const> records) const {
  FeatureMatrix m(records.size(), columns.size());
  // Encoded columns of one source are contiguous; walk sources once per row.
  std::vector<const ColumnAccessor*> access;
  access.reserve(sources.size());
  for (const auto& s : sources) access.push_back(find_column(s.column));

  for (std::size_t r = 0; r < records.size(); ++r) {
    const CustomerRecord& rec = *records[r];
    std::vector<std::string> level_cache(sources.size());
    std::vector<double> value_cache(sources.size(), kMissing);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      if (sources[s].kind == ColumnKind::Categorical) {
        std::string v = std::get<std::string>(access[s]->get(rec));
        if (v.empty()) v = sources[s].fill_level;
        level_cache[s] = std::move(v);
      } else {
        value_cache[s] = numeric_value(rec, *access[s]);
      }
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const EncodedColumn& col = columns[c];
      const SourceEncoding& src = sources[col.source];
      double out = 0.0;
      switch (col.role) {
        case EncodedRole::Value: {
          const double v = value_cache[col.source];
          out = std::isnan(v) ? src.fill : v;
          break;
        }
        case EncodedRole::MissingIndicator:
          out = std::isnan(value_cache[col.source]) ? 1.0 : 0.0;
          break;
        case EncodedRole::Level:
          out = level_cache[col.source] == col.level ? 1.0 : 0.0;
          break;
        case EncodedRole::Other:
          out = std::binary_search(src.levels.begin(), src.levels.end(),
                                   level_cache[col.source])
                    ? 0.0
                    : 1.0;
          break;
      }
      m(r, c) = out;
    }
  }
  return m;
}

std::string EncodingMap::decode_level(std::span<const double> row,
                                      std::size_t source_index) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const EncodedColumn& col = columns[c];
    if (col.source != source_index || row[c] != 1.0) continue;
    if (col.role == EncodedRole::Level) return col.level;
    if (col.role == EncodedRole::Other) return std::string(kOtherLevel);
  }
  throw DataError(fmt::format("row has no active level for '{}'", sources.at(source_index).column));
}

nlohmann::json EncodingMap::to_json() const {
  nlohmann::json src = nlohmann::json::array();
  for (const auto& s : sources) {
    nlohmann::json e{{"column", s.column},
                     {"kind", std::string(kind_name(s.kind))},
                     {"per_year", s.per_year}};
    if (s.kind == ColumnKind::Categorical) {
      e["fill_level"] = s.fill_level;
      e["levels"] = s.levels;
      e["has_other"] = s.has_other;
    } else {
      e["fill"] = s.fill;
      e["missing_indicator"] = s.missing_indicator;
    }
    src.push_back(std::move(e));
  }
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) {
    nlohmann::json e{{"name", c.name}, {"source", c.source}, {"role", std::string(role_name(c.role))}};
    if (c.role == EncodedRole::Level) e["level"] = c.level;
    cols.push_back(std::move(e));
  }
  return {{"feature_year", feature_year},
          {"cardinality_cap", cardinality_cap},
          {"sources", src},
          {"columns", cols}};
}

EncodingMap EncodingMap::from_json(const nlohmann::json& j) {
  EncodingMap m;
  m.feature_year = j.at("feature_year").get<int>();
  m.cardinality_cap = j.at("cardinality_cap").get<std::size_t>();
  for (const auto& e : j.at("sources")) {
    SourceEncoding s;
    s.column = e.at("column").get<std::string>();
    s.kind = parse_kind(e.at("kind").get<std::string>());
    s.per_year = e.at("per_year").get<bool>();
    if (s.kind == ColumnKind::Categorical) {
      s.fill_level = e.at("fill_level").get<std::string>();
      s.levels = e.at("levels").get<std::vector<std::string>>();
      s.has_other = e.at("has_other").get<bool>();
    } else {
      s.fill = e.at("fill").get<double>();
      s.missing_indicator = e.at("missing_indicator").get<bool>();
    }
    if (!find_column(s.column)) throw DataError(fmt::format("unknown column '{}'", s.column));
    m.sources.push_back(std::move(s));
  }
  for (const auto& e : j.at("columns")) {
    EncodedColumn c;
    c.name = e.at("name").get<std::string>();
    c.source = e.at("source").get<std::size_t>();
    c.role = parse_role(e.at("role").get<std::string>());
    if (c.role == EncodedRole::Level) c.level = e.at("level").get<std::string>();
    if (c.source >= m.sources.size()) throw DataError("encoded column with bad source index");
    m.columns.push_back(std::move(c));
  }
  return m;
}

// ---------------------------------------------------------------------------

std::size_t CaseDataset::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

double CaseDataset::positive_ratio() const {
  return labels.empty() ? 0.0 : static_cast<double>(positives()) / labels.size();
}

void CaseDataset::validate() const {
  if (rows.rows() != labels.size() || labels.size() != customer_ids.size()) {
    throw DataError("case dataset: rows, labels and ids differ in length");
  }
  if (rows.cols() != feature_names.size()) {
    throw DataError("case dataset: feature name count differs from column count");
  }
  for (double v : rows.data()) {
    if (std::isnan(v)) throw DataError("case dataset contains NaN after imputation");
  }
  if (positives() == 0) throw NumericError("case dataset has no positive rows");
}

CaseDataset assemble_case_dataset(std::span<const CustomerRecord> customers,
                                  const CrossSellCase& c, const AssembleConfig& config) {
  const LabeledPopulation pop = build_labels(customers, c, config.labels);
  std::vector<const CustomerRecord*> recs;
  recs.reserve(pop.record_index.size());
  for (std::size_t i : pop.record_index) recs.push_back(&customers[i]);

  EncodingMap enc;
  enc.feature_year = c.train_year;
  enc.cardinality_cap = std::max<std::size_t>(2, config.cardinality_cap);
  for (const auto& col : customer_columns()) {
    if (!col.info.feature) continue;
    SourceEncoding s;
    s.column = std::string(col.info.name);
    s.kind = col.info.kind;
    s.per_year = col.info.per_year;
    const std::size_t src_index = enc.sources.size();

    if (s.kind == ColumnKind::Categorical) {
      std::map<std::string, std::size_t> counts;
      for (const auto* r : recs) {
        const auto v = std::get<std::string>(col.get(*r));
        if (!v.empty()) ++counts[v];
      }
      std::vector<std::pair<std::string, std::size_t>> by_freq(counts.begin(), counts.end());
      std::stable_sort(by_freq.begin(), by_freq.end(),
                       [](const auto& a, const auto& b) { return a.second > b.second; });
      s.fill_level = by_freq.empty() ? std::string() : by_freq.front().first;
      // Missing values are imputed with the mode, so they count towards it.
      const std::size_t keep =
          by_freq.size() > enc.cardinality_cap ? enc.cardinality_cap - 1 : by_freq.size();
      for (std::size_t i = 0; i < keep; ++i) s.levels.push_back(by_freq[i].first);
      std::sort(s.levels.begin(), s.levels.end());
      s.has_other = by_freq.size() > keep;
      for (const auto& level : s.levels) {
        enc.columns.push_back({encoded_name(s, EncodedRole::Level, level, c.train_year),
                               src_index, EncodedRole::Level, level});
      }
      if (s.has_other) {
        enc.columns.push_back({encoded_name(s, EncodedRole::Other, "", c.train_year), src_index,
                               EncodedRole::Other, ""});
      }
    } else {
      std::vector<double> present;
      present.reserve(recs.size());
      for (const auto* r : recs) {
        const double v = numeric_value(*r, col);
        if (!std::isnan(v)) present.push_back(v);
      }
      s.missing_indicator = present.size() != recs.size();
      s.fill = median_of(std::move(present));
      enc.columns.push_back(
          {encoded_name(s, EncodedRole::Value, "", c.train_year), src_index, EncodedRole::Value, ""});
      if (s.missing_indicator) {
        enc.columns.push_back({encoded_name(s, EncodedRole::MissingIndicator, "", c.train_year),
                               src_index, EncodedRole::MissingIndicator, ""});
      }
    }
    enc.sources.push_back(std::move(s));
  }

  CaseDataset d;
  d.cross_sell_case = c;
  d.feature_names = enc.feature_names();
  d.rows = enc.encode(recs);
  d.labels = pop.labels;
  d.customer_ids.reserve(recs.size());
  for (const auto* r : recs) d.customer_ids.push_back(r->customer_id);
  d.encoding = std::move(enc);
  d.seed = config.seed;
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------

nlohmann::json case_to_json(const CrossSellCase& c) {
  return {{"owner", std::string(short_name(c.owner_type))},
          {"target", std::string(short_name(c.target_type))},
          {"train_year", c.train_year},
          {"test_year", c.test_year}};
}

CrossSellCase case_from_json(const nlohmann::json& j) {
  try {
    CrossSellCase c;
    c.owner_type = parse_contract_type(j.at("owner").get<std::string>());
    c.target_type = parse_contract_type(j.at("target").get<std::string>());
    c.train_year = j.at("train_year").get<int>();
    c.test_year = j.contains("test_year") ? j.at("test_year").get<int>() : c.train_year + 1;
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid case: {}", e.what()));
  }
}

std::string case_dataset_features_csv(const CaseDataset& d) {
  CsvWriter w;
  std::vector<std::string> cells{"CustomerId", "Label"};
  cells.insert(cells.end(), d.feature_names.begin(), d.feature_names.end());
  w.row(cells);
  for (std::size_t r = 0; r < d.labels.size(); ++r) {
    cells.clear();
    cells.push_back(d.customer_ids[r]);
    cells.push_back(d.labels[r] ? "1" : "0");
    for (double v : d.rows.row(r)) cells.push_back(format_double(v));
    w.row(cells);
  }
  return w.str();
}

nlohmann::json case_dataset_meta(const CaseDataset& d) {
  return {{"format_version", kFormatVersion},
          {"case", case_to_json(d.cross_sell_case)},
          {"feature_names", d.feature_names},
          {"encoding", d.encoding.to_json()},
          {"seed", d.seed},
          {"counts",
           {{"rows", d.labels.size()},
            {"positives", d.positives()},
            {"positive_ratio", d.positive_ratio()}}}};
}

void write_case_dataset(const std::filesystem::path& dir, const CaseDataset& d) {
  write_file_atomic(dir / "features.csv", case_dataset_features_csv(d));
  write_file_atomic(dir / "meta.json", case_dataset_meta(d).dump(2) + "\n");
}

CaseDataset read_case_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const auto csv_path = dir / "features.csv";
  if (!std::filesystem::exists(meta_path) || !std::filesystem::exists(csv_path)) {
    throw DataError(fmt::format("case dataset missing in {} (run 'prepare' first)", dir.string()));
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", meta_path.string(), e.what()));
  }
  CaseDataset d;
  d.cross_sell_case = case_from_json(meta.at("case"));
  d.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
  d.encoding = EncodingMap::from_json(meta.at("encoding"));
  d.seed = meta.at("seed").get<std::uint64_t>();

  const CsvTable t = read_csv(csv_path);
  if (t.header.size() != d.feature_names.size() + 2) {
    throw DataError(fmt::format("{}: header does not match metadata", csv_path.string()));
  }
  d.rows = FeatureMatrix(t.rows.size(), d.feature_names.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    d.customer_ids.push_back(row[0]);
    d.labels.push_back(row[1] == "1" ? 1 : 0);
    for (std::size_t c = 0; c < d.feature_names.size(); ++c) {
      const std::string& s = row[c + 2];
      try {
        std::size_t used = 0;
        d.rows(r, c) = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw DataError(fmt::format("{}: row {}, column '{}': non-numeric value '{}'",
                                    csv_path.string(), r + 1, d.feature_names[c], s));
      }
    }
  }
  d.validate();
  return d;
}

}  // namespace xsell
