#include "xsell/schema.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdlib>

#include "xsell/error.hpp"

namespace xsell {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <class T>
T cell_as(const Cell& c);

template <>
int cell_as<int>(const Cell& c) {
  return std::get<int>(c);
}
template <>
double cell_as<double>(const Cell& c) {
  return std::get<double>(c);
}
template <>
Money cell_as<Money>(const Cell& c) {
  return std::get<Money>(c);
}
template <>
bool cell_as<bool>(const Cell& c) {
  return std::get<bool>(c);
}
template <>
std::string cell_as<std::string>(const Cell& c) {
  return std::get<std::string>(c);
}

}  // namespace

std::string_view short_name(ContractType t) {
  switch (t) {
    case ContractType::Power:
      return "Power";
    case ContractType::Internet:
      return "Inet";
    case ContractType::TV:
      return "TV";
  }
  return "?";
}

ContractType parse_contract_type(std::string_view s) {
  const std::string l = lower(s);
  if (l == "power") return ContractType::Power;
  if (l == "internet" || l == "inet") return ContractType::Internet;
  if (l == "tv") return ContractType::TV;
  throw DataError(fmt::format("unknown contract type '{}'", s));
}

Money Money::from_euros(double euros) {
  if (!std::isfinite(euros)) throw DataError("non-finite money amount");
  return Money(static_cast<std::int64_t>(std::llround(euros * 100.0)));
}

Money Money::parse(std::string_view s) {
  if (s.empty()) throw DataError("empty money value");
  bool negative = false;
  std::size_t i = 0;
  if (s[0] == '-' || s[0] == '+') {
    negative = s[0] == '-';
    i = 1;
  }
  std::int64_t whole = 0;
  std::int64_t frac = 0;
  int frac_digits = 0;
  bool any = false;
  for (; i < s.size() && s[i] != '.'; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
      throw DataError(fmt::format("invalid money value '{}'", s));
    }
    whole = whole * 10 + (s[i] - '0');
    any = true;
  }
  if (i < s.size()) {
    for (++i; i < s.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i])) || frac_digits == 2) {
        throw DataError(fmt::format("invalid money value '{}'", s));
      }
      frac = frac * 10 + (s[i] - '0');
      ++frac_digits;
      any = true;
    }
  }
  if (!any) throw DataError(fmt::format("invalid money value '{}'", s));
  if (frac_digits == 1) frac *= 10;
  const std::int64_t cents = whole * 100 + frac;
  return Money(negative ? -cents : cents);
}

std::string Money::str() const {
  const std::int64_t a = cents_ < 0 ? -cents_ : cents_;
  return fmt::format("{}{}.{:02}", cents_ < 0 ? "-" : "", a / 100, a % 100);
}

Date make_date(int y, unsigned m, unsigned d) {
  Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw DataError(fmt::format("invalid date {}-{}-{}", y, m, d));
  return date;
}

Date parse_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
    throw DataError(fmt::format("invalid date '{}' (expected YYYY-MM-DD)", s));
  }
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    if (ec != std::errc() || p != s.data() + pos + len) {
      throw DataError(fmt::format("invalid date '{}'", s));
    }
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  return make_date(y, m, d);
}

std::string format_date(Date d) {
  return fmt::format("{:04}-{:02}-{:02}", static_cast<int>(d.year()),
                     static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
}

void ContractRecord::validate() const {
  if (end_date && *end_date < start_date) {
    throw DataError(fmt::format("contract {}: end date {} before start date {}",
                                contract_id, format_date(*end_date),
                                format_date(start_date)));
  }
  const bool is_power = type == ContractType::Power;
  if (is_power != yearly_consumption_kwh.has_value()) {
    throw DataError(fmt::format(
        "contract {}: yearly consumption must be present exactly for power contracts",
        contract_id));
  }
  if (yearly_consumption_kwh && !(*yearly_consumption_kwh >= 0.0)) {
    throw DataError(fmt::format("contract {}: negative consumption", contract_id));
  }
}

bool ContractRecord::active_on(Date d) const {
  return start_date <= d && (!end_date || d <= *end_date);
}

void GeoFeatures::validate() const {
  if (!std::isnan(lat) && (lat < -90.0 || lat > 90.0)) {
    throw DataError(fmt::format("latitude {} out of range", lat));
  }
  if (!std::isnan(lon) && (lon < -180.0 || lon > 180.0)) {
    throw DataError(fmt::format("longitude {} out of range", lon));
  }
}

bool CustomerRecord::existing(ContractType t) const {
  switch (t) {
    case ContractType::Power:
      return existing_power;
    case ContractType::Internet:
      return existing_inet;
    case ContractType::TV:
      return existing_tv;
  }
  return false;
}

bool CustomerRecord::purchase(ContractType t) const {
  switch (t) {
    case ContractType::Power:
      return purchase_power;
    case ContractType::Internet:
      return purchase_inet;
    case ContractType::TV:
      return purchase_tv;
  }
  return false;
}

Money CustomerRecord::revenue(ContractType t) const {
  switch (t) {
    case ContractType::Power:
      return revenue_power;
    case ContractType::Internet:
      return revenue_inet;
    case ContractType::TV:
      return revenue_tv;
  }
  return {};
}

void CustomerRecord::validate() const {
  const Money sum = revenue_power + revenue_inet + revenue_tv;
  if (std::llabs(sum.cents() - revenue_total.cents()) > 1) {
    throw DataError(fmt::format(
        "customer {} year {}: total revenue {} != sum of components {}", customer_id,
        year, revenue_total.str(), sum.str()));
  }
  if (relationship_months > 12.0 * (year - start_year + 1) + 1e-9) {
    throw DataError(fmt::format(
        "customer {} year {}: {} relationship months exceed span since {}",
        customer_id, year, relationship_months, start_year));
  }
  geo.validate();
}

// ---------------------------------------------------------------------------

// FIELD, CSV NAME, KIND, PER_YEAR, FEATURE, GEO
#define XSELL_CUSTOMER_COLUMNS(X)                                                             \
  X(start_year, "Customer.StartYear", Integer, false, true, false)                            \
  X(age_years, "Customer.AgeInYears", Numeric, false, true, false)                            \
  X(form_of_address, "Customer.FormOfAddress", Categorical, false, true, false)               \
  X(relationship_months, "Customer.RelationshipMonthsUntil", Numeric, true, true, false)      \
  X(number_of_contacts, "Customer.NumberOfContacts", Numeric, true, true, false)              \
  X(bank_type, "Customer.BankType", Categorical, false, true, false)                          \
  X(number_of_dunnings, "Customer.NumberOfDunnings", Numeric, true, true, false)              \
  X(has_title, "Has.Title", Boolean, false, true, false)                                      \
  X(has_phone, "Has.Phone", Boolean, false, true, false)                                      \
  X(has_mobile, "Has.Mobile", Boolean, false, true, false)                                    \
  X(has_email, "Has.Email", Boolean, false, true, false)                                      \
  X(has_diff_billing, "Has.DiffBillingAddress", Boolean, false, true, false)                  \
  X(has_iban, "Has.IBAN", Boolean, false, true, false)                                        \
  X(uses_service_portal, "Consumption.ServicePortal", Boolean, false, true, false)            \
  X(uses_online_bills, "Consumption.OnlineBills", Boolean, false, true, false)                \
  X(norm_power_kwh, "Consumption.NormPower", Numeric, true, true, false)                      \
  X(revenue_total, "Total.Revenue", Money, true, true, false)                                 \
  X(revenue_power, "Net.RevenuePower", Money, true, true, false)                              \
  X(revenue_inet, "Net.RevenueInet", Money, true, true, false)                                \
  X(revenue_tv, "Net.RevenueTV", Money, true, true, false)                                    \
  X(existing_power, "Existing.CustomerPower", Boolean, true, true, false)                     \
  X(existing_inet, "Existing.CustomerInet", Boolean, true, true, false)                       \
  X(existing_tv, "Existing.CustomerTV", Boolean, true, true, false)                           \
  X(purchase_power, "Purchase.Power", Boolean, true, false, false)                            \
  X(purchase_inet, "Purchase.Inet", Boolean, true, false, false)                              \
  X(purchase_tv, "Purchase.TV", Boolean, true, false, false)                                  \
  X(geo.lat, "Geo.Lat", Numeric, false, true, true)                                           \
  X(geo.lon, "Geo.Long", Numeric, false, true, true)                                          \
  X(geo.building_area_mean, "Building.AreaMean", Numeric, false, true, true)                  \
  X(geo.building_area_median, "Building.AreaMedian", Numeric, false, true, true)              \
  X(geo.building_area_var, "Building.AreaVar", Numeric, false, true, true)                    \
  X(geo.next_building_area, "Building.NextBuildingArea", Numeric, false, true, true)          \
  X(geo.next_buildings_dist_mean, "Building.NextBuildingsDistMean", Numeric, false, true,     \
    true)                                                                                     \
  X(geo.next_buildings_dist_var, "Building.NextBuildingsDistVar", Numeric, false, true, true) \
  X(geo.building_dist_mean, "Building.BuildingDistMean", Numeric, false, true, true)          \
  X(geo.building_dist_var, "Building.BuildingDistVar", Numeric, false, true, true)            \
  X(geo.this_building_type, "Building.ThisBuildingType", Categorical, false, true, true)      \
  X(geo.next_building_type, "Building.NextBuildingType", Categorical, false, true, true)      \
  X(geo.building_type_mode, "Building.BuildingTypeMode", Categorical, false, true, true)      \
  X(geo.num_buildings, "Num.Buildings", Numeric, false, true, true)                           \
  X(geo.num_public_institutions, "Num.PublicInstitutions", Numeric, false, true, true)        \
  X(geo.num_business, "Num.Business", Numeric, false, true, true)                             \
  X(geo.num_food, "Num.Food", Numeric, false, true, true)                                     \
  X(geo.num_transportation, "Num.Transportation", Numeric, false, true, true)                 \
  X(geo.num_recreation, "Num.Recreation", Numeric, false, true, true)                         \
  X(geo.num_culture, "Num.Culture", Numeric, false, true, true)                               \
  X(geo.num_sights, "Num.Sights", Numeric, false, true, true)                                 \
  X(geo.num_countryside, "Num.Countryside", Numeric, false, true, true)                       \
  X(geo.num_road_system, "Num.RoadSystem", Numeric, false, true, true)                        \
  X(geo.min_dist_business, "MinDist.Business", Numeric, false, true, true)                    \
  X(geo.min_dist_food, "MinDist.Food", Numeric, false, true, true)                            \
  X(geo.min_dist_culture, "MinDist.Culture", Numeric, false, true, true)                      \
  X(geo.mean_dist_public_institutions, "MeanDist.PublicInstitutions", Numeric, false, true,   \
    true)                                                                                     \
  X(geo.mean_dist_business, "MeanDist.Business", Numeric, false, true, true)                  \
  X(geo.mean_dist_food, "MeanDist.Food", Numeric, false, true, true)                          \
  X(geo.mean_dist_transportation, "MeanDist.Transportation", Numeric, false, true, true)      \
  X(geo.mean_dist_recreation, "MeanDist.Recreation", Numeric, false, true, true)              \
  X(geo.mean_dist_culture, "MeanDist.Culture", Numeric, false, true, true)                    \
  X(geo.mean_dist_sights, "MeanDist.Sights", Numeric, false, true, true)                      \
  X(geo.mean_dist_countryside, "MeanDist.Countryside", Numeric, false, true, true)            \
  X(geo.mean_dist_road_system, "MeanDist.RoadSystem", Numeric, false, true, true)             \
  X(geo.total_area_apartments, "TotalArea.Apartments", Numeric, false, true, true)            \
  X(geo.total_area_single_family, "TotalArea.SingleFamily", Numeric, false, true, true)       \
  X(geo.total_area_non_residential, "TotalArea.NonResidential", Numeric, false, true, true)   \
  X(geo.total_area_not_specified, "TotalArea.NotSpecified", Numeric, false, true, true)       \
  X(geo.total_area_countryside, "TotalArea.Countryside", Numeric, false, true, true)          \
  X(geo.total_area_residential, "TotalArea.Residential", Numeric, false, true, true)          \
  X(geo.total_area_city, "TotalArea.City", Numeric, false, true, true)                        \
  X(geo.this_land_use_type, "LandUse.ThisLandUseType", Categorical, false, true, true)        \
  X(geo.next_land_use_type, "LandUse.NextLandUseType", Categorical, false, true, true)

namespace {

constexpr std::string_view last_component(std::string_view path) {
  const auto dot = path.rfind('.');
  return dot == std::string_view::npos ? path : path.substr(dot + 1);
}

#define XSELL_ACCESSOR(FIELD, NAME, KIND, PER_YEAR, FEATURE, GEO)                            \
  ColumnAccessor{                                                                            \
      ColumnInfo{NAME, last_component(#FIELD), ColumnKind::KIND, PER_YEAR, FEATURE, GEO},    \
      [](const CustomerRecord& r) -> Cell { return r.FIELD; },                               \
      [](CustomerRecord& r, const Cell& c) { r.FIELD = cell_as<decltype(r.FIELD)>(c); }},

const std::array kColumns = {XSELL_CUSTOMER_COLUMNS(XSELL_ACCESSOR)};

#undef XSELL_ACCESSOR

}  // namespace

std::span<const ColumnAccessor> customer_columns() { return kColumns; }

const ColumnAccessor* find_column(std::string_view name_or_field) {
  for (const auto& c : kColumns) {
    if (c.info.name == name_or_field || c.info.field == name_or_field) return &c;
  }
  return nullptr;
}

double numeric_value(const CustomerRecord& r, const ColumnAccessor& col) {
  const Cell c = col.get(r);
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, int>) {
          return static_cast<double>(v);
        } else if constexpr (std::is_same_v<T, double>) {
          return v;
        } else if constexpr (std::is_same_v<T, Money>) {
          return v.euros();
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? 1.0 : 0.0;
        } else {
          return kMissing;
        }
      },
      c);
}

// ---------------------------------------------------------------------------

CrossSellCase CrossSellCase::make(ContractType owner, ContractType target, int train_year) {
  CrossSellCase c{owner, target, train_year, train_year + 1};
  c.validate();
  return c;
}

void CrossSellCase::validate() const {
  using enum ContractType;
  const bool known = (owner_type == Power && target_type == Internet) ||
                     (owner_type == Power && target_type == TV) ||
                     (owner_type == TV && target_type == Internet) ||
                     (owner_type == Internet && target_type == TV);
  if (!known) {
    throw ConfigError(fmt::format("unsupported cross-sell case {}", pair_key()));
  }
  if (test_year != train_year + 1) {
    throw ConfigError(fmt::format("case {}: test year {} must follow train year {}",
                                  pair_key(), test_year, train_year));
  }
}

std::string CrossSellCase::pair_key() const {
  return fmt::format("{}->{}", short_name(owner_type), short_name(target_type));
}

std::string CrossSellCase::label() const {
  return fmt::format("{} buys {}", short_name(owner_type), short_name(target_type));
}

std::string CrossSellCase::year_label() const {
  return fmt::format("{}/{}", train_year, test_year);
}

std::string CrossSellCase::id() const {
  return fmt::format("{}_{}_{}_{}", lower(short_name(owner_type)),
                     lower(short_name(target_type)), train_year, test_year);
}

std::pair<ContractType, ContractType> parse_case_pair(std::string_view key) {
  const auto arrow = key.find("->");
  if (arrow == std::string_view::npos) {
    throw ConfigError(fmt::format("invalid case key '{}' (expected Owner->Target)", key));
  }
  return {parse_contract_type(key.substr(0, arrow)), parse_contract_type(key.substr(arrow + 2))};
}

}  // namespace xsell
