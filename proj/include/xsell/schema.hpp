#pragma once

#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace xsell {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

enum class ContractType { Power, Internet, TV };

inline constexpr ContractType kContractTypes[] = {
    ContractType::Power, ContractType::Internet, ContractType::TV};

// "Power", "Inet", "TV": the short names used in variable names.
std::string_view short_name(ContractType t);
// Accepts "Power", "Internet", "Inet", "TV" (case-insensitive).
ContractType parse_contract_type(std::string_view s);

// Euro amount held as integer cents, so sums are exact and order-independent.
class Money {
 public:
  constexpr Money() = default;
  static constexpr Money from_cents(std::int64_t c) { return Money(c); }
  // Rounds half away from zero to the nearest cent.
  static Money from_euros(double euros);
  // Parses "183.84", "-3.5", "12".
  static Money parse(std::string_view s);

  constexpr std::int64_t cents() const { return cents_; }
  double euros() const { return static_cast<double>(cents_) / 100.0; }
  // Fixed-point, two decimals.
  std::string str() const;

  constexpr Money& operator+=(Money o) {
    cents_ += o.cents_;
    return *this;
  }
  friend constexpr Money operator+(Money a, Money b) { return a += b; }
  friend constexpr auto operator<=>(Money, Money) = default;

 private:
  constexpr explicit Money(std::int64_t c) : cents_(c) {}
  std::int64_t cents_ = 0;
};

using Date = std::chrono::year_month_day;

Date make_date(int y, unsigned m, unsigned d);
// ISO "YYYY-MM-DD".
Date parse_date(std::string_view s);
std::string format_date(Date d);

struct ContractRecord {
  std::string contract_id;
  std::string customer_id;
  ContractType type = ContractType::Power;
  Date start_date{};
  std::optional<Date> end_date;
  std::string tariff_id;
  // Present iff type == Power.
  std::optional<double> yearly_consumption_kwh;
  std::string salutation;
  std::string address_key;

  // Throws DataError naming the contract when an invariant is violated.
  void validate() const;
  bool active_on(Date d) const;
};

// Precomputed environment of an address (300x300 m neighbourhood). Numeric
// fields use NaN for "missing", categorical fields the empty string.
struct GeoFeatures {
  double lat = kMissing;
  double lon = kMissing;
  double building_area_mean = kMissing;
  double building_area_median = kMissing;
  double building_area_var = kMissing;
  double next_building_area = kMissing;
  double next_buildings_dist_mean = kMissing;
  double next_buildings_dist_var = kMissing;
  double building_dist_mean = kMissing;
  double building_dist_var = kMissing;
  std::string this_building_type;
  std::string next_building_type;
  std::string building_type_mode;
  double num_buildings = kMissing;
  double num_public_institutions = kMissing;
  double num_business = kMissing;
  double num_food = kMissing;
  double num_transportation = kMissing;
  double num_recreation = kMissing;
  double num_culture = kMissing;
  double num_sights = kMissing;
  double num_countryside = kMissing;
  double num_road_system = kMissing;
  double min_dist_business = kMissing;
  double min_dist_food = kMissing;
  double min_dist_culture = kMissing;
  double mean_dist_public_institutions = kMissing;
  double mean_dist_business = kMissing;
  double mean_dist_food = kMissing;
  double mean_dist_transportation = kMissing;
  double mean_dist_recreation = kMissing;
  double mean_dist_culture = kMissing;
  double mean_dist_sights = kMissing;
  double mean_dist_countryside = kMissing;
  double mean_dist_road_system = kMissing;
  double total_area_apartments = kMissing;
  double total_area_single_family = kMissing;
  double total_area_non_residential = kMissing;
  double total_area_not_specified = kMissing;
  double total_area_countryside = kMissing;
  double total_area_residential = kMissing;
  double total_area_city = kMissing;
  std::string this_land_use_type;
  std::string next_land_use_type;

  void validate() const;
};

// One customer-year row of the modelling table.
struct CustomerRecord {
  std::string customer_id;
  int year = 0;

  int start_year = 0;
  double age_years = kMissing;
  std::string form_of_address;
  double relationship_months = 0.0;
  double number_of_contacts = 0.0;
  std::string bank_type;
  double number_of_dunnings = 0.0;
  bool has_title = false;
  bool has_phone = false;
  bool has_mobile = false;
  bool has_email = false;
  bool has_diff_billing = false;
  bool has_iban = false;
  bool uses_service_portal = false;
  bool uses_online_bills = false;
  double norm_power_kwh = 0.0;
  Money revenue_total;
  Money revenue_power;
  Money revenue_inet;
  Money revenue_tv;
  bool existing_power = false;
  bool existing_inet = false;
  bool existing_tv = false;
  // {contractType}Purchase{year}: a new contract of that type started
  // during `year`.
  bool purchase_power = false;
  bool purchase_inet = false;
  bool purchase_tv = false;

  GeoFeatures geo;

  bool existing(ContractType t) const;
  bool purchase(ContractType t) const;
  Money revenue(ContractType t) const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Column dictionary. One entry per variable of the customer-year CSV, in
// file order (after the CustomerId and Year key columns).

enum class ColumnKind { Integer, Numeric, Money, Boolean, Categorical };

struct ColumnInfo {
  std::string_view name;   // CSV header, e.g. "Total.Revenue"
  std::string_view field;  // struct field, e.g. "revenue_total"
  ColumnKind kind;
  bool per_year;  // name carries the year suffix in feature space
  bool feature;   // false for the dependent variables
  bool geo;
};

using Cell = std::variant<int, double, Money, bool, std::string>;

struct ColumnAccessor {
  ColumnInfo info;
  Cell (*get)(const CustomerRecord&);
  void (*set)(CustomerRecord&, const Cell&);
};

std::span<const ColumnAccessor> customer_columns();
// Looks up by CSV name or by field name; nullptr when unknown.
const ColumnAccessor* find_column(std::string_view name_or_field);
// Numeric view of a cell: booleans 0/1, money in euros, categorical -> NaN.
double numeric_value(const CustomerRecord& r, const ColumnAccessor& col);

inline constexpr std::string_view kCustomerIdColumn = "CustomerId";
inline constexpr std::string_view kYearColumn = "Year";

// ---------------------------------------------------------------------------

struct CrossSellCase {
  ContractType owner_type = ContractType::Power;
  ContractType target_type = ContractType::TV;
  int train_year = 0;
  int test_year = 0;

  static CrossSellCase make(ContractType owner, ContractType target, int train_year);
  // Throws ConfigError unless the pair is one of Power->Inet, Power->TV,
  // TV->Inet, Inet->TV and test_year == train_year + 1.
  void validate() const;
  // "Power->TV"
  std::string pair_key() const;
  // "Power buys TV"
  std::string label() const;
  // "2016/2017"
  std::string year_label() const;
  // File-system safe: "power_tv_2016_2017"
  std::string id() const;

  friend bool operator==(const CrossSellCase&, const CrossSellCase&) = default;
};

// "Power->TV" -> (Power, TV)
std::pair<ContractType, ContractType> parse_case_pair(std::string_view key);

}  // namespace xsell
