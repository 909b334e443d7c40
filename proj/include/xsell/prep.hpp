#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xsell/matrix.hpp"
#include "xsell/schema.hpp"

namespace xsell {

// ---------------------------------------------------------------------------
// Business-customer filtering.

struct FilterConfig {
  // Compared after normalize_salutation().
  std::vector<std::string> private_salutations = {"mr", "mrs"};
  // Power contracts must consume strictly less than this.
  double business_kwh_threshold = 100000.0;
  int window_first_year = 2012;
  int window_last_year = 2017;
};

// Lower-case, surrounding whitespace and trailing '.' removed: "Mrs. " -> "mrs".
std::string normalize_salutation(std::string_view s);

// Keeps contracts with a private salutation and, for power contracts, a
// consumption below the business threshold; then drops every customer left
// without a contract active inside the configured window. Throws DataError
// when nothing survives.
std::vector<ContractRecord> filter_business_customers(std::span<const ContractRecord> contracts,
                                                      const FilterConfig& config = {});

// ---------------------------------------------------------------------------
// Revenue.

struct Tariff {
  std::string id;
  ContractType type = ContractType::Internet;
  double monthly_price = 0.0;  // TV / Internet, EUR per month
  double rate_per_kwh = 0.0;   // Power, EUR per kWh
};

class TariffTable {
 public:
  void add(Tariff t);
  const Tariff* find(std::string_view id) const;
  bool empty() const { return by_id_.empty(); }

  // {"tariffs": [{"id": ..., "type": "Internet", "monthly_price": 15.32},
  //              {"id": ..., "type": "Power", "rate_per_kwh": 0.28}]}
  static TariffTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  std::map<std::string, Tariff, std::less<>> by_id_;
};

// Months of `year` in which the contract is active on at least one day.
int active_months(const ContractRecord& c, int year);
int active_days(const ContractRecord& c, int year);
int days_in_year(int year);

// TV/Internet: active months x monthly price. Power: mean daily consumption
// x active days x rate.
Money compute_contract_revenue(const ContractRecord& c, int year, const TariffTable& tariffs);

// ---------------------------------------------------------------------------
// Customer-level aggregation.

// Attributes that come from CRM master data rather than from contracts.
struct CustomerProfile {
  double age_years = kMissing;
  std::string form_of_address;
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
};

using GeoByAddress = std::map<std::string, GeoFeatures, std::less<>>;

// `contracts` is the full contract history of one customer; `revenues[i]` is
// the precomputed revenue of contracts[i] in `year`. Geographic attributes
// come from the address used by most contracts active in `year` (ties: the
// lexicographically smallest key). Throws DataError when the customer has no
// contract active in `year` or the ids disagree.
CustomerRecord aggregate_to_customer(std::span<const ContractRecord> contracts, int year,
                                     std::span<const Money> revenues,
                                     const CustomerProfile& profile, const GeoByAddress& geo);

// ---------------------------------------------------------------------------
// Labels.

struct LabelOptions {
  // Customers holding the target product in the train year are removed from
  // the eligible population instead of being labelled false.
  bool exclude_target_holders = true;
};

struct LabeledPopulation {
  std::vector<std::size_t> record_index;  // train-year rows of the input
  std::vector<std::uint8_t> labels;
  std::vector<bool> eligible;  // mask over the input records
  std::size_t positives = 0;
  double positive_ratio() const;
};

bool holds_product(const CustomerRecord& r, ContractType t);

// Eligible: existing owner-type customers in the train year. Label: the
// customer signs a target-type contract in the test year. Throws DataError
// when a year is not covered and NumericError("degenerate case") when the
// positive ratio is not inside (0, 0.5).
LabeledPopulation build_labels(std::span<const CustomerRecord> customers,
                               const CrossSellCase& c, const LabelOptions& options = {});

// ---------------------------------------------------------------------------
// Feature encoding.

struct SourceEncoding {
  std::string column;  // dictionary name
  ColumnKind kind = ColumnKind::Numeric;
  bool per_year = false;
  double fill = 0.0;         // numeric median of the training population
  std::string fill_level;    // categorical mode
  bool missing_indicator = false;
  std::vector<std::string> levels;  // kept categorical levels, sorted
  bool has_other = false;
};

enum class EncodedRole { Value, Level, Other, MissingIndicator };

struct EncodedColumn {
  std::string name;
  std::size_t source = 0;
  EncodedRole role = EncodedRole::Value;
  std::string level;
};

inline constexpr std::string_view kOtherLevel = "__other__";

struct EncodingMap {
  int feature_year = 0;
  std::size_t cardinality_cap = 32;
  std::vector<SourceEncoding> sources;
  std::vector<EncodedColumn> columns;

  std::vector<std::string> feature_names() const;
  // Encodes records (their own year is ignored: the caller chooses which
  // year's rows to pass).
  FeatureMatrix encode(std::span<const CustomerRecord* const> records) const;
  // Category of source `source_index` recovered from an encoded row;
  // kOtherLevel for bucketed levels.
  std::string decode_level(std::span<const double> row, std::size_t source_index) const;
  // Name of an encoded column when the variable is read in `year`, e.g.
  // "Total.Revenue2017" for the column "Total.Revenue2016".
  std::string name_in_year(const EncodedColumn& col, int year) const;

  nlohmann::json to_json() const;
  static EncodingMap from_json(const nlohmann::json& j);
};

struct AssembleConfig {
  std::size_t cardinality_cap = 32;
  LabelOptions labels;
  std::uint64_t seed = 0;  // provenance only, recorded in metadata
};

struct CaseDataset {
  CrossSellCase cross_sell_case;
  std::vector<std::string> feature_names;
  FeatureMatrix rows;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> customer_ids;
  EncodingMap encoding;
  std::uint64_t seed = 0;

  std::size_t positives() const;
  double positive_ratio() const;
  // Equal lengths, no NaN, at least one positive.
  void validate() const;
};

// Fits the encoding on the eligible train-year population and encodes it.
CaseDataset assemble_case_dataset(std::span<const CustomerRecord> customers,
                                  const CrossSellCase& c, const AssembleConfig& config = {});

// Two-file artifact: <dir>/features.csv and <dir>/meta.json.
void write_case_dataset(const std::filesystem::path& dir, const CaseDataset& d);
CaseDataset read_case_dataset(const std::filesystem::path& dir);
std::string case_dataset_features_csv(const CaseDataset& d);
nlohmann::json case_dataset_meta(const CaseDataset& d);

nlohmann::json case_to_json(const CrossSellCase& c);
CrossSellCase case_from_json(const nlohmann::json& j);

}  // namespace xsell
