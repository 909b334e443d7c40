#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsell/prep.hpp"
#include "xsell/schema.hpp"

namespace xsell {

struct SignalTerm {
  std::string feature;  // dictionary name or field name
  int sign = 1;         // +1 or -1
  double magnitude = 1.0;  // +inf switches to a deterministic threshold rule
};

struct GeneratorConfig {
  std::size_t n_customers = 20000;  // private customers
  double business_fraction = 0.03;  // extra business accounts, removed by the filter
  int first_year = 2012;
  int last_year = 2018;
  // Keyed by pair key ("Power->TV"); applied to every year transition.
  std::map<std::string, double> target_positive_ratio = {
      {"Power->Inet", 0.011}, {"Power->TV", 0.013}, {"TV->Inet", 0.017}, {"Inet->TV", 0.006}};
  std::vector<SignalTerm> signal_spec = default_signal();
  double noise_scale = 0.5;
  std::uint64_t seed = 1;

  static std::vector<SignalTerm> default_signal();
  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

struct CaseCalibration {
  std::string pair_key;
  int year = 0;  // features year; purchases happen in year + 1
  double intercept = 0.0;
  std::size_t eligible = 0;
  std::size_t positives = 0;
  double realized_ratio = 0.0;
};

struct SignalTruth {
  std::string column;  // dictionary name
  std::string field;
  int sign = 1;
  double magnitude = 0.0;
};

struct GenerationTruth {
  std::uint64_t seed = 0;
  double noise_scale = 0.0;
  std::vector<SignalTruth> signal;
  std::vector<CaseCalibration> calibration;

  nlohmann::json to_json() const;
  static GenerationTruth from_json(const nlohmann::json& j);
};

struct Population {
  std::vector<ContractRecord> contracts;  // after business-customer filtering
  std::vector<CustomerRecord> customers;  // sorted by (customer_id, year)
  TariffTable tariffs;
  GenerationTruth truth;
};

TariffTable default_tariffs();

// Throws ConfigError for an invalid config and NumericError when an intercept
// cannot be calibrated.
Population generate_population(const GeneratorConfig& config, int threads = 1);

std::vector<std::string> describe_truth(const GenerationTruth& truth);

}  // namespace xsell
