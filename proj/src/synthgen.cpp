#include "xsell/synthgen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "xsell/error.hpp"
#include "xsell/parallel.hpp"
#include "xsell/rng.hpp"

namespace xsell {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kStreamCustomer = 1,
  kStreamYear = 2,
  kStreamPurchase = 3,
  kStreamAddress = 4,
  kStreamBusiness = 5,
  kStreamNewContract = 6,
};

constexpr double kChurnRate = 0.02;
constexpr double kSecondAddressRate = 0.05;
constexpr int kEarliestStartYear = 1995;

struct GeoNumeric {
  double GeoFeatures::*field;
  double mean;
  double sd;
  double urban;  // loading on the latent urbanity factor, in units of sd
};

// Distances shrink and counts grow with urbanity.
const GeoNumeric kGeoNumeric[] = {
    {&GeoFeatures::building_area_mean, 180, 60, -0.5},
    {&GeoFeatures::building_area_median, 140, 50, -0.5},
    {&GeoFeatures::building_area_var, 9000, 4000, 0.2},
    {&GeoFeatures::next_building_area, 160, 70, -0.3},
    {&GeoFeatures::next_buildings_dist_mean, 25, 10, -0.6},
    {&GeoFeatures::next_buildings_dist_var, 120, 60, -0.4},
    {&GeoFeatures::building_dist_mean, 90, 30, -0.6},
    {&GeoFeatures::building_dist_var, 800, 300, -0.3},
    {&GeoFeatures::num_buildings, 60, 25, 0.8},
    {&GeoFeatures::num_public_institutions, 2, 1.5, 0.6},
    {&GeoFeatures::num_business, 8, 5, 0.8},
    {&GeoFeatures::num_food, 4, 3, 0.8},
    {&GeoFeatures::num_transportation, 5, 3, 0.7},
    {&GeoFeatures::num_recreation, 3, 2, 0.3},
    {&GeoFeatures::num_culture, 1, 1, 0.6},
    {&GeoFeatures::num_sights, 1, 1, 0.5},
    {&GeoFeatures::num_countryside, 2, 1.5, -0.7},
    {&GeoFeatures::num_road_system, 30, 12, 0.6},
    {&GeoFeatures::min_dist_business, 250, 120, -0.7},
    {&GeoFeatures::min_dist_food, 300, 150, -0.7},
    {&GeoFeatures::min_dist_culture, 900, 400, -0.6},
    {&GeoFeatures::mean_dist_public_institutions, 700, 250, -0.6},
    {&GeoFeatures::mean_dist_business, 500, 200, -0.7},
    {&GeoFeatures::mean_dist_food, 550, 200, -0.7},
    {&GeoFeatures::mean_dist_transportation, 400, 150, -0.6},
    {&GeoFeatures::mean_dist_recreation, 600, 200, -0.3},
    {&GeoFeatures::mean_dist_culture, 1200, 400, -0.6},
    {&GeoFeatures::mean_dist_sights, 1300, 450, -0.5},
    {&GeoFeatures::mean_dist_countryside, 500, 250, 0.7},
    {&GeoFeatures::mean_dist_road_system, 80, 30, -0.5},
    {&GeoFeatures::total_area_apartments, 12000, 6000, 0.8},
    {&GeoFeatures::total_area_single_family, 15000, 6000, -0.5},
    {&GeoFeatures::total_area_non_residential, 6000, 4000, 0.6},
    {&GeoFeatures::total_area_not_specified, 2000, 1500, 0.0},
    {&GeoFeatures::total_area_countryside, 20000, 12000, -0.8},
    {&GeoFeatures::total_area_residential, 30000, 10000, 0.3},
    {&GeoFeatures::total_area_city, 25000, 12000, 0.8},
};

const std::vector<std::string> kBuildingTypes = {"apartments", "house",      "detached",
                                                 "terrace",    "commercial", "retail",
                                                 "garage",     "farm"};
const std::vector<std::string> kLandUseTypes = {"residential", "commercial", "retail",
                                                "industrial",  "farmland",   "forest",
                                                "meadow"};
const std::vector<std::string> kBankTypes = {"Sparkasse", "Volksbank", "Direktbank",
                                             "Privatbank", "Landesbank", "Other"};

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

const std::string& pick_by_urbanity(Rng& rng, const std::vector<std::string>& levels,
                                    double urbanity) {
  // Urban addresses favour the front of the list.
  const double pos = clip(0.5 - 0.25 * urbanity + 0.25 * rng.normal(), 0.0, 0.999999);
  return levels[static_cast<std::size_t>(pos * levels.size())];
}

GeoFeatures make_geo(std::uint64_t seed) {
  Rng rng(seed);
  GeoFeatures g;
  const double urbanity = rng.normal();
  g.lat = clip(49.01 + 0.06 * rng.normal() - 0.02 * urbanity, -90.0, 90.0);
  g.lon = clip(8.40 + 0.09 * rng.normal(), -180.0, 180.0);
  for (const auto& spec : kGeoNumeric) {
    const double z = spec.urban * urbanity + std::sqrt(1.0 - spec.urban * spec.urban) * rng.normal();
    const bool missing = rng.bernoulli(0.02);
    g.*spec.field = missing ? kMissing : std::max(0.0, spec.mean + spec.sd * z);
  }
  g.this_building_type = pick_by_urbanity(rng, kBuildingTypes, urbanity);
  g.next_building_type = pick_by_urbanity(rng, kBuildingTypes, urbanity);
  g.building_type_mode = pick_by_urbanity(rng, kBuildingTypes, urbanity);
  g.this_land_use_type = pick_by_urbanity(rng, kLandUseTypes, urbanity);
  g.next_land_use_type = pick_by_urbanity(rng, kLandUseTypes, urbanity);
  if (rng.bernoulli(0.01)) g.this_building_type.clear();
  return g;
}

Date random_date(Rng& rng, int year) {
  const unsigned m = 1 + static_cast<unsigned>(rng.below(12));
  const unsigned d = 1 + static_cast<unsigned>(rng.below(28));
  return make_date(year, m, d);
}

// Each full calendar year after the start the contract ends with kChurnRate.
std::optional<Date> draw_end_date(Rng& rng, Date start, int last_year) {
  for (int y = static_cast<int>(start.year()) + 1; y <= last_year; ++y) {
    if (rng.bernoulli(kChurnRate)) return std::max(start, random_date(rng, y));
  }
  return std::nullopt;
}

struct SimCustomer {
  std::string id;
  std::string salutation;
  double base_age = kMissing;  // age in first_year
  double contact_rate = 1.0;
  double dunning_rate = 0.1;
  CustomerProfile profile;
  std::vector<ContractRecord> contracts;
  std::vector<std::string> addresses;
};

std::string tariff_for(ContractType t, Rng& rng) {
  switch (t) {
    case ContractType::Power:
      return "power_std";
    case ContractType::Internet:
      return rng.bernoulli(0.6) ? "inet_30" : "inet_100";
    case ContractType::TV:
      return rng.bernoulli(0.65) ? "tv_basic" : "tv_premium";
  }
  return {};
}

ContractRecord make_contract(const SimCustomer& c, ContractType t, Date start, Rng& rng,
                             int last_year, double power_kwh) {
  ContractRecord k;
  k.contract_id = fmt::format("{}-{}", c.id, c.contracts.size() + 1);
  k.customer_id = c.id;
  k.type = t;
  k.start_date = start;
  k.end_date = draw_end_date(rng, start, last_year);
  k.tariff_id = tariff_for(t, rng);
  if (t == ContractType::Power) k.yearly_consumption_kwh = power_kwh;
  k.salutation = c.salutation;
  k.address_key = c.addresses.size() > 1 && rng.bernoulli(0.35) ? c.addresses[1] : c.addresses[0];
  return k;
}

SimCustomer make_customer(const GeneratorConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, {kStreamCustomer, index}));
  SimCustomer c;
  c.id = fmt::format("C{:07}", index + 1);
  const bool mrs = rng.bernoulli(0.48);
  c.salutation = mrs ? "Mrs." : "Mr.";
  c.profile.form_of_address = mrs ? "Mrs" : "Mr";
  if (!rng.bernoulli(0.03)) c.base_age = std::round(clip(rng.normal(50.0, 15.0), 18.0, 95.0));
  c.contact_rate = std::exp(rng.normal(0.2, 0.6));
  c.dunning_rate = rng.bernoulli(0.1) ? 0.8 : 0.05;
  c.profile.bank_type = kBankTypes[std::min<std::size_t>(
      kBankTypes.size() - 1, static_cast<std::size_t>(std::floor(std::abs(rng.normal()) * 2.2)))];
  if (rng.bernoulli(0.05)) c.profile.bank_type.clear();
  c.profile.has_title = rng.bernoulli(0.08);
  c.profile.has_phone = rng.bernoulli(0.6);
  c.profile.has_mobile = rng.bernoulli(0.55);
  c.profile.has_email = rng.bernoulli(0.7);
  c.profile.has_diff_billing = rng.bernoulli(0.05);
  c.profile.has_iban = rng.bernoulli(0.8);
  c.profile.uses_service_portal = rng.bernoulli(0.3);
  c.profile.uses_online_bills = rng.bernoulli(0.4);

  c.addresses.push_back(fmt::format("A{:07}", index + 1));
  if (rng.bernoulli(kSecondAddressRate)) c.addresses.push_back(fmt::format("A{:07}b", index + 1));

  const int start_year =
      kEarliestStartYear + static_cast<int>(rng.below(cfg.last_year - kEarliestStartYear));
  const Date start = random_date(rng, start_year);
  const double kwh = std::round(std::exp(rng.normal(std::log(2800.0), 0.45)));
  bool power = rng.bernoulli(0.9);
  const bool inet = rng.bernoulli(0.25);
  const bool tv = rng.bernoulli(0.2);
  if (!power && !inet && !tv) power = true;
  if (power) c.contracts.push_back(make_contract(c, ContractType::Power, start, rng, cfg.last_year, kwh));
  if (inet) c.contracts.push_back(make_contract(c, ContractType::Internet, start, rng, cfg.last_year, 0));
  if (tv) c.contracts.push_back(make_contract(c, ContractType::TV, start, rng, cfg.last_year, 0));
  return c;
}

std::vector<ContractRecord> make_business_contracts(const GeneratorConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, {kStreamBusiness, index}));
  SimCustomer c;
  c.id = fmt::format("B{:07}", index + 1);
  c.salutation = "Company";
  c.addresses.push_back(fmt::format("AB{:07}", index + 1));
  const Date start = random_date(rng, 2000 + static_cast<int>(rng.below(cfg.last_year - 2000)));
  c.contracts.push_back(make_contract(c, ContractType::Power, start, rng, cfg.last_year,
                                      150000.0 + std::round(rng.uniform() * 50000.0)));
  return c.contracts;
}

std::optional<CustomerRecord> customer_year(const SimCustomer& c, int year, int first_year,
                                            const TariffTable& tariffs, const GeoByAddress& geo,
                                            std::uint64_t seed, std::size_t index) {
  bool active = false;
  std::vector<Money> revenues;
  revenues.reserve(c.contracts.size());
  for (const auto& k : c.contracts) {
    active = active || active_days(k, year) > 0;
    revenues.push_back(compute_contract_revenue(k, year, tariffs));
  }
  if (!active) return std::nullopt;
  Rng rng(derive_seed(seed, {kStreamYear, index, static_cast<std::uint64_t>(year)}));
  CustomerProfile p = c.profile;
  p.age_years = std::isnan(c.base_age) ? kMissing : c.base_age + (year - first_year);
  p.number_of_contacts = static_cast<double>(rng.poisson(c.contact_rate));
  p.number_of_dunnings = static_cast<double>(rng.poisson(c.dunning_rate));
  return aggregate_to_customer(c.contracts, year, revenues, p, geo);
}

double logit(double u) { return std::log(u) - std::log1p(-u); }

struct CaseState {
  std::string key;
  ContractType owner;
  ContractType target;
  double ratio;
  std::vector<std::size_t> members;  // customer indices eligible for this case
  double intercept = 0.0;
  std::size_t positives = 0;
};

// Purchases of `target` among members of the cases sharing that target. A
// customer in several cases gets the mean of their intercepts.
class TargetModel {
 public:
  TargetModel(std::vector<CaseState*> cases, const std::vector<double>& score,
              const std::vector<double>& u)
      : cases_(std::move(cases)) {
    std::map<std::size_t, std::size_t> slot;
    for (std::size_t c = 0; c < cases_.size(); ++c) {
      for (std::size_t i : cases_[c]->members) slot.emplace(i, 0);
    }
    for (auto& [i, s] : slot) {
      s = customer_.size();
      customer_.push_back(i);
      threshold_.push_back(logit(u[i]) - score[i]);
      case_of_.emplace_back();
    }
    member_slots_.resize(cases_.size());
    for (std::size_t c = 0; c < cases_.size(); ++c) {
      for (std::size_t i : cases_[c]->members) {
        const std::size_t s = slot.at(i);
        case_of_[s].push_back(c);
        member_slots_[c].push_back(s);
      }
    }
  }

  std::size_t size() const { return customer_.size(); }
  std::size_t customer(std::size_t s) const { return customer_[s]; }

  bool buys_slot(std::size_t s) const {
    double b = 0.0;
    for (std::size_t c : case_of_[s]) b += cases_[c]->intercept;
    return b / static_cast<double>(case_of_[s].size()) > threshold_[s];
  }

  std::size_t count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t s : member_slots_[c]) n += buys_slot(s) ? 1 : 0;
    return n;
  }

 private:
  std::vector<CaseState*> cases_;
  std::vector<std::size_t> customer_;
  std::vector<double> threshold_;
  std::vector<std::vector<std::size_t>> case_of_;
  std::vector<std::vector<std::size_t>> member_slots_;
};

bool within(double count, double target, double rel) {
  return std::abs(count - target) <= std::max(rel * target, 0.5);
}

void calibrate(std::vector<CaseState>& cases, ContractType target, const std::vector<double>& score,
               const std::vector<double>& u, int year) {
  std::vector<CaseState*> group;
  for (auto& c : cases) {
    if (c.target == target && !c.members.empty()) group.push_back(&c);
  }
  if (group.empty()) return;
  TargetModel model(group, score, u);
  constexpr int kMaxSteps = 100;
  constexpr int kMaxSweeps = 25;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool all_ok = true;
    for (std::size_t g = 0; g < group.size(); ++g) {
      CaseState* c = group[g];
      const double goal = c->ratio * c->members.size();
      if (within(static_cast<double>(model.count(g)), goal, 0.01)) continue;
      all_ok = false;
      double lo = -60.0, hi = 60.0;
      for (int step = 0; step < kMaxSteps; ++step) {
        c->intercept = 0.5 * (lo + hi);
        const double n = static_cast<double>(model.count(g));
        if (within(n, goal, 0.01)) break;
        (n < goal ? lo : hi) = c->intercept;
      }
    }
    if (all_ok) break;
  }
  for (std::size_t g = 0; g < group.size(); ++g) {
    CaseState* c = group[g];
    c->positives = model.count(g);
    const double goal = c->ratio * c->members.size();
    if (!within(static_cast<double>(c->positives), goal, 0.10)) {
      throw NumericError(fmt::format(
          "calibration failed for {} in {}: {} buyers among {} eligible (target ratio {})",
          c->key, year, c->positives, c->members.size(), c->ratio));
    }
  }
}

// Deterministic limit of an infinite coefficient: the top scorers of each
// target group buy.
void threshold_rule(std::vector<CaseState>& cases, ContractType target,
                    const std::vector<double>& score, std::vector<std::uint8_t>& buys) {
  std::set<std::size_t> pool;
  double goal = 0.0;
  for (auto& c : cases) {
    if (c.target != target) continue;
    pool.insert(c.members.begin(), c.members.end());
    goal += c.ratio * c.members.size();
  }
  if (pool.empty()) return;
  std::vector<std::size_t> order(pool.begin(), pool.end());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  std::size_t total = 0;
  for (const auto& c : cases) total += c.target == target ? c.members.size() : 0;
  const auto n = static_cast<std::size_t>(std::llround(goal * pool.size() / total));
  const std::size_t take = std::min(std::max<std::size_t>(n, 1), order.size());
  // Ties at the cut-off all fall on the same side.
  const double cut = score[order[take - 1]];
  for (std::size_t i : order) buys[i] = score[i] >= cut ? 1 : 0;
  for (auto& c : cases) {
    if (c.target != target) continue;
    c.positives = 0;
    for (std::size_t i : c.members) c.positives += buys[i];
  }
}

std::size_t target_slot(ContractType t) { return static_cast<std::size_t>(t); }

}  // namespace

// ---------------------------------------------------------------------------

std::vector<SignalTerm> GeneratorConfig::default_signal() {
  return {{"Total.Revenue", 1, 1.2},
          {"Customer.RelationshipMonthsUntil", -1, 0.9},
          {"Customer.AgeInYears", -1, 0.8},
          {"Customer.NumberOfContacts", 1, 0.5},
          {"Has.Mobile", 1, 0.4}};
}

void GeneratorConfig::validate() const {
  if (n_customers == 0) throw ConfigError("generator: n_customers must be positive");
  if (!(business_fraction >= 0.0 && business_fraction < 1.0)) {
    throw ConfigError("generator: business_fraction must lie in [0, 1)");
  }
  if (first_year >= last_year) throw ConfigError("generator: years must span at least two years");
  if (first_year <= kEarliestStartYear) {
    throw ConfigError(fmt::format("generator: first_year must be after {}", kEarliestStartYear));
  }
  for (const auto& [key, ratio] : target_positive_ratio) {
    const auto [owner, target] = parse_case_pair(key);
    CrossSellCase::make(owner, target, first_year).validate();
    if (!(ratio > 0.0 && ratio < 0.1)) {
      throw ConfigError(fmt::format("generator: target ratio for {} must lie in (0, 0.1)", key));
    }
  }
  for (const auto& t : signal_spec) {
    const ColumnAccessor* col = find_column(t.feature);
    if (!col || !col->info.feature || col->info.kind == ColumnKind::Categorical) {
      throw ConfigError(
          fmt::format("generator: signal feature '{}' is not a numeric schema feature", t.feature));
    }
    if (t.sign != 1 && t.sign != -1) throw ConfigError("generator: signal sign must be +1 or -1");
    if (!(t.magnitude >= 0.0)) throw ConfigError("generator: signal magnitude must be >= 0");
  }
  if (!(noise_scale >= 0.0) || std::isinf(noise_scale)) {
    throw ConfigError("generator: noise_scale must be finite and >= 0");
  }
}

nlohmann::json GeneratorConfig::to_json() const {
  nlohmann::json sig = nlohmann::json::array();
  for (const auto& t : signal_spec) {
    nlohmann::json m = t.magnitude;
    if (std::isinf(t.magnitude)) m = "inf";
    sig.push_back({{"feature", t.feature}, {"sign", t.sign}, {"magnitude", m}});
  }
  return {{"n_customers", n_customers},
          {"business_fraction", business_fraction},
          {"first_year", first_year},
          {"last_year", last_year},
          {"target_positive_ratio", target_positive_ratio},
          {"signal_spec", sig},
          {"noise_scale", noise_scale},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  try {
    c.n_customers = j.value("n_customers", c.n_customers);
    c.business_fraction = j.value("business_fraction", c.business_fraction);
    c.first_year = j.value("first_year", c.first_year);
    c.last_year = j.value("last_year", c.last_year);
    if (j.contains("target_positive_ratio")) {
      c.target_positive_ratio = j.at("target_positive_ratio").get<std::map<std::string, double>>();
    }
    if (j.contains("signal_spec")) {
      c.signal_spec.clear();
      for (const auto& t : j.at("signal_spec")) {
        SignalTerm s;
        s.feature = t.at("feature").get<std::string>();
        s.sign = t.value("sign", 1);
        const auto& m = t.at("magnitude");
        s.magnitude = m.is_string() && m.get<std::string>() == "inf"
                          ? std::numeric_limits<double>::infinity()
                          : m.get<double>();
        c.signal_spec.push_back(std::move(s));
      }
    }
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("generator config: {}", e.what()));
  }
  c.validate();
  return c;
}

nlohmann::json GenerationTruth::to_json() const {
  nlohmann::json sig = nlohmann::json::array();
  for (const auto& s : signal) {
    nlohmann::json m = s.magnitude;
    if (std::isinf(s.magnitude)) m = "inf";
    sig.push_back({{"column", s.column}, {"field", s.field}, {"sign", s.sign}, {"magnitude", m}});
  }
  nlohmann::json cal = nlohmann::json::array();
  for (const auto& c : calibration) {
    cal.push_back({{"case", c.pair_key},
                   {"year", c.year},
                   {"intercept", c.intercept},
                   {"eligible", c.eligible},
                   {"positives", c.positives},
                   {"realized_ratio", c.realized_ratio}});
  }
  return {{"seed", seed}, {"noise_scale", noise_scale}, {"signal", sig}, {"calibration", cal}};
}

GenerationTruth GenerationTruth::from_json(const nlohmann::json& j) {
  GenerationTruth t;
  try {
    t.seed = j.at("seed").get<std::uint64_t>();
    t.noise_scale = j.at("noise_scale").get<double>();
    for (const auto& s : j.at("signal")) {
      SignalTruth st;
      st.column = s.at("column").get<std::string>();
      st.field = s.at("field").get<std::string>();
      st.sign = s.at("sign").get<int>();
      const auto& m = s.at("magnitude");
      st.magnitude = m.is_string() ? std::numeric_limits<double>::infinity() : m.get<double>();
      t.signal.push_back(std::move(st));
    }
    for (const auto& c : j.at("calibration")) {
      t.calibration.push_back({c.at("case").get<std::string>(), c.at("year").get<int>(),
                               c.at("intercept").get<double>(), c.at("eligible").get<std::size_t>(),
                               c.at("positives").get<std::size_t>(),
                               c.at("realized_ratio").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("truth record: {}", e.what()));
  }
  return t;
}

TariffTable default_tariffs() {
  TariffTable t;
  t.add({"inet_30", ContractType::Internet, 15.32, 0.0});
  t.add({"inet_100", ContractType::Internet, 24.90, 0.0});
  t.add({"tv_basic", ContractType::TV, 9.90, 0.0});
  t.add({"tv_premium", ContractType::TV, 17.90, 0.0});
  t.add({"power_std", ContractType::Power, 0.0, 0.28});
  return t;
}

Population generate_population(const GeneratorConfig& cfg, int threads) {
  cfg.validate();
  Population pop;
  pop.tariffs = default_tariffs();
  pop.truth.seed = cfg.seed;
  pop.truth.noise_scale = cfg.noise_scale;

  std::vector<const ColumnAccessor*> signal_cols;
  bool threshold_mode = false;
  for (const auto& t : cfg.signal_spec) {
    const ColumnAccessor* col = find_column(t.feature);
    signal_cols.push_back(col);
    threshold_mode = threshold_mode || std::isinf(t.magnitude);
    pop.truth.signal.push_back(
        {std::string(col->info.name), std::string(col->info.field), t.sign, t.magnitude});
  }

  const std::size_t n = cfg.n_customers;
  std::vector<SimCustomer> sim(n);
  parallel_for(n, threads, [&](std::size_t i) { sim[i] = make_customer(cfg, i); });

  GeoByAddress geo;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < sim[i].addresses.size(); ++a) {
      geo.emplace(sim[i].addresses[a], make_geo(derive_seed(cfg.seed, {kStreamAddress, i, a})));
    }
  }

  std::vector<CaseState> cases;
  for (const auto& [key, ratio] : cfg.target_positive_ratio) {
    const auto [owner, target] = parse_case_pair(key);
    cases.push_back({key, owner, target, ratio, {}, 0.0, 0});
  }

  // records[y - first_year][i]
  const int n_years = cfg.last_year - cfg.first_year + 1;
  std::vector<std::vector<std::optional<CustomerRecord>>> records(n_years);

  for (int y = cfg.first_year; y <= cfg.last_year; ++y) {
    auto& year_rows = records[y - cfg.first_year];
    year_rows.resize(n);
    parallel_for(n, threads, [&](std::size_t i) {
      year_rows[i] = customer_year(sim[i], y, cfg.first_year, pop.tariffs, geo, cfg.seed, i);
    });
    if (y == cfg.last_year) break;

    // Standardized signal over the customers active in y.
    std::vector<double> score(n, 0.0);
    for (std::size_t t = 0; t < signal_cols.size(); ++t) {
      const SignalTerm& term = cfg.signal_spec[t];
      if (threshold_mode != std::isinf(term.magnitude)) continue;
      double sum = 0.0, sum2 = 0.0;
      std::size_t cnt = 0;
      std::vector<double> v(n, kMissing);
      for (std::size_t i = 0; i < n; ++i) {
        if (!year_rows[i]) continue;
        v[i] = numeric_value(*year_rows[i], *signal_cols[t]);
        if (std::isnan(v[i])) continue;
        sum += v[i];
        sum2 += v[i] * v[i];
        ++cnt;
      }
      if (cnt < 2) continue;
      const double mean = sum / cnt;
      const double sd = std::sqrt(std::max(0.0, sum2 / cnt - mean * mean));
      if (!(sd > 0.0)) continue;
      const double coef = threshold_mode ? term.sign : term.sign * term.magnitude;
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isnan(v[i])) score[i] += coef * (v[i] - mean) / sd;
      }
    }
    // uniforms[T][i]
    std::vector<std::vector<double>> uniforms(3, std::vector<double>(n, 0.5));
    for (std::size_t i = 0; i < n; ++i) {
      if (!year_rows[i]) continue;
      Rng rng(derive_seed(cfg.seed, {kStreamPurchase, i, static_cast<std::uint64_t>(y)}));
      if (!threshold_mode) score[i] += cfg.noise_scale * rng.normal();
      for (auto& u : uniforms) {
        double x = rng.uniform();
        while (x <= 0.0) x = rng.uniform();
        u[i] = x;
      }
    }

    for (auto& c : cases) {
      c.members.clear();
      c.positives = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& r = year_rows[i];
        if (r && r->existing(c.owner) && !holds_product(*r, c.target)) c.members.push_back(i);
      }
    }

    for (ContractType target : kContractTypes) {
      std::vector<std::uint8_t> buys(n, 0);
      const auto& u = uniforms[target_slot(target)];
      if (threshold_mode) {
        threshold_rule(cases, target, score, buys);
      } else {
        calibrate(cases, target, score, u, y);
        std::vector<CaseState*> group;
        for (auto& c : cases) {
          if (c.target == target && !c.members.empty()) group.push_back(&c);
        }
        if (group.empty()) continue;
        TargetModel model(group, score, u);
        for (std::size_t s = 0; s < model.size(); ++s) buys[model.customer(s)] = model.buys_slot(s);
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!buys[i]) continue;
        Rng rng(derive_seed(cfg.seed, {kStreamNewContract, i, static_cast<std::uint64_t>(y),
                                       target_slot(target)}));
        const Date start = make_date(y + 1, 1 + static_cast<unsigned>(rng.below(12)), 1);
        sim[i].contracts.push_back(make_contract(sim[i], target, start, rng, cfg.last_year, 0));
      }
    }
    for (const auto& c : cases) {
      pop.truth.calibration.push_back(
          {c.key, y, threshold_mode ? 0.0 : c.intercept, c.members.size(), c.positives,
           c.members.empty() ? 0.0 : static_cast<double>(c.positives) / c.members.size()});
    }
  }

  std::vector<ContractRecord> all;
  for (const auto& s : sim) all.insert(all.end(), s.contracts.begin(), s.contracts.end());
  const auto n_business = static_cast<std::size_t>(std::llround(cfg.business_fraction * n));
  for (std::size_t b = 0; b < n_business; ++b) {
    auto k = make_business_contracts(cfg, b);
    all.insert(all.end(), k.begin(), k.end());
  }
  FilterConfig filter;
  filter.window_first_year = cfg.first_year;
  filter.window_last_year = cfg.last_year;
  pop.contracts = filter_business_customers(all, filter);

  std::set<std::string_view> kept;
  for (const auto& k : pop.contracts) kept.insert(k.customer_id);
  for (std::size_t i = 0; i < n; ++i) {
    if (!kept.contains(sim[i].id)) continue;
    for (int y = 0; y < n_years; ++y) {
      if (records[y][i]) pop.customers.push_back(std::move(*records[y][i]));
    }
  }
  return pop;
}

std::vector<std::string> describe_truth(const GenerationTruth& truth) {
  std::vector<std::string> out;
  for (const auto& s : truth.signal) {
    const bool pos = s.sign > 0;
    out.push_back(fmt::format("{}: {} attribution expected (next-year buyers {} non-buyers)",
                              s.field, pos ? "positive" : "negative", pos ? ">" : "<"));
  }
  return out;
}

}  // namespace xsell
