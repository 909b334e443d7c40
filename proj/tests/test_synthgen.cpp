#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "xsell/error.hpp"
#include "xsell/prep.hpp"
#include "xsell/synthgen.hpp"
#include "xsell/table_io.hpp"

using namespace xsell;

namespace {

// Newton-Raphson logistic regression on standardized columns; returns the
// coefficients without the intercept.
std::vector<double> logistic_fit(const std::vector<std::vector<double>>& cols,
                                 const std::vector<std::uint8_t>& y) {
  const std::size_t d = cols.size() + 1, n = y.size();
  std::vector<std::vector<double>> x(n, std::vector<double>(d, 1.0));
  for (std::size_t j = 0; j + 1 < d; ++j) {
    double m = 0, s = 0;
    for (double v : cols[j]) m += v;
    m /= n;
    for (double v : cols[j]) s += (v - m) * (v - m);
    s = std::sqrt(s / n);
    for (std::size_t i = 0; i < n; ++i) x[i][j + 1] = s > 0 ? (cols[j][i] - m) / s : 0.0;
  }
  std::vector<double> beta(d, 0.0);
  for (int it = 0; it < 30; ++it) {
    std::vector<std::vector<double>> h(d, std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < d; ++j) z += beta[j] * x[i][j];
      const double p = 1 / (1 + std::exp(-z)), w = p * (1 - p);
      for (std::size_t a = 0; a < d; ++a) {
        h[a][d] += (y[i] - p) * x[i][a];
        for (std::size_t b = 0; b < d; ++b) h[a][b] += w * x[i][a] * x[i][b];
      }
    }
    // Gaussian elimination with partial pivoting.
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < d; ++r)
        if (std::abs(h[r][c]) > std::abs(h[piv][c])) piv = r;
      std::swap(h[c], h[piv]);
      for (std::size_t r = 0; r < d; ++r) {
        if (r == c) continue;
        const double f = h[r][c] / h[c][c];
        for (std::size_t k = c; k <= d; ++k) h[r][k] -= f * h[c][k];
      }
    }
    for (std::size_t j = 0; j < d; ++j) beta[j] += h[j][d] / h[j][j];
  }
  return {beta.begin() + 1, beta.end()};
}

}  // namespace

TEST_CASE("same seed gives identical tables") {
  GeneratorConfig g;
  g.n_customers = 1500;
  g.seed = 11;
  const auto a = generate_population(g), b = generate_population(g, 4);
  CHECK(write_customer_csv(a.customers) == write_customer_csv(b.customers));
  CHECK(write_contract_csv(a.contracts) == write_contract_csv(b.contracts));
  CHECK(a.truth.to_json() == b.truth.to_json());
  g.seed = 12;
  CHECK(write_customer_csv(generate_population(g).customers) != write_customer_csv(a.customers));
}

TEST_CASE("calibrated ratio at scale") {
  GeneratorConfig g;
  g.n_customers = 160000;
  g.seed = 5;
  const auto pop = generate_population(g);
  const auto c = CrossSellCase::make(ContractType::Power, ContractType::TV, 2015);
  const double r = build_labels(pop.customers, c).positive_ratio();
  CHECK(r >= 0.0117);
  CHECK(r <= 0.0143);
  for (const auto& cal : pop.truth.calibration) {
    if (cal.pair_key != "Power->TV") continue;
    CHECK(cal.realized_ratio == doctest::Approx(0.013).epsilon(0.1));
  }
}

TEST_CASE("deterministic threshold limit") {
  GeneratorConfig g;
  g.n_customers = 4000;
  g.seed = 6;
  g.noise_scale = 0.0;
  g.signal_spec = {{"Total.Revenue", 1, std::numeric_limits<double>::infinity()}};
  const auto pop = generate_population(g);
  const auto c = CrossSellCase::make(ContractType::Power, ContractType::TV, 2015);
  const auto lab = build_labels(pop.customers, c);
  double min_buyer = 1e300, max_other = -1e300;
  for (std::size_t k = 0; k < lab.labels.size(); ++k) {
    const double v = pop.customers[lab.record_index[k]].revenue_total.euros();
    if (lab.labels[k])
      min_buyer = std::min(min_buyer, v);
    else
      max_other = std::max(max_other, v);
  }
  CHECK(lab.positives > 0);
  CHECK(min_buyer > max_other);
}

TEST_CASE("planted directions are recovered by an independent logistic fit") {
  GeneratorConfig g;
  g.n_customers = 20000;
  g.seed = 7;
  const auto pop = generate_population(g);
  const auto c = CrossSellCase::make(ContractType::Power, ContractType::TV, 2016);
  const auto lab = build_labels(pop.customers, c);
  std::vector<std::vector<double>> cols;
  for (const auto& t : pop.truth.signal) {
    const ColumnAccessor* col = find_column(t.column);
    REQUIRE(col);
    std::vector<double> v;
    for (std::size_t i : lab.record_index) {
      const double x = numeric_value(pop.customers[i], *col);
      v.push_back(std::isnan(x) ? 0.0 : x);
    }
    cols.push_back(v);
  }
  const auto beta = logistic_fit(cols, lab.labels);
  for (std::size_t j = 0; j < beta.size(); ++j) {
    INFO(pop.truth.signal[j].column, " beta=", beta[j]);
    CHECK((beta[j] > 0) == (pop.truth.signal[j].sign > 0));
  }
}

TEST_CASE("truth description") {
  GenerationTruth t;
  t.signal = {{"Total.Revenue", "revenue_total", 1, 2.0}};
  const auto lines = describe_truth(t);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0].starts_with("revenue_total: positive attribution expected"));
  t.signal.clear();
  CHECK(describe_truth(t).empty());
}

TEST_CASE("population invariants") {
  GeneratorConfig g;
  g.n_customers = 2000;
  g.seed = 8;
  const auto pop = generate_population(g);
  for (const auto& c : pop.contracts) {
    c.validate();
    CHECK(normalize_salutation(c.salutation) != "company");
    if (c.yearly_consumption_kwh) CHECK(*c.yearly_consumption_kwh < 100000);
  }
  for (std::size_t i = 1; i < pop.customers.size(); ++i) {
    const auto& a = pop.customers[i - 1];
    const auto& b = pop.customers[i];
    CHECK((a.customer_id < b.customer_id || (a.customer_id == b.customer_id && a.year < b.year)));
  }
  for (const auto& r : pop.customers) r.validate();
  CHECK(GenerationTruth::from_json(pop.truth.to_json()).to_json() == pop.truth.to_json());
  CHECK(GeneratorConfig::from_json(g.to_json()).to_json() == g.to_json());
}

TEST_CASE("invalid configs") {
  GeneratorConfig g;
  g.n_customers = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = {};
  g.noise_scale = -1;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = {};
  g.target_positive_ratio["Power->TV"] = 0.2;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = {};
  g.signal_spec = {{"No.Such.Column", 1, 1.0}};
  CHECK_THROWS_AS(g.validate(), ConfigError);
}
