#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "xsell/analysis.hpp"
#include "xsell/distributions.hpp"
#include "xsell/error.hpp"
#include "xsell/rng.hpp"
#include "xsell/stats.hpp"
#include "xsell/synthgen.hpp"

using namespace xsell;

namespace {

std::vector<double> normal_sample(Rng& rng, std::size_t n, double mean, double sd) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(mean, sd);
  return v;
}

ShapMatrix shap_block(Rng& rng, std::size_t rows, std::size_t cols, int fold) {
  ShapMatrix m;
  m.values = FeatureMatrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m.values(r, c) = rng.normal(0.01 * double(c), 0.02);
  for (std::size_t c = 0; c < cols; ++c) m.feature_names.push_back("f" + std::to_string(c));
  m.fold_id = fold;
  m.outputs.assign(rows, 0.0);
  m.instance_ids.resize(rows);
  return m;
}

}  // namespace

TEST_SUITE("distributions") {
  TEST_CASE("incomplete beta and gamma agree with boost") {
    const double as[] = {0.5, 1.0, 2.5, 10.0, 75.0};
    const double xs[] = {0.001, 0.1, 0.35, 0.5, 0.9, 0.999};
    for (double a : as)
      for (double b : as)
        for (double x : xs) {
          const double ref = boost::math::ibeta(a, b, x);
          CHECK(incomplete_beta(a, b, x) == doctest::Approx(ref).epsilon(1e-10));
        }
    for (double a : as)
      for (double x : {0.01, 0.5, 1.0, 3.0, 20.0, 120.0}) {
        CHECK(gamma_p(a, x) == doctest::Approx(boost::math::gamma_p(a, x)).epsilon(1e-10));
        const double q = boost::math::gamma_q(a, x);
        CHECK(std::abs(gamma_q(a, x) - q) <= 1e-10 * std::max(q, 1e-300) + 1e-300);
      }
  }

  TEST_CASE("t and chi-squared cdf agree with boost") {
    for (double df : {1.0, 2.0, 5.0, 8.0, 30.0, 1527.73}) {
      boost::math::students_t dist(df);
      for (double t : {-12.0, -2.0, -0.3, 0.0, 0.7, 2.228, 10.96}) {
        CHECK(student_t_cdf(t, df) == doctest::Approx(boost::math::cdf(dist, t)).epsilon(1e-9));
        const double sf = boost::math::cdf(boost::math::complement(dist, t));
        CHECK(student_t_sf(t, df) == doctest::Approx(sf).epsilon(1e-8));
      }
    }
    for (double df : {1.0, 2.0, 3.0, 9.0, 25.0}) {
      boost::math::chi_squared dist(df);
      for (double x : {0.01, 0.5, 3.841, 7.2, 20.0, 60.0}) {
        CHECK(chi_squared_cdf(x, df) == doctest::Approx(boost::math::cdf(dist, x)).epsilon(1e-9));
        const double sf = boost::math::cdf(boost::math::complement(dist, x));
        CHECK(chi_squared_sf(x, df) == doctest::Approx(sf).epsilon(1e-8));
      }
    }
  }

  TEST_CASE("quantiles match printed tables") {
    CHECK(std::abs(chi_squared_quantile(0.95, 1) - 3.841) < 1e-3);
    CHECK(std::abs(chi_squared_quantile(0.95, 2) - 5.991) < 1e-3);
    CHECK(std::abs(chi_squared_quantile(0.99, 10) - 23.209) < 1e-3);
    CHECK(std::abs(student_t_quantile(0.975, 10) - 2.228) < 1e-3);
    CHECK(std::abs(student_t_quantile(0.95, 5) - 2.015) < 1e-3);
    CHECK(std::abs(student_t_quantile(0.975, 1) - 12.706) < 1e-3);
    CHECK(std::abs(student_t_quantile(0.025, 10) + 2.228) < 1e-3);
  }

  TEST_CASE("invalid degrees of freedom") {
    CHECK_THROWS_AS(student_t_cdf(1.0, 0.0), NumericError);
    CHECK_THROWS_AS(chi_squared_sf(1.0, -1.0), NumericError);
  }
}

TEST_SUITE("kruskal_wallis") {
  TEST_CASE("rank-sum formula on three separated groups") {
    const std::vector<std::vector<double>> g = {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
    const auto r = kruskal_wallis(g);
    // 12/(9*10) * (6^2 + 15^2 + 24^2)/3 - 3*10
    CHECK(r.h == doctest::Approx(7.2).epsilon(1e-12));
    CHECK(r.df == 2.0);
    CHECK(r.p == doctest::Approx(std::exp(-3.6)).epsilon(1e-10));
    CHECK(r.effect_size == doctest::Approx(5.2 / 6.0));
    CHECK(r.n == 9);
  }

  TEST_CASE("ties use midranks and the tie correction") {
    const std::vector<std::vector<double>> g = {{1, 1, 2, 3}, {2, 3, 3, 4}, {5, 5, 6}};
    CHECK(kruskal_wallis(g).h == doctest::Approx(7.61737089201878).epsilon(1e-10));
  }

  TEST_CASE("constant data gives H = 0") {
    const std::vector<std::vector<double>> g(4, std::vector<double>(5, 0.25));
    const auto r = kruskal_wallis(g);
    CHECK(r.h == 0.0);
    CHECK(r.p == 1.0);
    CHECK(r.effect_size == 0.0);
  }

  TEST_CASE("two groups agree with the normal-approximation rank-sum test") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<std::vector<double>> g = {normal_sample(rng, 20, 0, 1),
                                            normal_sample(rng, 20, 0.4 * rep / 10.0, 1)};
      // Round to create ties.
      for (auto& v : g)
        for (double& x : v) x = std::round(x * 4) / 4;
      std::vector<double> all;
      for (auto& v : g) all.insert(all.end(), v.begin(), v.end());
      const double n = all.size();
      double ra = 0.0, tie_term = 0.0;
      for (double x : g[0]) {
        double below = 0, equal = 0;
        for (double y : all) below += y < x, equal += y == x;
        ra += below + (equal + 1) / 2.0;
      }
      std::vector<double> sorted = all;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = double(j - i);
        tie_term += t * t * t - t;
        i = j;
      }
      const double na = 20, nb = 20;
      const double mu = na * (n + 1) / 2;
      const double var = na * nb / 12.0 * ((n + 1) - tie_term / (n * (n - 1)));
      const double z = (ra - mu) / std::sqrt(var);
      const double p = 2 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::abs(z)));
      const auto r = kruskal_wallis(g);
      CHECK(r.h == doctest::Approx(z * z).epsilon(1e-9));
      CHECK(r.p == doctest::Approx(p).epsilon(1e-8));
    }
  }

  TEST_CASE("input errors") {
    CHECK_THROWS_AS(kruskal_wallis(std::vector<std::vector<double>>{{1, 2, 3, 4, 5}}), DataError);
    CHECK_THROWS_AS(kruskal_wallis(std::vector<std::vector<double>>{{1, 2, 3}, {}}), DataError);
    CHECK_THROWS_AS(kruskal_wallis(std::vector<std::vector<double>>{{1, 2}, {3, 4}}), DataError);
    CHECK_THROWS_AS(kruskal_wallis(std::vector<std::vector<double>>{{1, 2, NAN}, {3, 4}}), DataError);
  }
}

TEST_SUITE("t_tests") {
  TEST_CASE("Welch hand derivation") {
    const std::vector<double> a = {1, 2, 3, 4, 5}, b = {3, 4, 5, 6, 7};
    // Means 3 and 5, variances 2.5: SE = 1, df = 1 / (2 * 0.25^2 / 4) = 8.
    const auto r = welch_t(a, b, Direction::Less);
    CHECK(r.t == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(student_t_cdf(-2.0, 8.0)).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(0.04025812).epsilon(1e-6));
    CHECK(r.cohens_d == doctest::Approx(-2.0 / std::sqrt(2.5)).epsilon(1e-9));
    CHECK(welch_t(a, b, Direction::Greater).p == doctest::Approx(1 - r.p).epsilon(1e-12));
    CHECK(welch_t(a, b, Direction::TwoSided).p == doctest::Approx(2 * r.p).epsilon(1e-12));
  }

  TEST_CASE("unequal variances") {
    const std::vector<double> a = {1, 2, 3, 4}, b = {2, 4, 6, 8, 10};
    const auto w = welch_t(a, b, Direction::Less);
    CHECK(w.t == doctest::Approx(-2.2514363231593695).epsilon(1e-9));
    CHECK(w.df == doctest::Approx(5.520787746170677).epsilon(1e-9));
    CHECK(w.p == doctest::Approx(0.03456679659619618).epsilon(1e-6));
    const auto s = student_t(a, b, Direction::Less);
    CHECK(s.df == 7.0);
    CHECK(s.t == doctest::Approx(-2.0578065752724592).epsilon(1e-9));
    CHECK(s.p == doctest::Approx(0.03930961752934689).epsilon(1e-6));
    CHECK(w.df != doctest::Approx(s.df));
  }

  TEST_CASE("identical samples") {
    const std::vector<double> a = {2, 4, 4, 5, 9};
    for (auto* fn : {&welch_t, &student_t}) {
      const auto r = fn(a, a, Direction::Greater);
      CHECK(r.t == 0.0);
      CHECK(r.p == doctest::Approx(0.5));
      CHECK(r.cohens_d == 0.0);
    }
  }

  TEST_CASE("location invariance") {
    Rng rng(5);
    const auto a = normal_sample(rng, 30, 1, 2), b = normal_sample(rng, 45, 0.3, 1);
    for (double shift : {-1000.0, 3.5, 1e4}) {
      std::vector<double> as = a, bs = b;
      for (double& x : as) x += shift;
      for (double& x : bs) x += shift;
      const auto r0 = welch_t(a, b, Direction::Greater), r1 = welch_t(as, bs, Direction::Greater);
      CHECK(r1.t == doctest::Approx(r0.t).epsilon(1e-8));
      CHECK(r1.df == doctest::Approx(r0.df).epsilon(1e-8));
      CHECK(r1.p == doctest::Approx(r0.p).epsilon(1e-8));
      CHECK(r1.cohens_d == doctest::Approx(r0.cohens_d).epsilon(1e-8));
    }
  }

  TEST_CASE("student df is n_a + n_b - 2 on equal variances") {
    const std::vector<double> a = {1, 2, 3, 4, 5, 6}, b = {11, 12, 13, 14};
    CHECK(student_t(a, b, Direction::TwoSided).df == 8.0);
    CHECK(welch_t(a, b, Direction::TwoSided).df != 8.0);
  }

  TEST_CASE("errors") {
    const std::vector<double> one = {1}, two = {1, 2}, c = {3, 3, 3};
    CHECK_THROWS_AS(welch_t(one, two, Direction::Greater), DataError);
    CHECK_THROWS_AS(welch_t(c, c, Direction::Greater), NumericError);
    CHECK_THROWS_AS(student_t(c, c, Direction::Greater), NumericError);
  }
}

TEST_SUITE("chi_squared") {
  TEST_CASE("expected-cell arithmetic") {
    const std::uint64_t t[2][2] = {{30, 10}, {10, 30}};
    const auto r = chi_squared_2x2(t);
    // Every expected cell is 20: 4 * 10^2 / 20.
    CHECK(r.chi2 == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(r.omega == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(7.744216431044088e-06).epsilon(1e-6));
    CHECK(r.n == 80);
  }

  TEST_CASE("asymmetric table") {
    const std::uint64_t t[2][2] = {{12, 5}, {7, 21}};
    const auto r = chi_squared_2x2(t);
    CHECK(r.chi2 == doctest::Approx(9.011520600142893).epsilon(1e-9));
    CHECK(r.p == doctest::Approx(0.0026828312246830817).epsilon(1e-6));
    const std::uint64_t tt[2][2] = {{12, 7}, {5, 21}};
    CHECK(chi_squared_2x2(tt).omega == doctest::Approx(r.omega).epsilon(1e-14));
  }

  TEST_CASE("identical proportions") {
    const std::uint64_t t[2][2] = {{10, 40}, {30, 120}};
    const auto r = chi_squared_2x2(t);
    CHECK(r.chi2 == doctest::Approx(0.0).scale(1));
    CHECK(r.omega == doctest::Approx(0.0).scale(1));
  }

  TEST_CASE("vector overload tallies table[feature][group]") {
    const std::vector<std::uint8_t> f = {1, 1, 0, 0, 1, 0, 1}, g = {1, 0, 0, 1, 1, 0, 0};
    const auto r = chi_squared_2x2(f, g);
    CHECK(r.table[1][1] == 2);
    CHECK(r.table[1][0] == 2);
    CHECK(r.table[0][1] == 1);
    CHECK(r.table[0][0] == 2);
  }

  TEST_CASE("empty margin") {
    const std::uint64_t t[2][2] = {{0, 0}, {3, 4}};
    CHECK_THROWS_AS(chi_squared_2x2(t), DataError);
  }
}

TEST_SUITE("robustness") {
  TEST_CASE("tag rules") {
    CHECK(robustness_tag(0.05, 0.9, 0.05, 0.06) == RobustnessTag::RobustNs);
    CHECK(robustness_tag(0.049, 0.059, 0.05, 0.06) == RobustnessTag::RobustSmallEffect);
    CHECK(robustness_tag(0.049, 0.06, 0.05, 0.06) == RobustnessTag::NotRobust);
    CHECK(tag_light(RobustnessTag::RobustNs) == "green");
    CHECK(tag_light(RobustnessTag::RobustSmallEffect) == "yellow");
    CHECK(tag_light(RobustnessTag::NotRobust) == "red");
    for (auto t : {RobustnessTag::RobustNs, RobustnessTag::RobustSmallEffect, RobustnessTag::NotRobust})
      CHECK(parse_tag(tag_name(t)) == t);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
      const double p = rng.uniform(), es = rng.uniform() * 0.2;
      const auto tag = robustness_tag(p, es, 0.05, 0.06);
      const int hits = (tag == RobustnessTag::RobustNs) + (tag == RobustnessTag::RobustSmallEffect) +
                       (tag == RobustnessTag::NotRobust);
      CHECK(hits == 1);
      CHECK((tag == RobustnessTag::RobustNs) == (p >= 0.05));
    }
  }

  TEST_CASE("stars and annotation") {
    CHECK(significance_stars(0.0009) == "***");
    CHECK(significance_stars(0.009) == "**");
    CHECK(significance_stars(0.049) == "*");
    CHECK(significance_stars(0.05) == "n.s.");
    FeatureRobustness f;
    f.p = 0.0001;
    f.effect_size = 0.031;
    CHECK(f.annotation() == "*** 0.03");
    f.p = 0.5;
    CHECK(f.annotation() == "n.s.");
  }

  TEST_CASE("replicated folds are robust") {
    Rng rng(3);
    const ShapMatrix base = shap_block(rng, 30, 4, 0);
    std::vector<ShapMatrix> folds;
    std::vector<std::vector<std::uint8_t>> buyers;
    for (int f = 0; f < 10; ++f) {
      folds.push_back(base);
      folds.back().fold_id = f;
      buyers.emplace_back(30, 1);
    }
    const auto rep = fold_robustness(folds, buyers);
    REQUIRE(rep.features.size() == 4);
    for (const auto& f : rep.features) {
      CHECK(f.h == doctest::Approx(0.0).scale(1));
      CHECK(f.tag == RobustnessTag::RobustNs);
    }
  }

  TEST_CASE("shifted fold is not robust") {
    Rng rng(4);
    std::vector<ShapMatrix> folds;
    std::vector<std::vector<std::uint8_t>> buyers;
    for (int f = 0; f < 10; ++f) {
      folds.push_back(shap_block(rng, 40, 3, f));
      std::vector<std::uint8_t> b(40, 0);
      for (std::size_t i = 0; i < 25; ++i) b[i] = 1;
      buyers.push_back(b);
    }
    for (std::size_t r = 0; r < 40; ++r) folds[6].values(r, 1) += 10 * 0.02;
    const std::vector<std::string> order = {"f1", "f0", "f2"};
    const auto rep = fold_robustness(folds, buyers, {}, order);
    CHECK(rep.features[0].feature == "f1");
    CHECK(rep.features[0].rank == 1);
    CHECK(rep.features[0].tag == RobustnessTag::NotRobust);
    CHECK(rep.buyer_count == std::vector<std::size_t>(10, 25));
  }

  TEST_CASE("folds without buyers are dropped") {
    Rng rng(6);
    std::vector<ShapMatrix> folds;
    std::vector<std::vector<std::uint8_t>> buyers;
    for (int f = 0; f < 3; ++f) {
      folds.push_back(shap_block(rng, 10, 2, f));
      buyers.emplace_back(10, f == 1 ? 0 : 1);
    }
    const auto rep = fold_robustness(folds, buyers);
    CHECK(rep.dropped_folds == std::vector<int>{1});
    CHECK(rep.fold_ids == std::vector<int>{0, 2});
    CHECK_FALSE(rep.warnings.empty());
    buyers[2].assign(10, 0);
    CHECK_THROWS_AS(fold_robustness(folds, buyers), DataError);
  }

  TEST_CASE("report json round trip") {
    Rng rng(8);
    std::vector<ShapMatrix> folds;
    std::vector<std::vector<std::uint8_t>> buyers;
    for (int f = 0; f < 4; ++f) {
      folds.push_back(shap_block(rng, 12, 3, f));
      buyers.emplace_back(12, 1);
    }
    const auto rep = fold_robustness(folds, buyers);
    const auto back = RobustnessReport::from_json(rep.to_json());
    CHECK(back.to_csv() == rep.to_csv());
    CHECK(back.to_json() == rep.to_json());
  }
}

TEST_SUITE("next_year_validation") {
  TEST_CASE("p value formatting") {
    CHECK(format_p_value(0.0001) == "< .001");
    CHECK(format_p_value(0.128) == ".128");
    CHECK(format_p_value(0.2571) == ".257");
  }

  TEST_CASE("table row mirrors the published layout") {
    ValidationReport rep;
    ValidationRow r;
    r.rank = 1;
    r.variable = "Total.Revenue2017";
    r.test = ValidationTest::WelchT;
    r.df = 1527.7312;
    r.statistic = 10.9612;
    r.p = 1e-20;
    r.effect_size = 0.2701;
    rep.rows.push_back(r);
    ValidationRow c = r;
    c.rank = 5;
    c.variable = "Has.Phone";
    c.test = ValidationTest::ChiSquared;
    c.df = 1;
    c.statistic = 126.33;
    c.effect_size = 0.03;
    rep.rows.push_back(c);
    CHECK(rep.table_csv() ==
          "#,Variable,df,Statistic,p,Eff. Size\n"
          "1,Total.Revenue2017,1527.73,10.96,< .001,0.27\n"
          "5,Has.Phone,1,126.33,< .001,0.03\n");
  }

  TEST_CASE("hypotheses follow the SHAP direction") {
    std::vector<FeatureImportance> ranking(3);
    ranking[0] = {1, "a", 0, 0.3, 0.0, +1};
    ranking[1] = {2, "b", 1, 0.2, 0.0, -1};
    ranking[2] = {3, "c", 2, 0.1, 0.0, 0};
    const auto h = hypotheses_from_ranking(ranking, 10);
    REQUIRE(h.size() == 3);
    CHECK(h[0].direction == Direction::Greater);
    CHECK(h[1].direction == Direction::Less);
    CHECK(h[2].direction == Direction::TwoSided);
    CHECK(hypotheses_from_ranking(ranking, 2).size() == 2);
  }

  TEST_CASE("planted features confirmed on the following year") {
    GeneratorConfig cfg;
    cfg.n_customers = 6000;
    cfg.seed = 21;
    const Population pop = generate_population(cfg);
    const auto train = CrossSellCase::make(ContractType::Power, ContractType::TV, 2015);
    const CaseDataset d = assemble_case_dataset(pop.customers, train);
    std::vector<Hypothesis> hyps;
    std::size_t rank = 0;
    for (const auto& t : pop.truth.signal) {
      for (const auto& col : d.encoding.columns) {
        if (d.encoding.sources[col.source].column != t.column) continue;
        if (col.role == EncodedRole::MissingIndicator) continue;
        hyps.push_back({++rank, col.name, t.sign > 0 ? Direction::Greater : Direction::Less});
      }
    }
    REQUIRE(hyps.size() >= pop.truth.signal.size());
    const auto next = CrossSellCase::make(ContractType::Power, ContractType::TV, 2016);
    const auto rep = validate_next_year(hyps, d.encoding, pop.customers, next);
    for (const auto& r : rep.rows) {
      INFO(r.feature, " ", r.variable, " p=", r.p);
      CHECK(r.note.empty());
      CHECK(r.direction_matches);
    }
    // Bonferroni never increases the number of confirmations.
    ValidationOptions bo;
    bo.bonferroni = true;
    const auto rb = validate_next_year(hyps, d.encoding, pop.customers, next, bo);
    CHECK(rb.confirmed_count() <= rep.confirmed_count());
    for (std::size_t i = 0; i < rb.rows.size(); ++i)
      CHECK(rb.rows[i].p_adjusted == doctest::Approx(std::min(1.0, rep.rows[i].p * hyps.size())));
    const auto back = ValidationReport::from_json(rep.to_json());
    CHECK(back.to_csv() == rep.to_csv());

    std::vector<Hypothesis> unknown = {{1, "No.SuchFeature2015", Direction::Greater}};
    CHECK_THROWS_AS(validate_next_year(unknown, d.encoding, pop.customers, next), DataError);
  }
}
