#include "hetsvm/simulation.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace hetsvm::sim {
namespace {

TEST(Seeds, DeterministicAndPathSensitive) {
  EXPECT_EQ(derive_seed(7, {3, 1, 250, 0}), derive_seed(7, {3, 1, 250, 0}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 100; ++r) seen.insert(derive_seed(7, {3, 1, 250, r}));
  seen.insert(derive_seed(8, {3, 1, 250, 0}));
  seen.insert(derive_seed(7, {4, 1, 250, 0}));
  seen.insert(derive_seed(7, {3, 2, 250, 0}));
  EXPECT_EQ(seen.size(), 103u);
}

TEST(ClampedMean, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 30.0);
  std::vector<double> v(2000);
  for (auto& x : v) x = normal(rng);
  const detail::ClampedMean cm(v);
  for (double a : {0.0, 0.001, 0.01, 0.05, 1.0}) {
    for (double shift : {-80.0, -10.0, 0.0, 3.5, 50.0, 200.0}) {
      double mean = 0.0, clamped = 0.0;
      for (double x : v) {
        const double lin = a * (x + shift);
        mean += std::clamp(lin, 0.0, 1.0);
        clamped += lin < 0.0 || lin > 1.0;
      }
      EXPECT_NEAR(cm.mean(a, shift), mean / 2000.0, 1e-12) << a << " " << shift;
      EXPECT_NEAR(cm.clamped(a, shift), clamped / 2000.0, 1e-12) << a << " " << shift;
    }
  }
}

TEST(Dgp, ZeroSlopeGivesZeroEffects) {
  Scenario s = make_scenario(ScenarioKind::kTwo, 3, 20'000);
  s.a = 0.0;
  std::mt19937_64 rng(1);
  const Matrix raw = draw_covariates(s, 50, rng);
  for (Index i = 0; i < 50; ++i) {
    const Vector x = dgp_units(s, raw.row(i).transpose());
    EXPECT_EQ(true_cate(s, x), 0.0);
    EXPECT_EQ(probability(s, covariate_part(s, x)), 0.0);
  }
}

TEST(ScenarioOne, DimensionsAndBalance) {
  const auto smp = gen_scenario_one(5000, false, 11, 50'000);
  const auto& d = smp.design;
  EXPECT_EQ(d.lz(), 49);
  EXPECT_EQ(d.lv(), 4);
  for (Index j = 0; j < d.lz(); ++j) EXPECT_EQ(d.z.col(j).sum(), 100.0);
  EXPECT_EQ(d.z.rowwise().sum().sum(), 4900.0);
  EXPECT_TRUE(d.diagnostics.empty());

  const auto odd = gen_scenario_one(260, false, 11, 50'000);
  EXPECT_FALSE(odd.design.diagnostics.empty());
  EXPECT_THROW(gen_scenario_one(40, false, 11, 50'000), ConfigError);
}

TEST(ScenarioOne, MisspecifiedSharesTheFittedDesign) {
  const auto s1 = make_scenario(ScenarioKind::kOneCorrect, 5, 100'000);
  const auto s2 = make_scenario(ScenarioKind::kOneMisspecified, 5, 100'000);
  EXPECT_EQ(s1.u, s2.u);
  EXPECT_EQ(s1.beta, s2.beta);
  EXPECT_EQ(s1.gamma, s2.gamma);
  const auto a = sample_scenario(s1, 500, 99);
  const auto b = sample_scenario(s2, 500, 99);
  EXPECT_EQ(a.design.z, b.design.z);
  EXPECT_EQ(a.design.v, b.design.v);
  EXPECT_NE(a.design.y_star, b.design.y_star);
}

TEST(ScenarioOne, DeterministicGivenSeed) {
  const auto a = make_scenario(ScenarioKind::kOneCorrect, 21, 100'000);
  const auto b = make_scenario(ScenarioKind::kOneCorrect, 21, 100'000);
  EXPECT_EQ(a.a, b.a);
  EXPECT_EQ(a.b, b.b);
  EXPECT_EQ(a.true_effects, b.true_effects);
  EXPECT_EQ(sample_scenario(a, 300, 4).design.y_star, sample_scenario(b, 300, 4).design.y_star);
  const auto c = make_scenario(ScenarioKind::kOneCorrect, 22, 100'000);
  EXPECT_NE(a.beta, c.beta);
}

TEST(Covariates, SampleCovarianceConverges) {
  const auto s = make_scenario(ScenarioKind::kOneCorrect, 2, 10'000);
  std::mt19937_64 rng(8);
  const Matrix x = draw_covariates(s, 400'000, rng);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
  const Matrix expected = s.u.transpose() * s.u;
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      EXPECT_NEAR(cov(i, j), expected(i, j), 0.02 * expected.diagonal().maxCoeff()) << i << "," << j;
    }
  }
}

TEST(ScenarioTwo, DimensionsAndBinaryColumns) {
  const auto smp = gen_scenario_two(400, 6, 50'000);
  EXPECT_EQ(smp.design.lz(), 21);
  EXPECT_EQ(smp.design.lv(), 20);
  EXPECT_EQ(smp.covariates.cols(), 20);
  for (Index j = 15; j < 20; ++j) {
    for (Index i = 0; i < smp.covariates.rows(); ++i) {
      const double x = smp.covariates(i, j);
      EXPECT_TRUE(x == 0.0 || x == 1.0);
    }
  }
  EXPECT_EQ(smp.design.z.col(0).sum(), 200.0);
  EXPECT_EQ(smp.true_cate.size(), 400);
  EXPECT_THROW(gen_scenario_two(40, 6), ConfigError);
}

// Calibration is checked on an independent covariate sample.
TEST(Calibration, ScenarioOneLeadingEffect) {
  const auto s = make_scenario(ScenarioKind::kOneCorrect, 1);
  std::mt19937_64 rng(123456);
  const Matrix raw = draw_covariates(s, 1'000'000, rng);
  double lead = 0.0, mean_p = 0.0;
  for (Index i = 0; i < raw.rows(); ++i) {
    const double c = covariate_part(s, dgp_units(s, raw.row(i).transpose()));
    lead += probability(s, c + s.beta[0]) - probability(s, c);
    mean_p += probability(s, c);
  }
  lead /= static_cast<double>(raw.rows());
  EXPECT_NEAR(lead, 0.07, 0.005);
  EXPECT_NEAR(s.true_effects[0], 0.07, 0.005);
  EXPECT_LT(s.clamp_fraction, 0.05);
}

TEST(Calibration, ScenarioTwoProfilesAndTreatEveryone) {
  const auto s = make_scenario(ScenarioKind::kTwo, 1);
  std::mt19937_64 rng(654321);
  const Matrix raw = draw_covariates(s, 1'000'000, rng);
  double mean_c = 0.0, helped = 0.0, harmed = 0.0;
  for (Index i = 0; i < raw.rows(); ++i) {
    const Vector x = dgp_units(s, raw.row(i).transpose());
    mean_c += covariate_part(s, x);
    const double tau = true_cate(s, x);
    helped += tau > 0;
    harmed += tau < 0;
  }
  mean_c /= static_cast<double>(raw.rows());
  // +1 sd on one designated covariate, everything else at its mean.
  auto profile = [&](Index j) {
    const double base = mean_c + s.beta[0];
    return std::abs(probability(s, base + s.beta[1 + j]) - probability(s, base));
  };
  EXPECT_NEAR(profile(2), 0.04, 0.005);
  EXPECT_NEAR(profile(0), 0.017, 0.005);
  EXPECT_NEAR(100.0 * (helped - harmed) / helped, -116.0, 3.0);
  EXPECT_LT(s.true_effects[0], 0.0);
  EXPECT_LT(s.clamp_fraction, 0.05);
}

TEST(FdrDr, HandFixture) {
  Vector truth = Vector::Zero(49);
  truth[0] = 0.07;
  truth[1] = 0.03;
  truth[2] = -0.02;
  std::vector<Vector> est;
  for (int r = 0; r < 6; ++r) {
    Vector e = Vector::Zero(49);
    e[0] = 0.5;
    e[7] = 0.05 * r;
    est.push_back(e);
  }
  Vector wrong_sign = Vector::Zero(49);
  wrong_sign[0] = -0.2;
  est.push_back(wrong_sign);
  Vector beaten = Vector::Zero(49);
  beaten[0] = 0.3;
  beaten[9] = 0.4;
  est.push_back(beaten);
  est.push_back(Vector::Zero(49));
  est.push_back(Vector::Zero(49));

  const auto r = fdr_dr(est, truth, DiscoveryMode::kLargest);
  EXPECT_EQ(r.replicates, 10);
  EXPECT_EQ(r.with_nonzero, 8);
  EXPECT_DOUBLE_EQ(r.dr, 0.6);
  ASSERT_TRUE(r.fdr.has_value());
  EXPECT_DOUBLE_EQ(*r.fdr, 0.25);
}

TEST(FdrDr, EdgeCases) {
  Vector truth = Vector::Zero(49);
  truth[0] = 0.07;
  truth[1] = 0.03;
  truth[2] = -0.02;
  const auto none = fdr_dr({Vector::Zero(49), Vector::Zero(49)}, truth, DiscoveryMode::kLargest);
  EXPECT_FALSE(none.fdr.has_value());
  EXPECT_EQ(none.dr, 0.0);

  const auto exact = fdr_dr({truth, truth}, truth, DiscoveryMode::kTopK);
  EXPECT_EQ(exact.dr, 1.0);
  EXPECT_EQ(*exact.fdr, 0.0);

  Vector missing_third = truth;
  missing_third[2] = 0.0;
  EXPECT_FALSE(discovered(missing_third, truth, DiscoveryMode::kTopK));
  EXPECT_TRUE(discovered(missing_third, truth, DiscoveryMode::kLargest));
}

TEST(Payoff, HandFixture) {
  Vector truth(6);
  truth << 0.1, -0.2, 0.05, 0.0, -0.01, 0.3;
  Vector pred(6);
  pred << 0.2, 0.1, -0.1, 0.4, -0.3, 0.01;
  const auto r = evaluate_rules(pred, truth);
  // Oracle treats rows 0, 2, 5: 1.5. The rule treats 0, 1, 3, 5: 0.5 - 0.5 + 0 + 0.5.
  EXPECT_DOUBLE_EQ(r.oracle_payoff, 1.5);
  EXPECT_DOUBLE_EQ(r.svm_payoff, 0.5);
  EXPECT_DOUBLE_EQ(r.everyone_payoff, 0.5);
  EXPECT_NEAR(*r.svm_pct, 100.0 / 3.0, 1e-12);
  EXPECT_EQ(*r.nobody_pct, 0.0);

  const auto capped = evaluate_rules(pred, truth, Index{1});
  EXPECT_DOUBLE_EQ(capped.svm_payoff, 0.0);  // row 3 has the top score
  EXPECT_DOUBLE_EQ(capped.oracle_payoff, 0.5);
}

TEST(Payoff, OracleDominatesAndNormalizes) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 20; ++rep) {
    Vector truth(300), pred(300);
    for (Index i = 0; i < 300; ++i) {
      truth[i] = normal(rng);
      pred[i] = truth[i] + 2.0 * normal(rng);
    }
    const auto r = evaluate_rules(pred, truth);
    EXPECT_LE(*r.svm_pct, 100.0);
    EXPECT_LE(*r.everyone_pct, 100.0);
    EXPECT_EQ(*evaluate_rules(truth, truth).svm_pct, 100.0);
    const auto& c = r.oracle_curve;
    for (std::size_t q = 1; q < c.net.size(); ++q) {
      EXPECT_GE(c.benefit[q], c.benefit[q - 1]);
      EXPECT_GE(c.net[q], c.net[q - 1]);
    }
    EXPECT_NEAR(c.net.back(), 2.0 * r.oracle_payoff / 300.0, 1e-12);
  }
  const auto zero = evaluate_rules(Vector::Ones(3), Vector::Constant(3, -0.1));
  EXPECT_FALSE(zero.svm_pct.has_value());
}

TEST(MonteCarlo, IdenticalAcrossThreadCounts) {
  MonteCarloConfig cfg;
  cfg.scenarios = {ScenarioKind::kOneCorrect, ScenarioKind::kTwo};
  cfg.sizes = {250};
  cfg.replicates = 3;
  cfg.seed = 9;
  cfg.eval_n = 300;
  cfg.calibration_draws = 50'000;
  cfg.search.log_grid = {-6, -4, -2, 0, 2};
  cfg.search.precision = 0.5;
  const auto one = run_monte_carlo(cfg);
  cfg.jobs = 3;
  const auto three = run_monte_carlo(cfg);
  ASSERT_EQ(one.replicates.size(), 6u);
  EXPECT_EQ(one.failures, 0);
  for (std::size_t k = 0; k < one.replicates.size(); ++k) {
    EXPECT_EQ(one.replicates[k].gcv, three.replicates[k].gcv);
    EXPECT_EQ(one.replicates[k].log_lambda_z, three.replicates[k].log_lambda_z);
    EXPECT_EQ(one.replicates[k].estimates, three.replicates[k].estimates);
  }
  ASSERT_EQ(one.fdr.size(), 2u);
  ASSERT_EQ(one.payoff.size(), 4u);
  EXPECT_EQ(*one.payoff[1].pct, 100.0);
  EXPECT_EQ(*one.payoff[3].pct, 0.0);
  EXPECT_EQ(one.curves.size(), 2u * kCurvePoints);

  cfg.replicates = 0;
  EXPECT_THROW(run_monte_carlo(cfg), ConfigError);
}

}  // namespace
}  // namespace hetsvm::sim
