#include <cmath>

#include <gtest/gtest.h>

#include "cltmle/analysis.hpp"
#include "cltmle/error.hpp"
#include "cltmle/estimators.hpp"
#include "cltmle/inference.hpp"
#include "oracles.hpp"
#include "unit/fixtures.hpp"

using namespace cltmle;
using cltmle::testing::make_record;
using cltmle::testing::random_dataset;

namespace {

EstimatorOptions saturated_options() {
  EstimatorOptions opt;
  opt.q_learner = LearnerSpec::saturated_logistic(0.0);
  opt.l_learner = LearnerSpec::saturated_logistic(0.0);
  opt.g_learner = LearnerSpec::saturated_logistic(0.0);
  return opt;
}

// Propensity fits with hand-set cumulative probabilities.
PropensityFits fixed_gbar(const Regimen& reg, Eigen::MatrixXd gbar) {
  PropensityFits p;
  p.regimen = reg;
  p.gbar_raw = gbar;
  p.gbar = std::move(gbar);
  return p;
}

}  // namespace

TEST(CumulativePropensity, ProductOfFactors) {
  // C_1 factor 0.9; A_1 factor 0.8 and C_2 factor 0.95 at the second visit.
  Eigen::MatrixXd treat(1, 1), cens(1, 2);
  treat << 0.8;
  cens << 0.9, 0.95;
  const auto g = cumulative_propensity(treat, cens);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.9);
  EXPECT_NEAR(g(0, 1), 0.684, 1e-15);
}

TEST(FitPropensity, StoppedTreatmentFactorIsExactlyOne) {
  const Dataset d = random_dataset(600, 5, 6, 21);
  const Regimen reg({1, 0, 0, 0});
  const auto p = fit_propensity(d, reg, LearnerSpec::logistic());
  ASSERT_EQ(p.treatment.size(), 4U);
  for (std::size_t t = 2; t < 4; ++t) {
    EXPECT_FALSE(p.treatment[t].model.has_value());
    EXPECT_EQ(p.treatment[t].constant, 1.0);
  }
  // ḡ is nonincreasing in t for every subject.
  for (Eigen::Index t = 1; t < p.gbar_raw.cols(); ++t) {
    EXPECT_TRUE((p.gbar_raw.col(t).array() <= p.gbar_raw.col(t - 1).array() + 1e-15).all());
  }
}

TEST(FitPropensity, RandomizedUncensoredTreatment) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.5);
  std::vector<LongitudinalRecord> recs;
  for (int i = 0; i < 4000; ++i) {
    const Indicator a1 = coin(rng) ? 1 : 0;
    const Indicator a2 = a1 == 1 && coin(rng) ? 1 : 0;
    recs.push_back(make_record("s" + std::to_string(i), "c" + std::to_string(i % 20),
                               {static_cast<double>(coin(rng))}, {0, 0, 0}, {coin(rng) ? Indicator{1} : Indicator{0}, 0},
                               {a1, a2}, 1));
  }
  const Dataset d(std::move(recs), 3);
  const auto p = fit_propensity(d, Regimen({0, 0}), LearnerSpec::logistic());
  EXPECT_NEAR(p.gbar.col(2).mean(), 0.5, 0.03);
  EXPECT_NEAR(p.gbar.col(2).minCoeff(), 0.5, 0.06);
  EXPECT_NEAR(p.gbar.col(2).maxCoeff(), 0.5, 0.06);
}

TEST(FitPropensity, TruncationCountsFollowers) {
  const Dataset d = random_dataset(400, 4, 4, 8);
  const auto p = fit_propensity(d, Regimen({1, 1, 1}), LearnerSpec::logistic(), 0.3);
  EXPECT_GE(p.gbar.minCoeff(), 0.3);
  int expected = 0;
  for (int t = 1; t <= d.k(); ++t) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (p.gbar_raw(static_cast<Eigen::Index>(i), t - 1) < 0.3 && follows_regimen(d, i, p.regimen, t)) ++expected;
    }
  }
  EXPECT_EQ(p.truncated, expected);
  EXPECT_GT(expected, 0);
}

TEST(Iptw, HandEvaluatedWeightedMean) {
  std::vector<LongitudinalRecord> recs{
      make_record("a", "x", {0.0}, {0, 0}, {0}, {1}, 1),
      make_record("b", "y", {0.0}, {0, 0}, {0}, {1}, 2),
      make_record("c", "y", {0.0}, {0, 0}, {0}, {0}, 5),
  };
  const Dataset d(std::move(recs), 2);
  Eigen::MatrixXd g(3, 2);
  g << 1.0, 0.5, 1.0, 0.25, 1.0, 0.5;
  const auto r = iptw(d, Regimen({1}), fixed_gbar(Regimen({1}), g));
  EXPECT_NEAR(r.psi_hat, 5.0 / 3.0, 1e-14);
}

TEST(Iptw, EqualWeightsGiveFollowerMeanAndStabilizationCancels) {
  const Dataset d = random_dataset(300, 3, 5, 2);
  const Regimen reg({1, 1});
  Eigen::MatrixXd g = Eigen::MatrixXd::Constant(300, 3, 0.4);
  const auto r = iptw(d, reg, fixed_gbar(reg, g));
  double sum = 0.0;
  int cnt = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (follows_regimen(d, i, reg, 3)) {
      sum += d.y(i);
      ++cnt;
    }
  }
  EXPECT_NEAR(r.psi_hat, sum / cnt, 1e-12);
  // Rescaling every ḡ leaves the point estimate unchanged.
  const auto r2 = iptw(d, reg, fixed_gbar(reg, g * 0.5));
  EXPECT_NEAR(r2.psi_hat, r.psi_hat, 1e-12);
}

TEST(CleverCovariate, ReciprocalForFollowersZeroOtherwise) {
  std::vector<LongitudinalRecord> recs{
      make_record("a", "x", {0.0}, {0, 0}, {0}, {1}, 1),
      make_record("b", "x", {0.0}, {0, 0}, {0}, {0}, 1),
  };
  const Dataset d(std::move(recs), 2);
  Eigen::MatrixXd g(2, 2);
  g << 0.5, 0.25, 0.5, 0.25;
  const auto h = clever_covariate(fixed_gbar(Regimen({1}), g), d, Regimen({1}), 2);
  EXPECT_EQ(h(0), 4.0);
  EXPECT_EQ(h(1), 0.0);
}

TEST(CleverCovariate, AveragesToOneUnderCorrectPropensity) {
  const Dataset d = random_dataset(20000, 3, 10, 31);
  const Regimen reg({1, 1});
  const auto p = fit_propensity(d, reg, LearnerSpec::saturated_logistic(0.0), 0.0);
  EXPECT_NEAR(clever_covariate(p, d, reg, 3).mean(), 1.0, 0.03);
}

TEST(Fluctuate, ClosedFormScoreRoot) {
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(10, 0.5);
  const Eigen::VectorXd target = Eigen::VectorXd::Constant(10, 0.75);
  const Eigen::VectorXd g = Eigen::VectorXd::Constant(10, 2.0);
  const auto f = fluctuate(q, target, g);
  EXPECT_NEAR(f.epsilon, logit(0.75) / 2.0, 1e-10);
  EXPECT_NEAR(f.epsilon, 0.5493, 1e-4);
  EXPECT_NEAR(f.updated(3), 0.75, 1e-10);
}

TEST(Fluctuate, TargetEqualToInitialGivesZero) {
  Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(8, 0.1, 0.9);
  Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(8, 1.0, 3.0);
  const auto f = fluctuate(q, q, g);
  EXPECT_NEAR(f.epsilon, 0.0, 1e-14);
  EXPECT_LT((f.updated - q).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Fluctuate, ZeroCovariateRowsUnchanged) {
  Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(6, 0.2, 0.7);
  Eigen::VectorXd target = Eigen::VectorXd::Constant(6, 0.9);
  Eigen::VectorXd g(6);
  g << 2, 0, 3, 0, 1.5, 0;
  const auto f = fluctuate(q, target, g);
  EXPECT_NE(f.epsilon, 0.0);
  for (int i : {1, 3, 5}) EXPECT_EQ(f.updated(i), q(i));
  EXPECT_LT(std::abs(f.score), 1e-10);
}

TEST(GcompSequential, ConstantOutcome) {
  std::vector<LongitudinalRecord> recs;
  const Dataset base = random_dataset(200, 3, 4, 1);
  for (auto r : base.records()) {
    if (r.c.back() == 0) r.y = 1;
    recs.push_back(r);
  }
  // One uncensored subject off both regimens sets the scale to [0, 2].
  recs[0].c = {0, 0, 0};
  recs[0].a = {1, 0};
  recs[0].y = 2;
  const Dataset d(std::move(recs), 3);
  for (const Regimen& reg : {Regimen({1, 1}), Regimen({0, 0})}) {
    EXPECT_NEAR(gcomp_sequential(d, reg).psi_hat, 1.0, 1e-10);
  }
}

TEST(GcompSequential, IteratedExpectationWithIntercept) {
  const Dataset d = random_dataset(500, 4, 5, 12);
  const Regimen reg({1, 1, 0});
  SequentialFits fits;
  EstimatorOptions opt;
  opt.q_learner = LearnerSpec::logistic(0.0);
  gcomp_sequential(d, reg, opt, &fits);
  for (int t = 1; t <= d.k(); ++t) {
    double a = 0.0, b = 0.0;
    int cnt = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!follows_regimen(d, i, reg, t)) continue;
      a += fits.qbar(static_cast<Eigen::Index>(i), t - 1);
      b += fits.qbar(static_cast<Eigen::Index>(i), t);
      ++cnt;
    }
    EXPECT_NEAR(a / cnt, b / cnt, 1e-8) << "visit " << t;
  }
}

TEST(GcompSequential, PooledEqualsSubsetWhenSaturated) {
  const Dataset d = random_dataset(800, 2, 4, 14, true);
  EstimatorOptions opt = saturated_options();
  for (const Regimen& reg : {Regimen({1}), Regimen({0})}) {
    const double subset = gcomp_sequential(d, reg, opt).psi_hat;
    opt.conditioning = Conditioning::pooled;
    const double pooled = gcomp_sequential(d, reg, opt).psi_hat;
    opt.conditioning = Conditioning::subset;
    EXPECT_NEAR(subset, pooled, 1e-10);
  }
}

TEST(SaturatedModels, AllEstimatorsEqualPlugin) {
  const Dataset d = random_dataset(500, 2, 5, 77, true);
  const EstimatorOptions opt = saturated_options();
  for (const Regimen& reg : {Regimen({1}), Regimen({0})}) {
    const double truth = oracle::plugin_k2(d, reg);
    EXPECT_NEAR(gcomp_likelihood(d, reg, opt).psi_hat, truth, 1e-10);
    EXPECT_NEAR(gcomp_sequential(d, reg, opt).psi_hat, truth, 1e-10);
    const auto prop = fit_propensity(d, reg, opt.g_learner);
    EXPECT_NEAR(tmle(d, reg, prop, make_scaler(d), opt).report.psi_hat, truth, 1e-10);
  }
}

TEST(Tmle, InfluenceCurveHasZeroMean) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Dataset d = random_dataset(200, 3, 8, seed);
    const Regimen reg({1, 1});
    const auto prop = fit_propensity(d, reg, LearnerSpec::logistic());
    const OutcomeScaler scaler = make_scaler(d);
    const auto res = tmle(d, reg, prop, scaler);
    const auto ic = efficient_influence_curve(d, res.fits, prop, reg, res.report.psi_hat, scaler);
    for (Eigen::Index t = 0; t < ic.d_components.cols(); ++t) {
      EXPECT_LT(std::abs(ic.d_components.col(t).mean()), 1e-8) << "seed " << seed << " D_" << t;
    }
    EXPECT_LT(std::abs(ic.d_total.mean()), 1e-8);
    EXPECT_TRUE(ic.d_total.isApprox(res.report.ic));
  }
}

TEST(Tmle, EstimatesStayInOutcomeRange) {
  const Dataset d = random_dataset(150, 4, 3, 4);
  const Regimen reg({1, 1, 1});
  const auto prop = fit_propensity(d, reg, LearnerSpec::logistic(), 0.0);
  const OutcomeScaler scaler = make_scaler(d);
  const double psi = tmle(d, reg, prop, scaler).report.psi_hat;
  EXPECT_GE(psi, scaler.lo());
  EXPECT_LE(psi, scaler.hi());
}

TEST(InfluenceCurve, NonFollowersOnlyHaveBaselineComponent) {
  const Dataset d = random_dataset(300, 3, 5, 40);
  const Regimen reg({1, 1});
  const auto prop = fit_propensity(d, reg, LearnerSpec::logistic());
  const OutcomeScaler scaler = make_scaler(d);
  const auto res = tmle(d, reg, prop, scaler);
  const auto ic = efficient_influence_curve(d, res.fits, prop, reg, res.report.psi_hat, scaler);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (follows_regimen(d, i, reg, 1)) continue;
    for (Eigen::Index t = 1; t < ic.d_components.cols(); ++t) {
      EXPECT_EQ(ic.d_components(static_cast<Eigen::Index>(i), t), 0.0);
    }
  }
}

TEST(Contrast, SelfContrastIsZero) {
  const Dataset d = random_dataset(200, 3, 5, 3);
  const Regimen reg({1, 1});
  const auto prop = fit_propensity(d, reg, LearnerSpec::logistic());
  const auto r = tmle(d, reg, prop, make_scaler(d)).report;
  const auto c = contrast(d, r, r);
  EXPECT_EQ(c.psi_hat, 0.0);
  EXPECT_EQ(c.se, 0.0);
}

TEST(Contrast, MismatchedDatasetsRejected) {
  const Dataset d1 = random_dataset(200, 3, 5, 3);
  const Dataset d2 = random_dataset(201, 3, 5, 3);
  const Regimen reg({1, 1});
  const auto r1 = iptw(d1, reg, fit_propensity(d1, reg, LearnerSpec::logistic()));
  const auto r2 = iptw(d2, reg, fit_propensity(d2, reg, LearnerSpec::logistic()));
  EXPECT_THROW(contrast(d1, r1, r2), ArgumentError);
}

TEST(Estimators, NullOutcomeGivesSameMeanForEveryRegimen) {
  // Y independent of everything: all methods estimate its mean.
  std::mt19937_64 rng(9);
  std::bernoulli_distribution yb(0.35);
  std::vector<LongitudinalRecord> recs;
  const Dataset base = random_dataset(6000, 3, 20, 19);
  for (auto r : base.records()) {
    if (r.c.back() == 0) r.y = yb(rng) ? 1 : 0;
    recs.push_back(r);
  }
  const Dataset d(std::move(recs), 3);
  AnalysisOptions ao;
  ao.bootstrap = 0;
  for (const char* label : {"gcomp", "gcomp-seq", "iptw", "tmle"}) {
    for (const Regimen& reg : {Regimen({1, 1}), Regimen({0, 0})}) {
      EXPECT_NEAR(analyze(d, method_spec(label), reg, ao).psi_hat, 0.35, 0.04) << label << reg.to_string();
    }
  }
}

TEST(Estimators, RegimenLengthChecked) {
  const Dataset d = random_dataset(100, 3, 5, 3);
  EXPECT_THROW(gcomp_sequential(d, Regimen({1})), ArgumentError);
}
