#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cltmle/error.hpp"
#include "cltmle/inference.hpp"
#include "cltmle/parallel.hpp"
#include "oracles.hpp"
#include "unit/fixtures.hpp"

using namespace cltmle;

TEST(ClusteredSandwich, TwoClusterWorkedExample) {
  Eigen::VectorXd ic(4);
  ic << 1, -1, 2, 0;
  const std::vector<int> cl{0, 0, 1, 1};
  const auto v = clustered_sandwich(ic, cl);
  EXPECT_EQ(v.rho, (std::vector<double>{-1.0, 0.0}));
  EXPECT_EQ(v.sigma2_m, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(v.sigma2, 0.25);
  EXPECT_FALSE(v.floored);
}

TEST(ClusteredSandwich, MatchesDoubleLoopOnRandomFixtures) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_int_distribution<int> nclust(1, 12);
  for (int rep = 0; rep < 100; ++rep) {
    const int m = nclust(rng);
    std::uniform_int_distribution<int> pick(0, m - 1);
    const int n = 5 + rep;
    Eigen::VectorXd ic(n);
    std::vector<int> cl(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      // Shared cluster shift makes positive within-cluster correlation likely.
      cl[static_cast<std::size_t>(i)] = pick(rng);
      ic(i) = norm(rng) + 0.5 * cl[static_cast<std::size_t>(i)];
    }
    const auto v = clustered_sandwich(ic, cl);
    const double ref = oracle::sandwich_double_loop(ic, cl);
    if (v.floored) continue;
    EXPECT_NEAR(v.sigma2, ref, 1e-12 * std::max(1.0, std::abs(ref))) << "fixture " << rep;
  }
}

TEST(ClusteredSandwich, SingletonClustersReduceToSumOfSquares) {
  Eigen::VectorXd ic = Eigen::VectorXd::LinSpaced(9, -2.0, 3.0);
  std::vector<int> cl(9);
  for (int i = 0; i < 9; ++i) cl[static_cast<std::size_t>(i)] = i;
  EXPECT_NEAR(clustered_sandwich(ic, cl).sigma2, ic.squaredNorm() / 81.0, 1e-15);
}

TEST(ClusteredSandwich, IndependentWithinClustersMatchesUnclustered) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> norm(0.0, 1.0);
  const int n = 31 * 200;
  double ratio_sum = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd ic(n);
    std::vector<int> cl(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      ic(i) = norm(rng);
      cl[static_cast<std::size_t>(i)] = i % 31;
    }
    ratio_sum += clustered_sandwich(ic, cl).se() / std::sqrt(ic.squaredNorm() / (double(n) * n));
  }
  EXPECT_NEAR(ratio_sum / 50.0, 1.0, 0.05);
}

TEST(ClusteredSandwich, NegativeVarianceIsFloored) {
  Eigen::VectorXd ic(4);
  ic << 1, -1, 1, -1;
  const std::vector<int> cl{0, 0, 1, 1};
  const auto v = clustered_sandwich(ic, cl);
  EXPECT_TRUE(v.floored);
  EXPECT_GT(v.sigma2, 0.0);
  EXPECT_NEAR(v.sigma2, 4.0 / 16.0 * 1e-6, 1e-20);
}

TEST(WaldCi, TableRows) {
  auto [lo, hi] = wald_ci(-0.048, 0.018);
  EXPECT_NEAR(lo, -0.083, 5e-4);
  EXPECT_NEAR(hi, -0.013, 5e-4);
  EXPECT_EQ(std::round(lo * 1000), -83);
  EXPECT_EQ(std::round(hi * 1000), -13);
  std::tie(lo, hi) = wald_ci(-0.063, 0.013);
  EXPECT_EQ(std::round(lo * 1000), -88);
  EXPECT_EQ(std::round(hi * 1000), -38);
  std::tie(lo, hi) = wald_ci(0.7, 0.0);
  EXPECT_EQ(lo, 0.7);
  EXPECT_EQ(hi, 0.7);
}

TEST(Quantile, Type7Interpolation) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(quantile_type7(x, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_type7(x, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(quantile_type7(x, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile_type7(x, 0.1), 1.4);
  const std::vector<double> y{10, 20};
  EXPECT_DOUBLE_EQ(quantile_type7(y, 0.025), 10.25);
}

TEST(Bootstrap, ConstantEstimatorHasZeroSpread) {
  const Dataset d = cltmle::testing::random_dataset(60, 2, 6, 1);
  const auto r = pairs_cluster_bootstrap(d, [](const Dataset&) { return 3.0; }, 20, 1);
  EXPECT_EQ(r.replicates.size(), 20U);
  EXPECT_EQ(r.se, 0.0);
  EXPECT_EQ(r.ci_lo, 3.0);
  EXPECT_EQ(r.ci_hi, 3.0);
}

TEST(Bootstrap, ResampleKeepsClusterCountAndWholeClusters) {
  const Dataset d = cltmle::testing::random_dataset(90, 3, 9, 2);
  const Dataset r = resample_clusters(d, 5);
  EXPECT_EQ(r.cluster_count(), d.cluster_count());
  for (const auto& [id, members] : r.cluster_index()) EXPECT_EQ(members.size(), 10U);
}

TEST(Bootstrap, SameSeedIdenticalAcrossWorkerCounts) {
  const Dataset d = cltmle::testing::random_dataset(120, 3, 12, 3);
  auto mean_y = [](const Dataset& s) {
    double t = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) t += s.y(i);
    return t / static_cast<double>(s.size());
  };
  const auto a = pairs_cluster_bootstrap(d, mean_y, 40, 77, 1);
  const auto b = pairs_cluster_bootstrap(d, mean_y, 40, 77, 4);
  const auto c = pairs_cluster_bootstrap(d, mean_y, 40, 78, 1);
  EXPECT_EQ(a.replicates, b.replicates);
  EXPECT_NE(a.replicates, c.replicates);
}

TEST(Bootstrap, FailuresSkippedUntilTenPercent) {
  const Dataset d = cltmle::testing::random_dataset(60, 2, 6, 1);
  int calls = 0;
  auto flaky = [&](const Dataset&) -> double {
    if (calls++ % 10 == 0) throw EstimationError("boom");
    return 1.0;
  };
  const auto r = pairs_cluster_bootstrap(d, flaky, 20, 1, 1);
  EXPECT_EQ(r.failures, 2);
  EXPECT_EQ(r.replicates.size(), 18U);
  calls = 0;
  auto worse = [&](const Dataset&) -> double {
    if (calls++ % 4 == 0) throw EstimationError("boom");
    return 1.0;
  };
  EXPECT_THROW(pairs_cluster_bootstrap(d, worse, 20, 1, 1), BootstrapError);
}

TEST(Parallel, DerivedSeedsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  std::vector<int> out(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
  for (int i = 0; i < 100; ++i) EXPECT_EQ(out[static_cast<std::size_t>(i)], 2 * i);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw std::runtime_error("x"); }),
               std::runtime_error);
}
