#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cltmle/data.hpp"
#include "cltmle/estimators.hpp"

namespace cltmle {

struct InfluenceCurveValues {
  Eigen::MatrixXd d_components;  // n x (K+1): D_0, D_1, ..., D_K
  Eigen::VectorXd d_total;       // row sums
};

// Components are evaluated on the [0,1] scale from the fluctuated fits and
// then multiplied by the scaler range. `psi_hat` is on the outcome scale.
InfluenceCurveValues efficient_influence_curve(const Dataset& d, const SequentialFits& seq,
                                               const PropensityFits& prop, const Regimen& reg,
                                               double psi_hat, const OutcomeScaler& scaler);

struct ClusterVariance {
  std::vector<int> sizes;        // n_m
  std::vector<double> rho;       // mean of D_i D_j over ordered pairs i != j (0 for singletons)
  std::vector<double> sigma2_m;  // mean of D_i^2
  double sigma2 = 0.0;
  bool floored = false;
  double se() const { return std::sqrt(sigma2); }
};

// sigma2 = (1/n^2) sum_m [n_m (n_m - 1) rho_m + n_m sigma2_m]; `cluster_of`
// holds a dense cluster number per subject.
ClusterVariance clustered_sandwich(const Eigen::VectorXd& ic, std::span<const int> cluster_of);
ClusterVariance clustered_sandwich(const Eigen::VectorXd& ic, const Dataset::ClusterIndex& clusters);

inline constexpr double kWaldZ = 1.96;

std::pair<double, double> wald_ci(double psi_hat, double se);

// Linear-interpolation sample quantile (R type 7); `sorted` ascending.
double quantile_type7(std::span<const double> sorted, double p);

// Draws M clusters with replacement (M = cluster count). Repeated draws get
// distinct cluster and subject ids.
Dataset resample_clusters(const Dataset& d, std::uint64_t seed);

struct BootstrapResult {
  std::vector<double> replicates;  // successful replicates, in replicate order
  int requested = 0;
  int failures = 0;
  double se = 0.0;  // sample standard deviation of the replicates
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

using MultiEstimator = std::function<std::vector<double>(const Dataset&)>;

// Each replicate r resamples clusters with seed derive_seed(seed, r) and re-runs
// `estimator` end to end. A replicate that throws is skipped; more than 10%
// failures raises BootstrapError. One result per statistic returned.
std::vector<BootstrapResult> pairs_cluster_bootstrap(const Dataset& d, const MultiEstimator& estimator,
                                                     int b, std::uint64_t seed, int workers = 1);

BootstrapResult pairs_cluster_bootstrap(const Dataset& d,
                                        const std::function<double(const Dataset&)>& estimator,
                                        int b, std::uint64_t seed, int workers = 1);

BootstrapResult summarize_replicates(std::vector<double> replicates, int requested, int failures);

}  // namespace cltmle
