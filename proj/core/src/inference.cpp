#include "cltmle/inference.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cltmle/error.hpp"
#include "cltmle/parallel.hpp"

namespace cltmle {

InfluenceCurveValues efficient_influence_curve(const Dataset& d, const SequentialFits& seq,
                                               const PropensityFits& prop, const Regimen& reg,
                                               double psi_hat, const OutcomeScaler& scaler) {
  if (!seq.targeted()) throw ArgumentError("influence curve needs targeted (fluctuated) fits");
  const int k = d.k();
  const auto n = static_cast<Eigen::Index>(d.size());
  if (seq.qbar_star.rows() != n || seq.qbar_star.cols() != k + 1) {
    throw ArgumentError("influence curve: fits do not match the dataset");
  }
  InfluenceCurveValues out;
  out.d_components.resize(n, k + 1);
  out.d_components.col(0) = seq.qbar_star.col(0).array() - scaler.scale(psi_hat);
  for (int t = 1; t <= k; ++t) {
    const Eigen::VectorXd g = clever_covariate(prop, d, reg, t);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.d_components(i, t) = g(i) == 0.0 ? 0.0 : g(i) * (seq.qbar_star(i, t) - seq.qbar_star(i, t - 1));
    }
  }
  out.d_components *= scaler.range();
  out.d_total = out.d_components.rowwise().sum();
  return out;
}

ClusterVariance clustered_sandwich(const Eigen::VectorXd& ic, std::span<const int> cluster_of) {
  const auto n = ic.size();
  if (static_cast<Eigen::Index>(cluster_of.size()) != n) {
    throw ArgumentError("clustered_sandwich: every subject needs a cluster");
  }
  if (n == 0) throw ArgumentError("clustered_sandwich: empty influence curve");
  const int m = *std::max_element(cluster_of.begin(), cluster_of.end()) + 1;
  std::vector<double> sum(static_cast<std::size_t>(m), 0.0), sumsq(static_cast<std::size_t>(m), 0.0);
  ClusterVariance out;
  out.sizes.assign(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = cluster_of[static_cast<std::size_t>(i)];
    if (c < 0) throw ArgumentError("clustered_sandwich: negative cluster number");
    const auto cu = static_cast<std::size_t>(c);
    sum[cu] += ic(i);
    sumsq[cu] += ic(i) * ic(i);
    ++out.sizes[cu];
  }
  double total = 0.0, diag = 0.0;
  out.rho.assign(static_cast<std::size_t>(m), 0.0);
  out.sigma2_m.assign(static_cast<std::size_t>(m), 0.0);
  for (std::size_t c = 0; c < static_cast<std::size_t>(m); ++c) {
    const double nm = out.sizes[c];
    if (nm == 0) continue;
    out.sigma2_m[c] = sumsq[c] / nm;
    if (nm > 1) out.rho[c] = (sum[c] * sum[c] - sumsq[c]) / (nm * (nm - 1.0));
    total += nm * (nm - 1.0) * out.rho[c] + nm * out.sigma2_m[c];
    diag += nm * out.sigma2_m[c];
  }
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  out.sigma2 = total / nn;
  const double floor = diag / nn * 1e-6;
  if (out.sigma2 < floor) {
    out.sigma2 = floor;
    out.floored = true;
  }
  return out;
}

ClusterVariance clustered_sandwich(const Eigen::VectorXd& ic, const Dataset::ClusterIndex& clusters) {
  std::vector<int> of(static_cast<std::size_t>(ic.size()), -1);
  int c = 0;
  for (const auto& [id, members] : clusters) {
    for (auto i : members) {
      if (i >= of.size()) throw ArgumentError("clustered_sandwich: member index out of range");
      of[i] = c;
    }
    ++c;
  }
  if (std::find(of.begin(), of.end(), -1) != of.end()) {
    throw ArgumentError("clustered_sandwich: every subject needs a cluster");
  }
  return clustered_sandwich(ic, of);
}

std::pair<double, double> wald_ci(double psi_hat, double se) {
  if (se < 0) throw ArgumentError("wald_ci: negative standard error");
  return {psi_hat - kWaldZ * se, psi_hat + kWaldZ * se};
}

double quantile_type7(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ArgumentError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("quantile level must lie in [0,1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

Dataset resample_clusters(const Dataset& d, std::uint64_t seed) {
  const auto& index = d.cluster_index();
  std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> clusters;
  clusters.reserve(index.size());
  for (const auto& entry : index) clusters.push_back(&entry);
  const auto m = clusters.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  std::vector<LongitudinalRecord> records;
  records.reserve(d.size());
  for (std::size_t j = 0; j < m; ++j) {
    const auto* c = clusters[pick(rng)];
    const std::string tag = "#" + std::to_string(j);
    for (auto i : c->second) {
      LongitudinalRecord r = d.record(i);
      r.subject_id += tag;
      r.cluster_id += tag;
      records.push_back(std::move(r));
    }
  }
  return Dataset(std::move(records), d.k());
}

BootstrapResult summarize_replicates(std::vector<double> replicates, int requested, int failures) {
  BootstrapResult out;
  out.requested = requested;
  out.failures = failures;
  out.replicates = std::move(replicates);
  const auto b = out.replicates.size();
  if (b == 0) throw BootstrapError("bootstrap produced no successful replicate");
  double mean = 0.0;
  for (double v : out.replicates) mean += v;
  mean /= static_cast<double>(b);
  double ss = 0.0;
  for (double v : out.replicates) ss += (v - mean) * (v - mean);
  out.se = b > 1 ? std::sqrt(ss / static_cast<double>(b - 1)) : 0.0;
  std::vector<double> sorted = out.replicates;
  std::sort(sorted.begin(), sorted.end());
  out.ci_lo = quantile_type7(sorted, 0.025);
  out.ci_hi = quantile_type7(sorted, 0.975);
  return out;
}

std::vector<BootstrapResult> pairs_cluster_bootstrap(const Dataset& d, const MultiEstimator& estimator,
                                                     int b, std::uint64_t seed, int workers) {
  if (b < 2) throw ArgumentError("bootstrap needs at least 2 replicates");
  if (d.cluster_count() == 0) throw ArgumentError("bootstrap needs at least one cluster");
  std::vector<std::vector<double>> results(static_cast<std::size_t>(b));
  std::vector<char> ok(static_cast<std::size_t>(b), 0);
  parallel_for(static_cast<std::size_t>(b), workers, [&](std::size_t r) {
    try {
      const Dataset rd = resample_clusters(d, derive_seed(seed, r));
      results[r] = estimator(rd);
      ok[r] = 1;
    } catch (const Error&) {
      ok[r] = 0;
    }
  });
  int failures = 0;
  std::size_t stats = 0;
  for (std::size_t r = 0; r < results.size(); ++r) {
    if (!ok[r]) {
      ++failures;
      continue;
    }
    if (stats == 0) stats = results[r].size();
    if (results[r].size() != stats) throw ArgumentError("bootstrap estimator returned a varying number of statistics");
  }
  if (failures * 10 > b) {
    throw BootstrapError(std::to_string(failures) + " of " + std::to_string(b) +
                         " bootstrap replicates failed (limit 10%)");
  }
  std::vector<BootstrapResult> out;
  for (std::size_t s = 0; s < stats; ++s) {
    std::vector<double> reps;
    for (std::size_t r = 0; r < results.size(); ++r) {
      if (ok[r]) reps.push_back(results[r][s]);
    }
    out.push_back(summarize_replicates(std::move(reps), b, failures));
  }
  return out;
}

BootstrapResult pairs_cluster_bootstrap(const Dataset& d,
                                        const std::function<double(const Dataset&)>& estimator,
                                        int b, std::uint64_t seed, int workers) {
  auto res = pairs_cluster_bootstrap(
      d, [&](const Dataset& x) { return std::vector<double>{estimator(x)}; }, b, seed, workers);
  return std::move(res.front());
}

}  // namespace cltmle
