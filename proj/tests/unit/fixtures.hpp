#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cltmle/data.hpp"

namespace cltmle::testing {

inline LongitudinalRecord make_record(std::string id, std::string cluster, std::vector<double> w,
                                      std::vector<Indicator> c, std::vector<Indicator> l,
                                      std::vector<Indicator> a, int y) {
  LongitudinalRecord r;
  r.subject_id = std::move(id);
  r.cluster_id = std::move(cluster);
  r.w = std::move(w);
  r.c = std::move(c);
  r.l = std::move(l);
  r.a = std::move(a);
  r.y = y;
  return r;
}

inline double inv_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Small random longitudinal data with one binary and one Gaussian baseline
// covariate, monotone treatment and censoring, and Y = number of L_t = 1 plus
// a final Bernoulli. Generated independently of the simulation module.
inline Dataset random_dataset(int n, int k, int clusters, std::uint64_t seed, bool binary_w_only = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  auto bern = [&](double p) { return unif(rng) < p ? Indicator{1} : Indicator{0}; };
  std::vector<LongitudinalRecord> recs;
  for (int i = 0; i < n; ++i) {
    const int m = i % clusters;
    std::vector<double> w{static_cast<double>(bern(0.4 + 0.2 * (m % 2)))};
    if (!binary_w_only) w.push_back(norm(rng) + 0.3 * m / clusters);
    std::vector<Indicator> c(static_cast<std::size_t>(k), 0), l(static_cast<std::size_t>(k - 1), 0),
        a(static_cast<std::size_t>(k - 1), 0);
    bool censored = false;
    Indicator prev_a = 1;
    Indicator prev_l = 0;
    int y = 0;
    for (int t = 1; t <= k; ++t) {
      const auto ti = static_cast<std::size_t>(t - 1);
      if (!censored) censored = bern(inv_logit(-2.5 + 0.5 * w[0] - 0.4 * prev_a + 0.6 * prev_l)) == 1;
      c[ti] = censored ? 1 : 0;
      if (t == k) break;
      if (censored) continue;
      l[ti] = bern(inv_logit(-1.0 + 0.8 * w[0] - 0.5 * prev_a));
      a[ti] = prev_a == 1 ? bern(inv_logit(1.0 - 0.3 * w[0] - 0.8 * l[ti])) : Indicator{0};
      prev_a = a[ti];
      prev_l = l[ti];
      y += l[ti];
    }
    if (!censored) y += bern(inv_logit(-1.0 + 0.5 * w[0] - 0.4 * prev_a + 0.5 * prev_l));
    else y = 0;
    recs.push_back(make_record("s" + std::to_string(i), "k" + std::to_string(m), std::move(w), std::move(c),
                               std::move(l), std::move(a), y));
  }
  return Dataset(std::move(recs), k);
}

}  // namespace cltmle::testing
