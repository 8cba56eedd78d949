#pragma once

// Reference computations written directly from the estimand and variance
// definitions, kept free of library internals.

#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>

#include "cltmle/data.hpp"

namespace cltmle::oracle {

// Nonparametric plug-in of E(Y_a) for K = 2 with a single discrete baseline
// covariate, by exhaustive stratum averaging:
//   sum_w P(W=w) sum_l P(L_1=l | W=w, C_1=0) E(Y | W=w, L_1=l, A_1=a, C_1=C_2=0).
inline double plugin_k2(const Dataset& d, const Regimen& reg) {
  if (d.k() != 2 || d.baseline_dim() != 1) throw std::invalid_argument("plugin_k2: K=2, one W");
  const int a = reg.at(1);
  std::map<double, int> nw;
  std::map<std::pair<double, int>, int> nwl;       // uncensored at 1, by (w, l)
  std::map<double, int> nw1;                        // uncensored at 1, by w
  std::map<std::pair<double, int>, std::pair<double, int>> ywl;  // followers at 2: (sum y, count)
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double w = d.w()(static_cast<Eigen::Index>(i), 0);
    ++nw[w];
    if (d.c(i, 1) != 0) continue;
    const int l = d.l(i, 1);
    ++nw1[w];
    ++nwl[{w, l}];
    if (d.a(i, 1) == a && d.c(i, 2) == 0) {
      auto& cell = ywl[{w, l}];
      cell.first += d.y(i);
      cell.second += 1;
    }
  }
  double psi = 0.0;
  for (const auto& [w, count] : nw) {
    const double pw = static_cast<double>(count) / static_cast<double>(d.size());
    for (int l = 0; l <= 1; ++l) {
      auto it = nwl.find({w, l});
      if (it == nwl.end()) continue;
      const auto& cell = ywl.at({w, l});
      psi += pw * (static_cast<double>(it->second) / nw1.at(w)) * (cell.first / cell.second);
    }
  }
  return psi;
}

// (1/n^2) sum over clusters of sum_{i,j in cluster} D_i D_j, evaluated as the
// displayed pair formula: n_m (n_m - 1) rho_m + n_m sigma2_m with rho_m the
// average over ordered pairs i != j and sigma2_m the average of D_i^2.
inline double sandwich_double_loop(const Eigen::VectorXd& ic, std::span<const int> cluster_of) {
  std::map<int, std::vector<double>> groups;
  for (Eigen::Index i = 0; i < ic.size(); ++i) groups[cluster_of[static_cast<std::size_t>(i)]].push_back(ic(i));
  double total = 0.0;
  for (const auto& [m, v] : groups) {
    const double nm = static_cast<double>(v.size());
    double pairs = 0.0, squares = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      squares += v[i] * v[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (i != j) pairs += v[i] * v[j];
      }
    }
    const double rho = v.size() > 1 ? pairs / (nm * (nm - 1.0)) : 0.0;
    const double sigma2 = squares / nm;
    total += nm * (nm - 1.0) * rho + nm * sigma2;
  }
  const double n = static_cast<double>(ic.size());
  return total / (n * n);
}

}  // namespace cltmle::oracle
