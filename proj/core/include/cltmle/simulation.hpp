#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cltmle/analysis.hpp"
#include "cltmle/data.hpp"
#include "cltmle/kv_config.hpp"

namespace cltmle {

// Three-visit data-generating process with clustered baseline covariates.
//
//   W, U      Gaussian; each cluster has its own means for W and U
//   C_t       logit = c0 + cW W + cU U + cA A_{t-1} + cL L_{t-1}      (t = 1,2,3)
//   L_t       logit = l0 + lW W + lU U + lA (A_{t-1} + A_{t-2})       (t = 1,2,3)
//   A_t       logit = a0_t + aW W + aU U + aL L_t,  A_2 = 0 if A_1 = 0 (t = 1,2)
//   Y         L_1 + L_2 + L_3
//
// Terms referring to visits before the first are zero.
struct DgpConfig {
  int clusters = 31;
  int per_cluster = 500;
  double w_cluster_sd = 0.5;
  double w_within_sd = 2.0;
  double u_cluster_sd = 1.0;
  double u_within_sd = 0.3;

  double l_intercept = -2.2;
  double l_w = 1.2;
  double l_u = -0.4;
  double l_treatment = -0.101898193359375;  // calibrated: delta = -0.030

  double a_intercept_1 = 1.0;
  double a_intercept_2 = 0.5;
  double a_w = 0.6;
  double a_u = 0.5;
  double a_infection = -1.5;

  double c_intercept = -4.0;
  double c_w = 0.2;
  double c_u = -0.3;
  double c_treatment = -0.5;
  double c_infection = 1.0;

  // Throws ArgumentError on invalid sizes or violated sign constraints
  // (aL < 0, cA < 0, cL > 0, lA <= 0).
  void validate() const;

  KvConfig to_kv() const;
  // Keys absent from `kv` keep their defaults; unknown keys are rejected.
  static DgpConfig from_kv(const KvConfig& kv);
  static DgpConfig load(const std::filesystem::path& path);
};

// Baseline columns of generated data: W then U.
Dataset generate_dataset(const DgpConfig& cfg, std::uint64_t seed);

enum class Scenario { unmeasured, cluster_adjusted, fully_adjusted, transformed };

std::string to_string(Scenario s);
Scenario parse_scenario(std::string_view name);
std::vector<Scenario> all_scenarios();

// Replaces the (W, U) baseline columns of generated data with the covariates
// the scenario's analyst sees: {W}; {W, cluster indicators}; {W, U}; {w*, u*}.
Dataset apply_scenario(const Dataset& full, Scenario s);

// (exp(w/2), u / (1 + exp(w)) + 10), with exp arguments clipped to +-700.
std::pair<double, double> kang_transform(double w, double u);

struct OracleValue {
  double value = 0.0;
  double mc_se = 0.0;
  std::uint64_t n_mc = 0;
};

// E(Y_a) by Monte Carlo over (W, U); the conditional mean given (W, U) is
// evaluated exactly, so only the baseline distribution is simulated.
OracleValue true_value_oracle(const DgpConfig& cfg, const Regimen& reg, std::uint64_t n_mc,
                              std::uint64_t seed);

// psi(r1) - psi(r2) with common random numbers.
OracleValue true_contrast_oracle(const DgpConfig& cfg, const Regimen& r1, const Regimen& r2,
                                 std::uint64_t n_mc, std::uint64_t seed);

struct CalibrationOptions {
  double tolerance = 0.002;
  double lo = -3.0;  // search interval for the infection-model treatment coefficient
  double hi = 0.0;
  std::uint64_t n_mc = 1'000'000;
  std::uint64_t seed = 20240601;
};

struct CalibrationResult {
  DgpConfig config;
  OracleValue oracle;
  std::vector<std::string> trace;
  bool searched = false;  // false when cfg0 already met the target
};

// Bisection on l_treatment until the oracle contrast of (1,1) vs (0,0) is
// within tolerance of `target_delta`. Throws CalibrationError when the target
// is outside the bracket.
CalibrationResult calibrate(double target_delta, const DgpConfig& cfg0,
                            const CalibrationOptions& opt = {});

struct ReplicateRow {
  int replicate = 0;
  std::string method;
  double delta_hat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;
  bool failed = false;
  std::string message;
};

struct MethodSummary {
  std::string method;
  double mean_delta = 0.0;
  double pct_bias = 0.0;
  double se = 0.0;  // square root of the mean variance
  double rmse = 0.0;
  double coverage = 0.0;  // percent; NaN when fewer than 2 replicates
  int reps = 0;
  int failures = 0;
};

struct ScenarioReport {
  Scenario scenario = Scenario::fully_adjusted;
  double truth = 0.0;
  std::vector<MethodSummary> rows;
  std::vector<ReplicateRow> replicates;

  std::string to_csv() const;
  std::string replicates_csv() const;
  std::string to_table() const;  // Method, delta, %bias, SE, rMSE, Coverage
};

struct SimulationOptions {
  int reps = 200;
  int bootstrap = 200;
  std::uint64_t seed = 0;
  int workers = 1;
  double max_failure_rate = 0.05;
};

// Display name used in tables, e.g. "G-comp. (likelihood)" for gcomp.
std::string method_display_name(std::string_view label);

// Method configuration used by the simulation: likelihood G-computation uses
// the L-sum outcome shortcut.
MethodSpec simulation_method(std::string_view label);

ScenarioReport run_scenario(Scenario sc, const std::vector<std::string>& methods,
                            const DgpConfig& cfg, double truth, const SimulationOptions& opt);

}  // namespace cltmle
