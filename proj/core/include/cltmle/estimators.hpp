#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cltmle/data.hpp"
#include "cltmle/learners.hpp"

namespace cltmle {

enum class Method { gcomp, gcomp_seq, iptw, tmle };

// Names used in configs and reports: gcomp, gcomp-seq, iptw, tmle.
std::string to_string(Method m);
Method parse_method(std::string_view name);

// How the nested outcome regressions condition on treatment history.
//   subset: fit among regimen followers only.
//   pooled: fit among all uncensored subjects with past treatment as a
//           feature, then predict with treatment set to the regimen.
enum class Conditioning { subset, pooled };

std::string to_string(Conditioning c);
Conditioning parse_conditioning(std::string_view name);

struct EstimatorOptions {
  LearnerSpec q_learner = LearnerSpec::logistic();  // outcome / nested regressions
  LearnerSpec g_learner = LearnerSpec::logistic();  // treatment and censoring
  LearnerSpec l_learner = LearnerSpec::logistic();  // L_t models of likelihood G-computation
  double truncation = 0.005;                        // floor on cumulative propensities
  Conditioning conditioning = Conditioning::subset;
  // Likelihood G-computation only: Y = L_1 + ... + L_{K-1} + L_K with binary
  // L_K, so the outcome model is a regression of L_K and the sum is added back.
  bool outcome_is_l_sum = false;
  double fluctuation_tol = 1e-12;  // on |score| / n
  std::uint64_t seed = 0;          // Super Learner fold assignment
};

// One fitted factor of the cumulative propensity.
struct PropensityComponent {
  std::optional<FittedLearner> model;
  // Exact probability used when the model is absent: 1 for regimen-implied
  // treatment factors, the common label when the stratum has only one class.
  double constant = 1.0;
  int stratum_size = 0;
};

struct PropensityFits {
  Regimen regimen;
  Eigen::MatrixXd gbar;      // n x K, column t-1 holds the floored ḡ_t
  Eigen::MatrixXd gbar_raw;  // n x K, before the floor
  std::vector<PropensityComponent> treatment;  // A_1 .. A_{K-1}
  std::vector<PropensityComponent> censoring;  // C_1 .. C_K
  double truncation = 0.005;
  int truncated = 0;  // entries of gbar raised to the floor
  std::uint64_t fingerprint = 0;
};

struct SequentialFits {
  Eigen::MatrixXd qbar;       // n x (K+1); column K holds scaled Y
  Eigen::MatrixXd qbar_star;  // fluctuated values, same shape; empty before targeting
  Eigen::VectorXd epsilons;   // ε_1 .. ε_K
  bool targeted() const noexcept { return qbar_star.size() != 0; }
};

enum class IntervalKind { none, wald, percentile };

struct EstimateReport {
  Method method = Method::tmle;
  std::string label;   // method label, e.g. "tmle" or "sl-tmle"
  std::string target;  // "[1,1]" or "[1,1] - [0,0]"
  double psi_hat = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  IntervalKind interval = IntervalKind::none;
  Eigen::VectorXd ic;  // per-subject influence curve on the outcome scale
  std::vector<double> replicates;
  int bootstrap_failures = 0;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> warnings;
  std::uint64_t fingerprint = 0;
};

// Feature matrix (W, L_1..L_nl) for every subject, optionally followed by
// A_1..A_na. When `set_a` is given the A columns hold the regimen values.
Eigen::MatrixXd history_features(const Dataset& d, int nl, int na = 0,
                                 const Regimen* set_a = nullptr);

PropensityFits fit_propensity(const Dataset& d, const Regimen& reg, const LearnerSpec& learner,
                              double truncation = 0.005, std::uint64_t seed = 0);

// Cumulative product of the per-visit factors; the first visit contributes
// the censoring factor only.
Eigen::MatrixXd cumulative_propensity(const Eigen::MatrixXd& treatment_factors,
                                      const Eigen::MatrixXd& censoring_factors);

EstimateReport gcomp_likelihood(const Dataset& d, const Regimen& reg,
                                const EstimatorOptions& opt = {});

EstimateReport gcomp_sequential(const Dataset& d, const Regimen& reg,
                                const EstimatorOptions& opt = {},
                                SequentialFits* fits = nullptr);

EstimateReport iptw(const Dataset& d, const Regimen& reg, const PropensityFits& prop);

// I(follows at t) / ḡ_t per subject.
Eigen::VectorXd clever_covariate(const PropensityFits& prop, const Dataset& d, const Regimen& reg,
                                 int t);

struct Fluctuation {
  Eigen::VectorXd updated;
  double epsilon = 0.0;
  double score = 0.0;       // Σ g (target - updated)
  bool degenerate = false;  // all g zero
  bool unbounded = false;   // no finite root; ε stopped at the search bound
};

// ε solves the score equation over rows with g != 0. The update moves every
// row along `direction` (1/gbar for all subjects) when given, otherwise along g.
Fluctuation fluctuate(const Eigen::VectorXd& qt, const Eigen::VectorXd& target,
                      const Eigen::VectorXd& g, double tol = 1e-12,
                      const Eigen::VectorXd* direction = nullptr);

struct TmleResult {
  EstimateReport report;
  SequentialFits fits;
};

TmleResult tmle(const Dataset& d, const Regimen& reg, const PropensityFits& prop,
                const OutcomeScaler& scaler, const EstimatorOptions& opt = {});

// Difference of two estimates on the same data. Influence curves are
// differenced and passed through the clustered sandwich; paired bootstrap
// replicates are differenced elementwise.
EstimateReport contrast(const Dataset& d, const EstimateReport& r1, const EstimateReport& r2);

}  // namespace cltmle
