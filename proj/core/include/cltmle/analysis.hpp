#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cltmle/data.hpp"
#include "cltmle/estimators.hpp"

namespace cltmle {

// A named estimator configuration, e.g. "tmle" (main-terms logistic fits) or
// "sl-tmle" (Super Learner over {logistic, knn} for every fit).
struct MethodSpec {
  std::string label;
  Method method = Method::tmle;
  EstimatorOptions options;
};

// Known labels: gcomp, gcomp-seq, iptw, tmle, sl-tmle.
MethodSpec method_spec(std::string_view label, const EstimatorOptions& base = {});
std::vector<std::string> known_method_labels();

struct AnalysisOptions {
  int bootstrap = 200;  // replicates for the G-computation methods; 0 disables
  std::uint64_t seed = 0;
  int workers = 1;
};

// Point estimate for one regimen; carries the influence curve for IPTW and TMLE.
EstimateReport point_estimate(const Dataset& d, const MethodSpec& m, const Regimen& reg);

struct ContrastResult {
  EstimateReport first;
  EstimateReport second;
  EstimateReport difference;
};

// Estimates for both regimens and their difference. IPTW and TMLE use Wald
// intervals from the clustered sandwich; the G-computations use one shared
// pairs-cluster bootstrap so all three rows come from paired replicates.
ContrastResult analyze_contrast(const Dataset& d, const MethodSpec& m, const Regimen& r1,
                                const Regimen& r2, const AnalysisOptions& opt);

EstimateReport analyze(const Dataset& d, const MethodSpec& m, const Regimen& reg,
                       const AnalysisOptions& opt);

}  // namespace cltmle
