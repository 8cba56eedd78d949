#include "cltmle/analysis.hpp"

#include "cltmle/error.hpp"
#include "cltmle/inference.hpp"
#include "cltmle/parallel.hpp"

namespace cltmle {

std::vector<std::string> known_method_labels() {
  return {"gcomp", "gcomp-seq", "iptw", "tmle", "sl-tmle"};
}

MethodSpec method_spec(std::string_view label, const EstimatorOptions& base) {
  MethodSpec m;
  m.label = std::string(label);
  m.options = base;
  if (label == "sl-tmle") {
    m.method = Method::tmle;
    const auto sl = LearnerSpec::super_learner({LearnerSpec::logistic(), LearnerSpec::knn()});
    m.options.q_learner = sl;
    m.options.g_learner = sl;
    return m;
  }
  try {
    m.method = parse_method(label);
  } catch (const ArgumentError&) {
    throw ArgumentError("unknown method '" + std::string(label) +
                        "' (valid: gcomp, gcomp-seq, iptw, tmle, sl-tmle)");
  }
  return m;
}

EstimateReport point_estimate(const Dataset& d, const MethodSpec& m, const Regimen& reg) {
  EstimateReport r;
  switch (m.method) {
    case Method::gcomp:
      r = gcomp_likelihood(d, reg, m.options);
      break;
    case Method::gcomp_seq:
      r = gcomp_sequential(d, reg, m.options);
      break;
    case Method::iptw: {
      const auto prop = fit_propensity(d, reg, m.options.g_learner, m.options.truncation,
                                       derive_seed(m.options.seed, 17));
      r = iptw(d, reg, prop);
      break;
    }
    case Method::tmle: {
      const auto prop = fit_propensity(d, reg, m.options.g_learner, m.options.truncation,
                                       derive_seed(m.options.seed, 17));
      r = tmle(d, reg, prop, make_scaler(d), m.options).report;
      break;
    }
  }
  r.label = m.label;
  return r;
}

namespace {

bool uses_bootstrap(const MethodSpec& m) {
  return m.method == Method::gcomp || m.method == Method::gcomp_seq;
}

void attach(EstimateReport& r, const BootstrapResult& b) {
  r.replicates = b.replicates;
  r.bootstrap_failures = b.failures;
  r.se = b.se;
  r.ci_lo = b.ci_lo;
  r.ci_hi = b.ci_hi;
  r.interval = IntervalKind::percentile;
}

}  // namespace

ContrastResult analyze_contrast(const Dataset& d, const MethodSpec& m, const Regimen& r1,
                                const Regimen& r2, const AnalysisOptions& opt) {
  ContrastResult out;
  out.first = point_estimate(d, m, r1);
  out.second = point_estimate(d, m, r2);
  out.difference = contrast(d, out.first, out.second);
  if (!uses_bootstrap(m) || opt.bootstrap <= 0) return out;
  auto boot = pairs_cluster_bootstrap(
      d,
      [&](const Dataset& rd) {
        const double a = point_estimate(rd, m, r1).psi_hat;
        const double b = point_estimate(rd, m, r2).psi_hat;
        return std::vector<double>{a, b, a - b};
      },
      opt.bootstrap, opt.seed, opt.workers);
  attach(out.first, boot[0]);
  attach(out.second, boot[1]);
  attach(out.difference, boot[2]);
  return out;
}

EstimateReport analyze(const Dataset& d, const MethodSpec& m, const Regimen& reg,
                       const AnalysisOptions& opt) {
  EstimateReport r = point_estimate(d, m, reg);
  if (uses_bootstrap(m) && opt.bootstrap > 0) {
    attach(r, pairs_cluster_bootstrap(
                  d, [&](const Dataset& rd) { return point_estimate(rd, m, reg).psi_hat; },
                  opt.bootstrap, opt.seed, opt.workers));
  }
  return r;
}

}  // namespace cltmle
