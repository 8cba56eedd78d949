#include "cltmle/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "cltmle/error.hpp"
#include "cltmle/inference.hpp"
#include "cltmle/parallel.hpp"

namespace cltmle {

std::string to_string(Method m) {
  switch (m) {
    case Method::gcomp:
      return "gcomp";
    case Method::gcomp_seq:
      return "gcomp-seq";
    case Method::iptw:
      return "iptw";
    case Method::tmle:
      return "tmle";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "gcomp") return Method::gcomp;
  if (name == "gcomp-seq") return Method::gcomp_seq;
  if (name == "iptw") return Method::iptw;
  if (name == "tmle") return Method::tmle;
  throw ArgumentError("unknown method '" + std::string(name) +
                      "' (valid: gcomp, gcomp-seq, iptw, tmle)");
}

std::string to_string(Conditioning c) { return c == Conditioning::subset ? "subset" : "pooled"; }

Conditioning parse_conditioning(std::string_view name) {
  if (name == "subset") return Conditioning::subset;
  if (name == "pooled") return Conditioning::pooled;
  throw ArgumentError("unknown conditioning '" + std::string(name) + "' (valid: subset, pooled)");
}

namespace {

using Rows = std::vector<Eigen::Index>;

const Dataset& canonical_view(const Dataset& d, std::optional<Dataset>& holder) {
  if (d.is_canonical()) return d;
  holder = impute_after_censoring(d);
  return *holder;
}

void check_regimen(const Dataset& d, const Regimen& reg) {
  if (reg.size() != d.k() - 1) {
    throw ArgumentError("regimen " + reg.to_string() + " has length " + std::to_string(reg.size()) +
                        ", expected K-1 = " + std::to_string(d.k() - 1));
  }
}

Rows followers(const Dataset& d, const Regimen& reg, int t) {
  Rows rows;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (follows_regimen(d, i, reg, t)) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

FittedLearner fit_rows(const Dataset& d, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const Rows& rows, const LearnerSpec& spec, std::uint64_t seed) {
  TrainingSet ts;
  ts.x = x(rows, Eigen::all);
  ts.y = y(rows);
  std::vector<int> clusters;
  clusters.reserve(rows.size());
  for (auto r : rows) clusters.push_back(d.cluster_of()[static_cast<std::size_t>(r)]);
  return fit_learner(ts, spec, clusters, seed);
}

// Common label when every row of `y` in `rows` agrees.
std::optional<double> constant_label(const Eigen::VectorXd& y, const Rows& rows) {
  const double first = y(rows.front());
  for (auto r : rows) {
    if (y(r) != first) return std::nullopt;
  }
  return first;
}

Eigen::VectorXd scaled_outcome(const Dataset& d, const OutcomeScaler& scaler) {
  Eigen::VectorXd ys(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double y = d.y(i);
    ys(static_cast<Eigen::Index>(i)) =
        d.c(i, d.k()) == 0 && std::isfinite(y) ? scaler.scale(y) : 0.0;
  }
  return ys;
}

void add_epsilon_diagnostics(EstimateReport& r, const SequentialFits& f) {
  for (Eigen::Index t = 0; t < f.epsilons.size(); ++t) {
    r.diagnostics["epsilon_" + std::to_string(t + 1)] = f.epsilons(t);
  }
}

// Backward sequential regression; fluctuates each step when `prop` is given.
// Smallest untruncated gbar_K among those who follow the regimen to the end.
double min_follower_gbar(const Dataset& d, const Regimen& reg, const PropensityFits& prop) {
  double m = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!follows_regimen(d, i, reg, d.k())) continue;
    const double g = prop.gbar_raw(static_cast<Eigen::Index>(i), d.k() - 1);
    if (!(g >= m)) m = g;
  }
  return m;
}

double backward_recursion(const Dataset& d, const Regimen& reg, const EstimatorOptions& opt,
                          const OutcomeScaler& scaler, const PropensityFits* prop,
                          SequentialFits& fits, EstimateReport& report) {
  const int k = d.k();
  const auto n = static_cast<Eigen::Index>(d.size());
  fits.qbar.resize(n, k + 1);
  fits.qbar.col(k) = scaled_outcome(d, scaler);
  if (prop) {
    fits.qbar_star.resize(n, k + 1);
    fits.qbar_star.col(k) = fits.qbar.col(k);
    fits.epsilons = Eigen::VectorXd::Zero(k);
  }
  Eigen::VectorXd target = fits.qbar.col(k);
  for (int t = k; t >= 1; --t) {
    const bool pooled = opt.conditioning == Conditioning::pooled && t > 1;
    Rows rows;
    Eigen::MatrixXd x, xpred;
    if (pooled) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.c(i, t) == 0) rows.push_back(static_cast<Eigen::Index>(i));
      }
      x = history_features(d, t - 1, t - 1);
      xpred = history_features(d, t - 1, t - 1, &reg);
    } else {
      rows = followers(d, reg, t);
      x = history_features(d, t - 1);
    }
    if (rows.empty()) {
      throw StratumEmptyError("no subject in the conditioning stratum at visit " + std::to_string(t),
                              t);
    }
    report.diagnostics["followers_" + std::to_string(t)] =
        pooled ? static_cast<double>(followers(d, reg, t).size()) : static_cast<double>(rows.size());
    const FittedLearner fit =
        fit_rows(d, x, target, rows, opt.q_learner, derive_seed(opt.seed, 1000 + t));
    if (const auto* ens = fit.ensemble()) {
      for (const auto& w : ens->warnings) report.warnings.push_back("Q" + std::to_string(t) + ": " + w);
    }
    if (const auto* lg = fit.logistic(); lg && lg->ridge_fallback) {
      report.warnings.push_back("Q" + std::to_string(t) + ": separation, ridge fallback");
    }
    const Eigen::VectorXd qt = predict(fit, pooled ? xpred : x);
    fits.qbar.col(t - 1) = qt;
    if (prop) {
      const Eigen::VectorXd g = clever_covariate(*prop, d, reg, t);
      const Eigen::VectorXd h = prop->gbar.col(t - 1).cwiseInverse();
      Fluctuation fl = fluctuate(qt, target, g, opt.fluctuation_tol, &h);
      fits.epsilons(t - 1) = fl.epsilon;
      if (fl.degenerate) report.warnings.push_back("fluctuation at visit " + std::to_string(t) + ": clever covariate is zero");
      if (fl.unbounded) report.warnings.push_back("fluctuation at visit " + std::to_string(t) + ": no finite root");
      report.diagnostics["score_" + std::to_string(t)] = fl.score / static_cast<double>(n);
      fits.qbar_star.col(t - 1) = fl.updated;
      target = std::move(fl.updated);
    } else {
      target = qt;
    }
  }
  return target.mean();
}

}  // namespace

Eigen::MatrixXd history_features(const Dataset& d, int nl, int na, const Regimen* set_a) {
  if (nl < 0 || nl > d.k() - 1 || na < 0 || na > d.k() - 1) {
    throw ArgumentError("history_features: history length out of range");
  }
  const auto n = static_cast<Eigen::Index>(d.size());
  const int p = d.baseline_dim();
  Eigen::MatrixXd x(n, p + nl + na);
  x.leftCols(p) = d.w();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (int t = 1; t <= nl; ++t) x(ii, p + t - 1) = d.l(i, t) == 1 ? 1.0 : 0.0;
    for (int t = 1; t <= na; ++t) {
      const Indicator a = set_a ? set_a->at(t) : d.a(i, t);
      x(ii, p + nl + t - 1) = a == 1 ? 1.0 : 0.0;
    }
  }
  return x;
}

Eigen::MatrixXd cumulative_propensity(const Eigen::MatrixXd& treatment_factors,
                                      const Eigen::MatrixXd& censoring_factors) {
  const auto k = censoring_factors.cols();
  if (treatment_factors.cols() != k - 1 || treatment_factors.rows() != censoring_factors.rows()) {
    throw ArgumentError("cumulative_propensity: factor matrices have inconsistent shapes");
  }
  Eigen::MatrixXd g(censoring_factors.rows(), k);
  g.col(0) = censoring_factors.col(0);
  for (Eigen::Index t = 1; t < k; ++t) {
    g.col(t) = g.col(t - 1).cwiseProduct(treatment_factors.col(t - 1)).cwiseProduct(censoring_factors.col(t));
  }
  return g;
}

PropensityFits fit_propensity(const Dataset& d_in, const Regimen& reg, const LearnerSpec& learner,
                              double truncation, std::uint64_t seed) {
  std::optional<Dataset> holder;
  const Dataset& d = canonical_view(d_in, holder);
  check_regimen(d, reg);
  if (!(truncation >= 0.0 && truncation < 1.0)) throw ArgumentError("truncation must lie in [0,1)");
  const int k = d.k();
  const auto n = static_cast<Eigen::Index>(d.size());
  PropensityFits out;
  out.regimen = reg;
  out.truncation = truncation;
  out.fingerprint = d_in.fingerprint();
  Eigen::MatrixXd treat = Eigen::MatrixXd::Ones(n, k - 1);
  Eigen::MatrixXd cens = Eigen::MatrixXd::Ones(n, k);

  auto fit_component = [&](const Rows& rows, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           std::uint64_t s, Eigen::Ref<Eigen::VectorXd> factor) {
    PropensityComponent comp;
    comp.stratum_size = static_cast<int>(rows.size());
    if (auto c = constant_label(y, rows)) {
      comp.constant = *c;
      factor.setConstant(*c);
    } else {
      comp.model = fit_rows(d, x, y, rows, learner, s);
      factor = predict(*comp.model, x);
    }
    return comp;
  };

  for (int t = 1; t <= k; ++t) {
    // Censoring at t among those on the regimen through t-1 and uncensored at t-1.
    Rows at_risk;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const bool ok = t == 1 || (follows_regimen(d, i, reg, t - 1) && d.a(i, t - 1) == reg.at(t - 1));
      if (ok) at_risk.push_back(static_cast<Eigen::Index>(i));
    }
    if (at_risk.empty()) {
      throw StratumEmptyError("no subject at risk of censoring at visit " + std::to_string(t), t);
    }
    Eigen::VectorXd uncensored(n);
    for (std::size_t i = 0; i < d.size(); ++i) {
      uncensored(static_cast<Eigen::Index>(i)) = d.c(i, t) == 0 ? 1.0 : 0.0;
    }
    out.censoring.push_back(fit_component(at_risk, history_features(d, t - 1), uncensored,
                                          derive_seed(seed, 2 * t), cens.col(t - 1)));
    if (t == k) break;

    // Treatment at t among regimen followers uncensored at t.
    if (t > 1 && reg.at(t - 1) == 0) {
      PropensityComponent comp;
      comp.constant = 1.0;
      out.treatment.push_back(std::move(comp));
      continue;
    }
    Rows stratum = followers(d, reg, t);
    if (stratum.empty()) {
      throw StratumEmptyError("no regimen follower uncensored at visit " + std::to_string(t), t);
    }
    Eigen::VectorXd match(n);
    for (std::size_t i = 0; i < d.size(); ++i) {
      match(static_cast<Eigen::Index>(i)) = d.a(i, t) == reg.at(t) ? 1.0 : 0.0;
    }
    out.treatment.push_back(fit_component(stratum, history_features(d, t), match,
                                          derive_seed(seed, 2 * t + 1), treat.col(t - 1)));
  }

  out.gbar_raw = cumulative_propensity(treat, cens);
  out.gbar = out.gbar_raw.cwiseMax(truncation);
  for (int t = 1; t <= k; ++t) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (out.gbar_raw(static_cast<Eigen::Index>(i), t - 1) < truncation &&
          follows_regimen(d, i, reg, t)) {
        ++out.truncated;
      }
    }
  }
  return out;
}

Eigen::VectorXd clever_covariate(const PropensityFits& prop, const Dataset& d, const Regimen& reg,
                                 int t) {
  if (t < 1 || t > d.k()) throw ArgumentError("clever_covariate: visit out of range");
  if (prop.gbar.rows() != static_cast<Eigen::Index>(d.size())) {
    throw ArgumentError("clever_covariate: propensity fits do not match the dataset");
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (follows_regimen(d, i, reg, t)) {
      const auto ii = static_cast<Eigen::Index>(i);
      g(ii) = 1.0 / prop.gbar(ii, t - 1);
    }
  }
  return g;
}

Fluctuation fluctuate(const Eigen::VectorXd& qt, const Eigen::VectorXd& target,
                      const Eigen::VectorXd& g, double tol, const Eigen::VectorXd* direction) {
  const auto n = qt.size();
  if (target.size() != n || g.size() != n || (direction && direction->size() != n)) {
    throw ArgumentError("fluctuate: length mismatch");
  }
  Fluctuation out;
  out.updated = qt;
  Rows active;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(qt(i) > 0.0 && qt(i) < 1.0)) throw ArgumentError("fluctuate: initial values must lie in (0,1)");
    if (g(i) != 0.0) active.push_back(i);
  }
  if (active.empty()) {
    out.degenerate = true;
    return out;
  }
  const Eigen::VectorXd off = qt(active).unaryExpr([](double q) { return logit(q); });
  const Eigen::VectorXd ga = g(active);
  const Eigen::VectorXd ya = target(active);
  auto score = [&](double e, double* deriv) {
    double s = 0.0, ds = 0.0;
    for (Eigen::Index j = 0; j < ga.size(); ++j) {
      const double q = expit(off(j) + e * ga(j));
      s += ga(j) * (ya(j) - q);
      ds -= ga(j) * ga(j) * q * (1.0 - q);
    }
    if (deriv) *deriv = ds;
    return s;
  };
  const double tol_abs = tol * static_cast<double>(n);
  constexpr double kBound = 1024.0;

  double e = 0.0;
  double s = score(0.0, nullptr);
  if (std::abs(s) > tol_abs) {
    // S is decreasing in ε: bracket the root on the side indicated by S(0).
    double lo = 0.0, hi = 0.0;
    const double dir = s > 0 ? 1.0 : -1.0;
    double far = dir;
    double s_far = score(far, nullptr);
    while (s_far * dir > 0 && std::abs(far) < kBound) {
      far *= 2.0;
      s_far = score(far, nullptr);
    }
    if (s_far * dir > 0) {
      out.unbounded = true;
      e = far;
    } else {
      lo = dir > 0 ? 0.0 : far;
      hi = dir > 0 ? far : 0.0;
      e = 0.5 * (lo + hi);
      for (int it = 0; it < 300; ++it) {
        double ds = 0.0;
        s = score(e, &ds);
        if (std::abs(s) <= tol_abs) break;
        if (s > 0) lo = e; else hi = e;
        double next = ds != 0.0 ? e - s / ds : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - e) <= 1e-17 * std::max(1.0, std::abs(e))) break;
        e = next;
      }
    }
  }
  out.epsilon = e;
  if (direction) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((*direction)(i) != 0.0) out.updated(i) = expit(logit(qt(i)) + e * (*direction)(i));
    }
  } else {
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto i = active[j];
      out.updated(i) = expit(off(static_cast<Eigen::Index>(j)) + e * g(i));
    }
  }
  out.score = score(e, nullptr);
  if (!out.unbounded && std::abs(out.score) > 1e-8 * static_cast<double>(n)) {
    throw ConvergenceError("fluctuation did not solve its score equation", {e},
                           std::abs(out.score) / static_cast<double>(n));
  }
  return out;
}

EstimateReport gcomp_likelihood(const Dataset& d_in, const Regimen& reg, const EstimatorOptions& opt) {
  std::optional<Dataset> holder;
  const Dataset& d = canonical_view(d_in, holder);
  check_regimen(d, reg);
  const int k = d.k();
  const int nl = k - 1;
  if (nl > 20) throw ArgumentError("likelihood G-computation enumerates 2^(K-1) histories; K-1 must be <= 20");
  const auto n = static_cast<Eigen::Index>(d.size());
  const int p = d.baseline_dim();
  EstimateReport rep;
  rep.method = Method::gcomp;
  rep.label = to_string(Method::gcomp);
  rep.target = reg.to_string();
  rep.fingerprint = d_in.fingerprint();

  // L_t models among followers at t.
  std::vector<FittedLearner> lfit;
  std::vector<std::optional<double>> lconst;
  for (int t = 1; t <= nl; ++t) {
    Rows rows = followers(d, reg, t);
    if (rows.empty()) throw StratumEmptyError("no regimen follower at visit " + std::to_string(t), t);
    Eigen::VectorXd lt(n);
    for (std::size_t i = 0; i < d.size(); ++i) lt(static_cast<Eigen::Index>(i)) = d.l(i, t) == 1 ? 1.0 : 0.0;
    auto c = constant_label(lt, rows);
    lconst.push_back(c);
    lfit.push_back(c ? FittedLearner(MeanModel{*c})
                     : fit_rows(d, history_features(d, t - 1), lt, rows, opt.l_learner,
                                derive_seed(opt.seed, 3000 + t)));
    rep.diagnostics["followers_" + std::to_string(t)] = static_cast<double>(rows.size());
  }

  Rows last = followers(d, reg, k);
  if (last.empty()) throw StratumEmptyError("no uncensored regimen follower at visit " + std::to_string(k), k);
  rep.diagnostics["followers_" + std::to_string(k)] = static_cast<double>(last.size());
  std::optional<OutcomeScaler> scaler;
  Eigen::VectorXd yfit(n);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (d.c(i, k) != 0) {
      yfit(ii) = 0.0;
      continue;
    }
    if (opt.outcome_is_l_sum) {
      double rest = d.y(i);
      for (int t = 1; t <= nl; ++t) rest -= d.l(i, t) == 1 ? 1.0 : 0.0;
      if (rest != 0.0 && rest != 1.0) {
        throw ArgumentError("outcome_is_l_sum: Y minus the L_t sum must be 0 or 1 (subject " +
                            d.record(i).subject_id + ")");
      }
      yfit(ii) = rest;
    } else {
      yfit(ii) = d.y(i);
    }
  }
  if (!opt.outcome_is_l_sum) {
    scaler = make_scaler(d);
    yfit = scaled_outcome(d, *scaler);
  }
  const auto yconst = constant_label(yfit, last);
  const FittedLearner yfit_model =
      yconst ? FittedLearner(MeanModel{*yconst})
             : fit_rows(d, history_features(d, nl), yfit, last, opt.q_learner, derive_seed(opt.seed, 3000));

  auto predict_exact = [](const FittedLearner& f, const std::optional<double>& c, const Eigen::MatrixXd& x) {
    if (c) return Eigen::VectorXd::Constant(x.rows(), *c).eval();
    return predict(f, x);
  };

  Eigen::VectorXd psi_i = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd x(n, p + nl);
  x.leftCols(p) = d.w();
  const std::uint64_t patterns = std::uint64_t{1} << nl;
  for (std::uint64_t pat = 0; pat < patterns; ++pat) {
    Eigen::VectorXd prob = Eigen::VectorXd::Ones(n);
    double lsum = 0.0;
    for (int t = 1; t <= nl; ++t) {
      const double lt = (pat >> (t - 1)) & 1U ? 1.0 : 0.0;
      const Eigen::VectorXd p1 = predict_exact(lfit[static_cast<std::size_t>(t - 1)],
                                               lconst[static_cast<std::size_t>(t - 1)],
                                               x.leftCols(p + t - 1));
      if (lt == 1.0) {
        prob.array() *= p1.array();
      } else {
        prob.array() *= 1.0 - p1.array();
      }
      x.col(p + t - 1).setConstant(lt);
      lsum += lt;
    }
    Eigen::VectorXd m = predict_exact(yfit_model, yconst, x);
    if (opt.outcome_is_l_sum) m.array() += lsum;
    psi_i += prob.cwiseProduct(m);
  }
  const double mean = psi_i.mean();
  rep.psi_hat = scaler ? scaler->unscale(mean) : mean;
  return rep;
}

EstimateReport gcomp_sequential(const Dataset& d_in, const Regimen& reg, const EstimatorOptions& opt,
                                SequentialFits* fits_out) {
  std::optional<Dataset> holder;
  const Dataset& d = canonical_view(d_in, holder);
  check_regimen(d, reg);
  EstimateReport rep;
  rep.method = Method::gcomp_seq;
  rep.label = to_string(Method::gcomp_seq);
  rep.target = reg.to_string();
  rep.fingerprint = d_in.fingerprint();
  const OutcomeScaler scaler = make_scaler(d);
  SequentialFits fits;
  const double mean = backward_recursion(d, reg, opt, scaler, nullptr, fits, rep);
  rep.psi_hat = scaler.unscale(mean);
  if (fits_out) *fits_out = std::move(fits);
  return rep;
}

EstimateReport iptw(const Dataset& d_in, const Regimen& reg, const PropensityFits& prop) {
  std::optional<Dataset> holder;
  const Dataset& d = canonical_view(d_in, holder);
  check_regimen(d, reg);
  if (prop.gbar.rows() != static_cast<Eigen::Index>(d.size()) || !(prop.regimen == reg)) {
    throw ArgumentError("iptw: propensity fits were computed for a different dataset or regimen");
  }
  const int k = d.k();
  const auto n = static_cast<Eigen::Index>(d.size());
  Eigen::VectorXd follow = Eigen::VectorXd::Zero(n), y = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (follows_regimen(d, i, reg, k)) {
      follow(static_cast<Eigen::Index>(i)) = 1.0;
      y(static_cast<Eigen::Index>(i)) = d.y(i);
    }
  }
  if (follow.sum() == 0.0) throw EstimationError("iptw: no subject follows " + reg.to_string() + " uncensored");
  const Eigen::VectorXd gk = prop.gbar.col(k - 1);
  const double s = gk.mean();
  const Eigen::VectorXd wt = follow.cwiseQuotient(gk) * s;
  const double psi = wt.dot(y) / wt.sum();
  EstimateReport rep;
  rep.method = Method::iptw;
  rep.label = to_string(Method::iptw);
  rep.target = reg.to_string();
  rep.fingerprint = d_in.fingerprint();
  rep.psi_hat = psi;
  rep.ic = wt.cwiseProduct((y.array() - psi).matrix()) / wt.mean();
  const auto var = clustered_sandwich(rep.ic, d.cluster_of());
  rep.se = var.se();
  std::tie(rep.ci_lo, rep.ci_hi) = wald_ci(psi, rep.se);
  rep.interval = IntervalKind::wald;
  rep.diagnostics["followers_" + std::to_string(k)] = follow.sum();
  rep.diagnostics["min_gbar"] = min_follower_gbar(d, reg, prop);
  rep.diagnostics["truncated"] = prop.truncated;
  rep.diagnostics["stabilization"] = s;
  if (var.floored) rep.warnings.push_back("sandwich variance floored");
  return rep;
}

TmleResult tmle(const Dataset& d_in, const Regimen& reg, const PropensityFits& prop,
                const OutcomeScaler& scaler, const EstimatorOptions& opt) {
  std::optional<Dataset> holder;
  const Dataset& d = canonical_view(d_in, holder);
  check_regimen(d, reg);
  if (prop.gbar.rows() != static_cast<Eigen::Index>(d.size()) || !(prop.regimen == reg)) {
    throw ArgumentError("tmle: propensity fits were computed for a different dataset or regimen");
  }
  TmleResult out;
  EstimateReport& rep = out.report;
  rep.method = Method::tmle;
  rep.label = to_string(Method::tmle);
  rep.target = reg.to_string();
  rep.fingerprint = d_in.fingerprint();
  const double mean = backward_recursion(d, reg, opt, scaler, &prop, out.fits, rep);
  rep.psi_hat = scaler.unscale(mean);
  add_epsilon_diagnostics(rep, out.fits);
  const auto ic = efficient_influence_curve(d, out.fits, prop, reg, rep.psi_hat, scaler);
  rep.ic = ic.d_total;
  for (Eigen::Index t = 0; t < ic.d_components.cols(); ++t) {
    rep.diagnostics["ic_mean_" + std::to_string(t)] = ic.d_components.col(t).mean();
  }
  const auto var = clustered_sandwich(rep.ic, d.cluster_of());
  rep.se = var.se();
  std::tie(rep.ci_lo, rep.ci_hi) = wald_ci(rep.psi_hat, rep.se);
  rep.interval = IntervalKind::wald;
  rep.diagnostics["min_gbar"] = min_follower_gbar(d, reg, prop);
  rep.diagnostics["truncated"] = prop.truncated;
  if (var.floored) rep.warnings.push_back("sandwich variance floored");
  return out;
}

EstimateReport contrast(const Dataset& d, const EstimateReport& r1, const EstimateReport& r2) {
  if (r1.fingerprint != r2.fingerprint || r1.fingerprint != d.fingerprint()) {
    throw ArgumentError("contrast: estimates come from different datasets");
  }
  if (r1.method != r2.method || r1.label != r2.label) {
    throw ArgumentError("contrast: estimates come from different methods");
  }
  EstimateReport out;
  out.method = r1.method;
  out.label = r1.label;
  out.target = r1.target + " - " + r2.target;
  out.fingerprint = r1.fingerprint;
  out.psi_hat = r1.psi_hat - r2.psi_hat;
  if (r1.ic.size() && r2.ic.size()) {
    if (r1.ic.size() != static_cast<Eigen::Index>(d.size()) || r2.ic.size() != r1.ic.size()) {
      throw ArgumentError("contrast: influence curves do not match the dataset");
    }
    out.ic = r1.ic - r2.ic;
    const auto var = clustered_sandwich(out.ic, d.cluster_of());
    out.se = var.se();
    std::tie(out.ci_lo, out.ci_hi) = wald_ci(out.psi_hat, out.se);
    out.interval = IntervalKind::wald;
    if (var.floored) out.warnings.push_back("sandwich variance floored");
  } else if (!r1.replicates.empty() && r1.replicates.size() == r2.replicates.size()) {
    std::vector<double> diff(r1.replicates.size());
    for (std::size_t b = 0; b < diff.size(); ++b) diff[b] = r1.replicates[b] - r2.replicates[b];
    const int requested = static_cast<int>(diff.size()) + std::max(r1.bootstrap_failures, r2.bootstrap_failures);
    const auto boot = summarize_replicates(std::move(diff), requested, std::max(r1.bootstrap_failures, r2.bootstrap_failures));
    out.replicates = boot.replicates;
    out.se = boot.se;
    out.ci_lo = boot.ci_lo;
    out.ci_hi = boot.ci_hi;
    out.bootstrap_failures = boot.failures;
    out.interval = IntervalKind::percentile;
  }
  return out;
}

}  // namespace cltmle
