#include "cltmle/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "cltmle/csv.hpp"
#include "cltmle/error.hpp"
#include "cltmle/learners.hpp"
#include "cltmle/parallel.hpp"

namespace cltmle {

namespace {

struct Field {
  const char* key;
  double DgpConfig::*member;
};

constexpr Field kRealFields[] = {
    {"design.w_cluster_sd", &DgpConfig::w_cluster_sd},
    {"design.w_within_sd", &DgpConfig::w_within_sd},
    {"design.u_cluster_sd", &DgpConfig::u_cluster_sd},
    {"design.u_within_sd", &DgpConfig::u_within_sd},
    {"infection.intercept", &DgpConfig::l_intercept},
    {"infection.w", &DgpConfig::l_w},
    {"infection.u", &DgpConfig::l_u},
    {"infection.treatment", &DgpConfig::l_treatment},
    {"treatment.intercept_1", &DgpConfig::a_intercept_1},
    {"treatment.intercept_2", &DgpConfig::a_intercept_2},
    {"treatment.w", &DgpConfig::a_w},
    {"treatment.u", &DgpConfig::a_u},
    {"treatment.infection", &DgpConfig::a_infection},
    {"censoring.intercept", &DgpConfig::c_intercept},
    {"censoring.w", &DgpConfig::c_w},
    {"censoring.u", &DgpConfig::c_u},
    {"censoring.treatment", &DgpConfig::c_treatment},
    {"censoring.infection", &DgpConfig::c_infection},
};

constexpr int kVisits = 3;

bool draw(std::mt19937_64& rng, double p) {
  return std::generate_canonical<double, 53>(rng) < p;
}

std::string padded(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

// E(Y | W, U) under the regimen with no censoring.
double conditional_outcome(const DgpConfig& cfg, double w, double u, Indicator a1, Indicator a2) {
  const double base = cfg.l_intercept + cfg.l_w * w + cfg.l_u * u;
  return expit(base) + expit(base + cfg.l_treatment * a1) + expit(base + cfg.l_treatment * (a1 + a2));
}

std::string fmt(double v, int decimals) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

}  // namespace

void DgpConfig::validate() const {
  std::vector<std::string> issues;
  if (clusters < 2) issues.emplace_back("clusters must be at least 2");
  if (per_cluster < 1) issues.emplace_back("per_cluster must be positive");
  for (const auto& f : kRealFields) {
    if (!std::isfinite(this->*f.member)) issues.push_back(std::string(f.key) + " must be finite");
  }
  if (w_cluster_sd < 0 || w_within_sd < 0 || u_cluster_sd < 0 || u_within_sd < 0) {
    issues.emplace_back("standard deviations must be nonnegative");
  }
  if (!(a_infection < 0)) issues.emplace_back("treatment.infection must be negative");
  if (!(c_treatment < 0)) issues.emplace_back("censoring.treatment must be negative");
  if (!(c_infection > 0)) issues.emplace_back("censoring.infection must be positive");
  if (!(l_treatment <= 0)) issues.emplace_back("infection.treatment must not be positive");
  if (!issues.empty()) {
    std::string msg = "invalid DGP config:";
    for (const auto& s : issues) msg += " " + s + ";";
    throw ArgumentError(msg);
  }
}

KvConfig DgpConfig::to_kv() const {
  KvConfig kv;
  kv.set("design.clusters", std::to_string(clusters));
  kv.set("design.per_cluster", std::to_string(per_cluster));
  for (const auto& f : kRealFields) kv.set(f.key, csv::format_double(this->*f.member));
  return kv;
}

DgpConfig DgpConfig::from_kv(const KvConfig& kv) {
  std::set<std::string> allowed{"design.clusters", "design.per_cluster"};
  for (const auto& f : kRealFields) allowed.insert(f.key);
  kv.reject_unknown(allowed);
  DgpConfig cfg;
  cfg.clusters = kv.get_int("design.clusters", cfg.clusters);
  cfg.per_cluster = kv.get_int("design.per_cluster", cfg.per_cluster);
  for (const auto& f : kRealFields) cfg.*f.member = kv.get_double(f.key, cfg.*f.member);
  cfg.validate();
  return cfg;
}

DgpConfig DgpConfig::load(const std::filesystem::path& path) {
  return from_kv(KvConfig::load(path));
}

Dataset generate_dataset(const DgpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int cw = static_cast<int>(std::to_string(cfg.clusters).size());
  const int sw = static_cast<int>(std::to_string(cfg.clusters * cfg.per_cluster).size());
  std::vector<LongitudinalRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.clusters) * static_cast<std::size_t>(cfg.per_cluster));
  int next_id = 1;
  for (int m = 0; m < cfg.clusters; ++m) {
    const double mw = cfg.w_cluster_sd * normal(rng);
    const double mu = cfg.u_cluster_sd * normal(rng);
    const std::string cluster = padded(m + 1, cw);
    for (int j = 0; j < cfg.per_cluster; ++j) {
      LongitudinalRecord r;
      r.subject_id = padded(next_id++, sw);
      r.cluster_id = cluster;
      const double w = mw + cfg.w_within_sd * normal(rng);
      const double u = mu + cfg.u_within_sd * normal(rng);
      r.w = {w, u};
      r.c.assign(kVisits, 0);
      r.l.assign(kVisits - 1, 0);
      r.a.assign(kVisits - 1, 0);
      int a_prev = 0, a_prev2 = 0, l_prev = 0, y = 0;
      bool censored = false;
      for (int t = 1; t <= kVisits; ++t) {
        const double pc = expit(cfg.c_intercept + cfg.c_w * w + cfg.c_u * u +
                                cfg.c_treatment * a_prev + cfg.c_infection * l_prev);
        if (draw(rng, pc)) {
          for (int s = t; s <= kVisits; ++s) r.c[static_cast<std::size_t>(s - 1)] = 1;
          censored = true;
          break;
        }
        const double pl = expit(cfg.l_intercept + cfg.l_w * w + cfg.l_u * u +
                                cfg.l_treatment * (a_prev + a_prev2));
        const int lt = draw(rng, pl) ? 1 : 0;
        y += lt;
        if (t == kVisits) break;
        r.l[static_cast<std::size_t>(t - 1)] = static_cast<Indicator>(lt);
        int at = 0;
        if (t == 1 || a_prev == 1) {
          const double a0 = t == 1 ? cfg.a_intercept_1 : cfg.a_intercept_2;
          at = draw(rng, expit(a0 + cfg.a_w * w + cfg.a_u * u + cfg.a_infection * lt)) ? 1 : 0;
        }
        r.a[static_cast<std::size_t>(t - 1)] = static_cast<Indicator>(at);
        a_prev2 = a_prev;
        a_prev = at;
        l_prev = lt;
      }
      r.y = censored ? 0 : y;
      records.push_back(std::move(r));
    }
  }
  return Dataset(std::move(records), kVisits);
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::unmeasured:
      return "unmeasured";
    case Scenario::cluster_adjusted:
      return "cluster_adjusted";
    case Scenario::fully_adjusted:
      return "fully_adjusted";
    case Scenario::transformed:
      return "transformed";
  }
  return "?";
}

Scenario parse_scenario(std::string_view name) {
  for (auto s : all_scenarios()) {
    if (to_string(s) == name) return s;
  }
  throw ArgumentError("unknown scenario '" + std::string(name) +
                      "' (valid: unmeasured, cluster_adjusted, fully_adjusted, transformed, all)");
}

std::vector<Scenario> all_scenarios() {
  return {Scenario::unmeasured, Scenario::cluster_adjusted, Scenario::fully_adjusted,
          Scenario::transformed};
}

std::pair<double, double> kang_transform(double w, double u) {
  const double ew = std::exp(std::clamp(w, -700.0, 700.0));
  return {std::exp(std::clamp(w / 2.0, -700.0, 700.0)), u / (1.0 + ew) + 10.0};
}

Dataset apply_scenario(const Dataset& full, Scenario s) {
  if (full.baseline_dim() != 2) throw ArgumentError("apply_scenario expects baseline columns (W, U)");
  const auto clusters = full.cluster_of();
  const auto m = static_cast<int>(full.cluster_count());
  std::vector<LongitudinalRecord> records = full.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    const double w = r.w[0], u = r.w[1];
    switch (s) {
      case Scenario::unmeasured:
        r.w = {w};
        break;
      case Scenario::cluster_adjusted:
        r.w.assign(static_cast<std::size_t>(m), 0.0);
        r.w[0] = w;
        if (clusters[i] > 0) r.w[static_cast<std::size_t>(clusters[i])] = 1.0;
        break;
      case Scenario::fully_adjusted:
        break;
      case Scenario::transformed: {
        const auto [ws, us] = kang_transform(w, u);
        r.w = {ws, us};
        break;
      }
    }
  }
  return Dataset(std::move(records), full.k());
}

namespace {

template <class F>
OracleValue monte_carlo(const DgpConfig& cfg, std::uint64_t n_mc, std::uint64_t seed, F&& value) {
  if (n_mc < 2) throw ArgumentError("oracle: n_mc must be at least 2");
  cfg.validate();
  // Cluster means are iid, so marginally W and U are centred normals.
  const double sw = std::hypot(cfg.w_cluster_sd, cfg.w_within_sd);
  const double su = std::hypot(cfg.u_cluster_sd, cfg.u_within_sd);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double mean = 0.0, m2 = 0.0;
  for (std::uint64_t i = 0; i < n_mc; ++i) {
    const double w = sw * normal(rng);
    const double u = su * normal(rng);
    const double v = value(w, u);
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  OracleValue out;
  out.value = mean;
  out.mc_se = std::sqrt(m2 / static_cast<double>(n_mc - 1) / static_cast<double>(n_mc));
  out.n_mc = n_mc;
  return out;
}

void check_oracle_regimen(const Regimen& r) {
  if (r.size() != kVisits - 1) throw ArgumentError("oracle: regimens must have length 2");
}

}  // namespace

OracleValue true_contrast_oracle(const DgpConfig& cfg, const Regimen& r1, const Regimen& r2,
                                 std::uint64_t n_mc, std::uint64_t seed) {
  check_oracle_regimen(r1);
  check_oracle_regimen(r2);
  return monte_carlo(cfg, n_mc, seed, [&](double w, double u) {
    return conditional_outcome(cfg, w, u, r1.at(1), r1.at(2)) -
           conditional_outcome(cfg, w, u, r2.at(1), r2.at(2));
  });
}

OracleValue true_value_oracle(const DgpConfig& cfg, const Regimen& reg, std::uint64_t n_mc,
                              std::uint64_t seed) {
  check_oracle_regimen(reg);
  return monte_carlo(cfg, n_mc, seed,
                     [&](double w, double u) { return conditional_outcome(cfg, w, u, reg.at(1), reg.at(2)); });
}

CalibrationResult calibrate(double target_delta, const DgpConfig& cfg0, const CalibrationOptions& opt) {
  cfg0.validate();
  if (!(opt.lo < opt.hi) || opt.hi > 0.0) throw ArgumentError("calibration bracket must satisfy lo < hi <= 0");
  const Regimen treated({1, 1}), untreated({0, 0});
  CalibrationResult res;
  res.config = cfg0;
  auto eval = [&](double beta) {
    DgpConfig c = cfg0;
    c.l_treatment = beta;
    const auto o = true_contrast_oracle(c, treated, untreated, opt.n_mc, opt.seed);
    res.trace.push_back("infection.treatment = " + csv::format_double(beta) +
                        " -> delta = " + csv::format_double(o.value));
    return o;
  };
  OracleValue o = eval(cfg0.l_treatment);
  if (std::abs(o.value - target_delta) < opt.tolerance) {
    res.oracle = o;
    return res;
  }
  res.searched = true;
  double lo = opt.lo, hi = opt.hi;
  const OracleValue olo = eval(lo), ohi = eval(hi);
  // delta increases with the coefficient.
  if (target_delta < olo.value || target_delta > ohi.value) {
    throw CalibrationError("target delta " + csv::format_double(target_delta) + " outside [" +
                               csv::format_double(olo.value) + ", " + csv::format_double(ohi.value) +
                               "] reachable with infection.treatment in [" + csv::format_double(lo) +
                               ", " + csv::format_double(hi) + "]",
                           res.trace);
  }
  double beta = hi;
  o = ohi;
  for (int it = 0; it < 200; ++it) {
    if (std::abs(o.value - target_delta) < opt.tolerance * 1e-3 || hi - lo < 1e-12) break;
    beta = 0.5 * (lo + hi);
    o = eval(beta);
    if (o.value < target_delta) {
      lo = beta;
    } else {
      hi = beta;
    }
  }
  if (std::abs(o.value - target_delta) >= opt.tolerance) {
    throw CalibrationError("calibration did not reach the tolerance", res.trace);
  }
  res.config.l_treatment = beta;
  res.oracle = o;
  return res;
}

std::string method_display_name(std::string_view label) {
  if (label == "gcomp") return "G-comp. (likelihood)";
  if (label == "gcomp-seq") return "G-comp. (sequential)";
  if (label == "iptw") return "IPTW";
  if (label == "tmle") return "Parametric TMLE";
  if (label == "sl-tmle") return "SL TMLE";
  return std::string(label);
}

MethodSpec simulation_method(std::string_view label) {
  MethodSpec m = method_spec(label);
  if (m.method == Method::gcomp) m.options.outcome_is_l_sum = true;
  return m;
}

ScenarioReport run_scenario(Scenario sc, const std::vector<std::string>& methods, const DgpConfig& cfg,
                            double truth, const SimulationOptions& opt) {
  if (opt.reps < 1) throw ArgumentError("reps must be at least 1");
  if (methods.empty()) throw ArgumentError("no methods requested");
  std::vector<MethodSpec> specs;
  for (const auto& m : methods) specs.push_back(simulation_method(m));
  const Regimen treated({1, 1}), untreated({0, 0});
  const auto nm = specs.size();
  std::vector<ReplicateRow> rows(static_cast<std::size_t>(opt.reps) * nm);

  parallel_for(static_cast<std::size_t>(opt.reps), opt.workers, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(opt.seed, r);
    const Dataset data = apply_scenario(generate_dataset(cfg, rep_seed), sc);
    for (std::size_t j = 0; j < nm; ++j) {
      ReplicateRow& row = rows[r * nm + j];
      row.replicate = static_cast<int>(r) + 1;
      row.method = specs[j].label;
      try {
        MethodSpec spec = specs[j];
        spec.options.seed = derive_seed(rep_seed, 7 + j);
        AnalysisOptions ao;
        ao.bootstrap = opt.bootstrap;
        ao.seed = derive_seed(rep_seed, 101 + j);
        ao.workers = 1;
        const auto res = analyze_contrast(data, spec, treated, untreated, ao);
        row.delta_hat = res.difference.psi_hat;
        row.se = res.difference.se;
        row.ci_lo = res.difference.ci_lo;
        row.ci_hi = res.difference.ci_hi;
        row.covered = row.ci_lo <= truth && truth <= row.ci_hi;
      } catch (const Error& e) {
        row.failed = true;
        row.message = e.what();
      }
    }
  });

  ScenarioReport rep;
  rep.scenario = sc;
  rep.truth = truth;
  rep.replicates = rows;
  for (std::size_t j = 0; j < nm; ++j) {
    MethodSummary s;
    s.method = specs[j].label;
    double sum = 0.0, var = 0.0, sq = 0.0;
    int covered = 0;
    for (int r = 0; r < opt.reps; ++r) {
      const auto& row = rows[static_cast<std::size_t>(r) * nm + j];
      if (row.failed) {
        ++s.failures;
        continue;
      }
      ++s.reps;
      sum += row.delta_hat;
      var += row.se * row.se;
      sq += (row.delta_hat - truth) * (row.delta_hat - truth);
      covered += row.covered ? 1 : 0;
    }
    if (s.failures > opt.max_failure_rate * opt.reps) {
      std::string first;
      for (int r = 0; r < opt.reps && first.empty(); ++r) {
        first = rows[static_cast<std::size_t>(r) * nm + j].message;
      }
      throw EstimationError(to_string(sc) + "/" + s.method + ": " + std::to_string(s.failures) + " of " +
                            std::to_string(opt.reps) + " replicates failed (first: " + first + ")");
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean_delta = s.reps ? sum / s.reps : nan;
    s.pct_bias = s.reps ? 100.0 * (s.mean_delta - truth) / std::abs(truth) : nan;
    s.se = s.reps ? std::sqrt(var / s.reps) : nan;
    s.rmse = s.reps ? std::sqrt(sq / s.reps) : nan;
    s.coverage = s.reps >= 2 ? 100.0 * covered / s.reps : nan;
    rep.rows.push_back(s);
  }
  return rep;
}

std::string ScenarioReport::to_csv() const {
  std::ostringstream out;
  out << "scenario,method,delta_hat,pct_bias,se,rmse,coverage,reps,failures,truth\n";
  for (const auto& r : rows) {
    out << to_string(scenario) << ',' << r.method << ',' << csv::format_double(r.mean_delta) << ','
        << csv::format_double(r.pct_bias) << ',' << csv::format_double(r.se) << ','
        << csv::format_double(r.rmse) << ',' << csv::format_double(r.coverage) << ',' << r.reps << ','
        << r.failures << ',' << csv::format_double(truth) << '\n';
  }
  return out.str();
}

std::string ScenarioReport::replicates_csv() const {
  std::ostringstream out;
  out << "scenario,replicate,method,delta_hat,se,ci_lo,ci_hi,covered,failed,message\n";
  for (const auto& r : replicates) {
    out << to_string(scenario) << ',' << r.replicate << ',' << r.method << ','
        << (r.failed ? "NA" : csv::format_double(r.delta_hat)) << ','
        << (r.failed ? "NA" : csv::format_double(r.se)) << ','
        << (r.failed ? "NA" : csv::format_double(r.ci_lo)) << ','
        << (r.failed ? "NA" : csv::format_double(r.ci_hi)) << ',' << (r.covered ? 1 : 0) << ','
        << (r.failed ? 1 : 0) << ',' << csv::escape(r.message) << '\n';
  }
  return out.str();
}

std::string ScenarioReport::to_table() const {
  const std::vector<std::string> head{"Method", "delta", "%bias", "SE", "rMSE", "Coverage"};
  std::vector<std::vector<std::string>> cells{head};
  for (const auto& r : rows) {
    cells.push_back({method_display_name(r.method), fmt(r.mean_delta, 3), fmt(r.pct_bias, 0), fmt(r.se, 3),
                     fmt(r.rmse, 3), fmt(r.coverage, 0)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  out << "Scenario: " << to_string(scenario) << " (true delta = " << fmt(truth, 3) << ")\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& s = cells[r][c];
      const std::string pad(width[c] - s.size(), ' ');
      out << (c ? "  " : "") << (c == 0 ? s + pad : pad + s);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cltmle
