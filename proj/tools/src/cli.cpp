#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cltmle/analysis.hpp"
#include "cltmle/csv.hpp"
#include "cltmle/data.hpp"
#include "cltmle/error.hpp"
#include "cltmle/kv_config.hpp"
#include "cltmle/learners.hpp"
#include "cltmle/parallel.hpp"
#include "cltmle/simulation.hpp"
#include "cltmle/version.hpp"

namespace fs = std::filesystem;

namespace cltmle::cli {
namespace {

constexpr int kConfigVersion = 1;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// "a, b" or "[a, b]"
std::vector<std::string> parse_name_list(const std::string& s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  return split(t, ',');
}

std::pair<Regimen, Regimen> parse_contrast(const std::string& s) {
  std::string left, right;
  if (const auto vs = s.find(" vs "); vs != std::string::npos) {
    left = s.substr(0, vs);
    right = s.substr(vs + 4);
  } else if (const auto colon = s.find(':'); colon != std::string::npos) {
    left = s.substr(0, colon);
    right = s.substr(colon + 1);
  } else {
    throw UsageError("contrast '" + s + "' must read '<regimen> vs <regimen>'");
  }
  return {Regimen::parse(trim(left)), Regimen::parse(trim(right))};
}

void check_methods(const std::vector<std::string>& methods) {
  if (methods.empty()) throw UsageError("no method given");
  const auto known = known_method_labels();
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw UsageError("unknown method '" + m + "' (valid: " + join(known, ", ") + ")");
    }
  }
}

fs::path resolve_against(const fs::path& base, const std::string& value) {
  if (value.empty()) return {};
  fs::path p(value);
  return p.is_absolute() || base.empty() ? p : (base / p).lexically_normal();
}

// Config values are read through these so every type error is a usage error.
template <typename F>
auto typed(const std::string& key, F&& get) {
  try {
    return get();
  } catch (const Error& e) {
    throw UsageError(key + ": " + e.what());
  }
}

// Files of one command. Everything is written into a staging directory and
// moved into place only after all files exist, so an interrupted run leaves no
// report in the output directory.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string contents) {
    files_.emplace_back(name, std::move(contents));
  }

  void commit() {
    fs::create_directories(dir_);
    const fs::path staging = dir_ / ".staging";
    fs::remove_all(staging);
    fs::create_directories(staging);
    for (const auto& [name, text] : files_) {
      std::ofstream out(staging / name, std::ios::binary | std::ios::trunc);
      out.write(text.data(), static_cast<std::streamsize>(text.size()));
      if (!out) throw Error("cannot write " + (staging / name).string());
    }
    if (const char* crash = std::getenv("CLTMLE_CRASH_BEFORE_COMMIT"); crash && std::string(crash) == "1") {
      std::fflush(nullptr);
      std::_Exit(70);
    }
    for (const auto& [name, text] : files_) fs::rename(staging / name, dir_ / name);
    fs::remove_all(staging);
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string version_file() { return "cltmle " + version_string() + "\n"; }

std::string interval_name(IntervalKind k) {
  switch (k) {
    case IntervalKind::wald:
      return "wald";
    case IntervalKind::percentile:
      return "percentile";
    case IntervalKind::none:
      break;
  }
  return "none";
}

std::string fixed(double v, int decimals) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

double parse_number(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error("not a number: '" + s + "'");
}

// ------------------------------------------------------------ tables

struct EstimateRow {
  std::string method;
  std::string target;
  double estimate = 0.0, se = 0.0, lo = 0.0, hi = 0.0;
};

std::string aligned(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      line += (c ? "  " : "") + (c == 0 ? row[c] + pad : pad + row[c]);
    }
    out << trim(line) << '\n';
  }
  return out.str();
}

// Method, Estimate, S.E., 95% C.I.; one block per target.
std::string estimates_table(const std::vector<EstimateRow>& rows) {
  std::vector<std::string> targets;
  for (const auto& r : rows) {
    if (std::find(targets.begin(), targets.end(), r.target) == targets.end()) targets.push_back(r.target);
  }
  std::ostringstream out;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (b) out << '\n';
    out << targets[b] << '\n';
    std::vector<std::vector<std::string>> cells{{"Method", "Estimate", "S.E.", "95% C.I."}};
    for (const auto& r : rows) {
      if (r.target != targets[b]) continue;
      cells.push_back({method_display_name(r.method), fixed(r.estimate, 3), fixed(r.se, 3),
                       "(" + fixed(r.lo, 3) + ", " + fixed(r.hi, 3) + ")"});
    }
    out << aligned(cells);
  }
  return out.str();
}

// ------------------------------------------------------------ estimate

struct EstimateConfig {
  fs::path data, schema;
  bool long_format = false;
  bool drop_incomplete_baseline = false;
  std::vector<std::string> methods{"tmle"};
  std::vector<std::string> regimens;
  std::vector<std::string> contrasts;
  std::string learners, q_learner, g_learner, l_learner;
  double truncation = 0.005;
  std::string conditioning = "subset";
  int bootstrap = 200;
  std::uint64_t seed = 0;
  int workers = 0;
  fs::path out = "cltmle-out";

  static EstimateConfig from(const KvConfig& kv, const fs::path& base) {
    kv.reject_unknown({"config_version", "estimate.data", "estimate.schema", "estimate.long_format",
                       "estimate.drop_incomplete_baseline", "estimate.methods", "estimate.regimens",
                       "estimate.contrasts", "estimate.learners", "estimate.q_learner", "estimate.g_learner",
                       "estimate.l_learner", "estimate.truncation", "estimate.conditioning",
                       "estimate.bootstrap", "estimate.seed", "estimate.workers", "estimate.out"});
    EstimateConfig c;
    c.data = resolve_against(base, kv.get_string("estimate.data", ""));
    c.schema = resolve_against(base, kv.get_string("estimate.schema", ""));
    c.long_format = typed("long_format", [&] { return kv.get_bool("estimate.long_format", false); });
    c.drop_incomplete_baseline =
        typed("drop_incomplete_baseline", [&] { return kv.get_bool("estimate.drop_incomplete_baseline", false); });
    if (kv.has("estimate.methods")) c.methods = parse_name_list(*kv.get("estimate.methods"));
    c.regimens = split(kv.get_string("estimate.regimens", ""), ';');
    c.contrasts = split(kv.get_string("estimate.contrasts", ""), ';');
    c.learners = kv.get_string("estimate.learners", "");
    c.q_learner = kv.get_string("estimate.q_learner", "");
    c.g_learner = kv.get_string("estimate.g_learner", "");
    c.l_learner = kv.get_string("estimate.l_learner", "");
    c.truncation = typed("truncation", [&] { return kv.get_double("estimate.truncation", 0.005); });
    c.conditioning = kv.get_string("estimate.conditioning", "subset");
    c.bootstrap = typed("bootstrap", [&] { return kv.get_int("estimate.bootstrap", 200); });
    c.seed = typed("seed", [&] { return kv.get_u64("estimate.seed", 0); });
    c.workers = typed("workers", [&] { return kv.get_int("estimate.workers", 0); });
    c.out = resolve_against(base, kv.get_string("estimate.out", "cltmle-out"));
    c.validate();
    return c;
  }

  void validate() const {
    if (data.empty()) throw UsageError("estimate: no dataset given (estimate.data or --data)");
    check_methods(methods);
    if (regimens.empty() && contrasts.empty()) throw UsageError("estimate: give at least one regimen or contrast");
    try {
      for (const auto& r : regimens) Regimen::parse(r);
      for (const auto& c : contrasts) parse_contrast(c);
      for (const auto* l : {&learners, &q_learner, &g_learner, &l_learner}) {
        if (!l->empty()) parse_learner_list(*l);
      }
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
    if (!(truncation >= 0.0 && truncation < 1.0)) throw UsageError("truncation must lie in [0,1)");
    if (conditioning != "subset" && conditioning != "pooled") {
      throw UsageError("conditioning must be subset or pooled");
    }
    if (bootstrap < 0 || bootstrap == 1) throw UsageError("bootstrap must be 0 or at least 2");
    if (workers < 0) throw UsageError("workers must be nonnegative");
  }

  KvConfig resolved() const {
    KvConfig kv;
    kv.set("config_version", std::to_string(kConfigVersion));
    kv.set("estimate.data", data.string());
    kv.set("estimate.schema", schema.string());
    kv.set("estimate.long_format", long_format ? "true" : "false");
    kv.set("estimate.drop_incomplete_baseline", drop_incomplete_baseline ? "true" : "false");
    kv.set("estimate.methods", join(methods, ", "));
    kv.set("estimate.regimens", join(regimens, "; "));
    kv.set("estimate.contrasts", join(contrasts, "; "));
    kv.set("estimate.learners", learners);
    kv.set("estimate.q_learner", q_learner);
    kv.set("estimate.g_learner", g_learner);
    kv.set("estimate.l_learner", l_learner);
    kv.set("estimate.truncation", csv::format_double(truncation));
    kv.set("estimate.conditioning", conditioning);
    kv.set("estimate.bootstrap", std::to_string(bootstrap));
    kv.set("estimate.seed", std::to_string(seed));
    kv.set("estimate.workers", std::to_string(workers));
    kv.set("estimate.out", out.string());
    return kv;
  }

  MethodSpec method(const std::string& label) const {
    EstimatorOptions base;
    base.truncation = truncation;
    base.conditioning = conditioning == "pooled" ? Conditioning::pooled : Conditioning::subset;
    base.seed = seed;
    MethodSpec m = method_spec(label, base);
    if (!learners.empty()) {
      const auto l = parse_learner_list(learners);
      m.options.q_learner = m.options.g_learner = m.options.l_learner = l;
    }
    if (!q_learner.empty()) m.options.q_learner = parse_learner_list(q_learner);
    if (!g_learner.empty()) m.options.g_learner = parse_learner_list(g_learner);
    if (!l_learner.empty()) m.options.l_learner = parse_learner_list(l_learner);
    return m;
  }
};

int cmd_estimate(const EstimateConfig& cfg, std::ostream& out) {
  CsvSchema schema;
  if (!cfg.schema.empty()) schema = CsvSchema::from_file(cfg.schema);
  LoadOptions lo;
  lo.long_format = cfg.long_format;
  lo.drop_incomplete_baseline = cfg.drop_incomplete_baseline;
  auto loaded = load_dataset(cfg.data, schema, lo);
  const Dataset d = impute_after_censoring(loaded.dataset);

  AnalysisOptions ao;
  ao.bootstrap = cfg.bootstrap;
  ao.seed = cfg.seed;
  ao.workers = resolve_workers(cfg.workers);

  std::ostringstream est, diag;
  est << "method,target,estimate,se,ci_lo,ci_hi,interval,n,clusters,bootstrap_replicates,bootstrap_failures\n";
  for (const auto& s : loaded.dropped_subjects) diag << "dropped_subject = " << s << '\n';
  std::vector<EstimateRow> rows;
  auto emit = [&](const std::string& label, const EstimateReport& r) {
    est << label << ',' << csv::escape(r.target) << ',' << csv::format_double(r.psi_hat) << ','
        << csv::format_double(r.se) << ',' << csv::format_double(r.ci_lo) << ','
        << csv::format_double(r.ci_hi) << ',' << interval_name(r.interval) << ',' << d.size() << ','
        << d.cluster_count() << ',' << r.replicates.size() << ',' << r.bootstrap_failures << '\n';
    const std::string prefix = label + "." + r.target + ".";
    for (const auto& [k, v] : r.diagnostics) diag << prefix << k << " = " << csv::format_double(v) << '\n';
    for (const auto& w : r.warnings) diag << prefix << "warning = " << w << '\n';
    rows.push_back({label, r.target, r.psi_hat, r.se, r.ci_lo, r.ci_hi});
  };
  for (const auto& label : cfg.methods) {
    const MethodSpec m = cfg.method(label);
    for (const auto& r : cfg.regimens) emit(label, analyze(d, m, Regimen::parse(r), ao));
    for (const auto& c : cfg.contrasts) {
      const auto [r1, r2] = parse_contrast(c);
      const auto res = analyze_contrast(d, m, r1, r2, ao);
      emit(label, res.first);
      emit(label, res.second);
      emit(label, res.difference);
    }
  }

  const std::string table = estimates_table(rows);
  OutputSet files(cfg.out);
  files.add("estimates.csv", est.str());
  files.add("diagnostics.txt", diag.str());
  files.add("table.txt", table);
  files.add("resolved-config.ini", cfg.resolved().to_ini("cltmle " + version_string()));
  files.add("VERSION", version_file());
  files.commit();
  out << table;
  return kOk;
}

// ------------------------------------------------------------ simulate

struct SimulateConfig {
  fs::path dgp;
  std::vector<std::string> scenarios;  // resolved names
  std::string scenario = "all";
  std::vector<std::string> methods = known_method_labels();
  int reps = 200;
  int bootstrap = 200;
  std::uint64_t seed = 0;
  int workers = 0;
  int per_cluster = 0;  // 0 keeps the DGP file's value
  std::string truth;    // empty: computed by the oracle
  std::uint64_t oracle_mc = 1'000'000;
  std::uint64_t oracle_seed = 20240601;
  double max_failure_rate = 0.05;
  fs::path out = "cltmle-out";

  static SimulateConfig from(const KvConfig& kv, const fs::path& base) {
    kv.reject_unknown({"config_version", "simulate.dgp", "simulate.scenario", "simulate.methods",
                       "simulate.reps", "simulate.bootstrap", "simulate.seed", "simulate.workers",
                       "simulate.per_cluster", "simulate.truth", "simulate.oracle_mc", "simulate.oracle_seed",
                       "simulate.max_failure_rate", "simulate.out"});
    SimulateConfig c;
    c.dgp = resolve_against(base, kv.get_string("simulate.dgp", ""));
    c.scenario = kv.get_string("simulate.scenario", "all");
    if (kv.has("simulate.methods")) c.methods = parse_name_list(*kv.get("simulate.methods"));
    c.reps = typed("reps", [&] { return kv.get_int("simulate.reps", 200); });
    c.bootstrap = typed("bootstrap", [&] { return kv.get_int("simulate.bootstrap", 200); });
    c.seed = typed("seed", [&] { return kv.get_u64("simulate.seed", 0); });
    c.workers = typed("workers", [&] { return kv.get_int("simulate.workers", 0); });
    c.per_cluster = typed("per_cluster", [&] { return kv.get_int("simulate.per_cluster", 0); });
    c.truth = kv.get_string("simulate.truth", "");
    c.oracle_mc = typed("oracle_mc", [&] { return kv.get_u64("simulate.oracle_mc", 1'000'000); });
    c.oracle_seed = typed("oracle_seed", [&] { return kv.get_u64("simulate.oracle_seed", 20240601); });
    c.max_failure_rate = typed("max_failure_rate", [&] { return kv.get_double("simulate.max_failure_rate", 0.05); });
    c.out = resolve_against(base, kv.get_string("simulate.out", "cltmle-out"));
    c.validate();
    return c;
  }

  void validate() {
    check_methods(methods);
    scenarios.clear();
    if (scenario == "all") {
      for (auto s : all_scenarios()) scenarios.push_back(to_string(s));
    } else {
      for (const auto& s : parse_name_list(scenario)) {
        try {
          scenarios.push_back(to_string(parse_scenario(s)));
        } catch (const ArgumentError& e) {
          throw UsageError(e.what());
        }
      }
    }
    if (scenarios.empty()) throw UsageError("no scenario given");
    if (reps < 1) throw UsageError("reps must be at least 1");
    if (bootstrap < 2) throw UsageError("bootstrap must be at least 2");
    if (workers < 0) throw UsageError("workers must be nonnegative");
    if (per_cluster < 0) throw UsageError("per_cluster must be nonnegative");
    if (!truth.empty()) {
      try {
        parse_number(truth);
      } catch (const Error& e) {
        throw UsageError(std::string("truth: ") + e.what());
      }
    }
    if (oracle_mc < 1) throw UsageError("oracle_mc must be positive");
    if (!(max_failure_rate >= 0.0 && max_failure_rate <= 1.0)) {
      throw UsageError("max_failure_rate must lie in [0,1]");
    }
  }

  KvConfig resolved() const {
    KvConfig kv;
    kv.set("config_version", std::to_string(kConfigVersion));
    kv.set("simulate.dgp", dgp.string());
    kv.set("simulate.scenario", scenario);
    kv.set("simulate.methods", join(methods, ", "));
    kv.set("simulate.reps", std::to_string(reps));
    kv.set("simulate.bootstrap", std::to_string(bootstrap));
    kv.set("simulate.seed", std::to_string(seed));
    kv.set("simulate.workers", std::to_string(workers));
    kv.set("simulate.per_cluster", std::to_string(per_cluster));
    kv.set("simulate.truth", truth);
    kv.set("simulate.oracle_mc", std::to_string(oracle_mc));
    kv.set("simulate.oracle_seed", std::to_string(oracle_seed));
    kv.set("simulate.max_failure_rate", csv::format_double(max_failure_rate));
    kv.set("simulate.out", out.string());
    return kv;
  }
};

DgpConfig load_dgp(const fs::path& path) {
  if (path.empty()) return DgpConfig{};
  try {
    return DgpConfig::load(path);
  } catch (const ArgumentError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

int cmd_simulate(const SimulateConfig& cfg, std::ostream& out) {
  DgpConfig dgp = load_dgp(cfg.dgp);
  if (cfg.per_cluster > 0) dgp.per_cluster = cfg.per_cluster;
  dgp.validate();
  double truth = 0.0;
  if (cfg.truth.empty()) {
    truth = true_contrast_oracle(dgp, Regimen({1, 1}), Regimen({0, 0}), cfg.oracle_mc, cfg.oracle_seed).value;
  } else {
    truth = parse_number(cfg.truth);
  }
  SimulationOptions so;
  so.reps = cfg.reps;
  so.bootstrap = cfg.bootstrap;
  so.seed = cfg.seed;
  so.workers = resolve_workers(cfg.workers);
  so.max_failure_rate = cfg.max_failure_rate;

  OutputSet files(cfg.out);
  std::string tables;
  for (const auto& name : cfg.scenarios) {
    const Scenario sc = parse_scenario(name);
    const ScenarioReport rep = run_scenario(sc, cfg.methods, dgp, truth, so);
    files.add("simulation_" + name + ".csv", rep.to_csv());
    files.add("simulation_" + name + ".txt", rep.to_table());
    files.add("replicates_" + name + ".csv", rep.replicates_csv());
    tables += (tables.empty() ? "" : "\n") + rep.to_table();
  }
  files.add("dgp.ini", dgp.to_kv().to_ini("data-generating process used by this run"));
  files.add("resolved-config.ini", cfg.resolved().to_ini("cltmle " + version_string()));
  files.add("VERSION", version_file());
  files.commit();
  out << tables;
  return kOk;
}

// ------------------------------------------------------------ calibrate

struct CalibrateConfig {
  fs::path dgp;
  double target = -0.030;
  double tolerance = 0.002;
  double lo = -3.0, hi = 0.0;
  std::uint64_t oracle_mc = 1'000'000;
  std::uint64_t seed = 20240601;
  fs::path out = "cltmle-out";

  static CalibrateConfig from(const KvConfig& kv, const fs::path& base) {
    kv.reject_unknown({"config_version", "calibrate.dgp", "calibrate.target", "calibrate.tolerance",
                       "calibrate.lo", "calibrate.hi", "calibrate.oracle_mc", "calibrate.seed", "calibrate.out"});
    CalibrateConfig c;
    c.dgp = resolve_against(base, kv.get_string("calibrate.dgp", ""));
    c.target = typed("target", [&] { return kv.get_double("calibrate.target", -0.030); });
    c.tolerance = typed("tolerance", [&] { return kv.get_double("calibrate.tolerance", 0.002); });
    c.lo = typed("lo", [&] { return kv.get_double("calibrate.lo", -3.0); });
    c.hi = typed("hi", [&] { return kv.get_double("calibrate.hi", 0.0); });
    c.oracle_mc = typed("oracle_mc", [&] { return kv.get_u64("calibrate.oracle_mc", 1'000'000); });
    c.seed = typed("seed", [&] { return kv.get_u64("calibrate.seed", 20240601); });
    c.out = resolve_against(base, kv.get_string("calibrate.out", "cltmle-out"));
    if (!(c.tolerance > 0.0)) throw UsageError("tolerance must be positive");
    if (!(c.lo < c.hi)) throw UsageError("calibration bracket needs lo < hi");
    if (c.oracle_mc < 1) throw UsageError("oracle_mc must be positive");
    return c;
  }

  KvConfig resolved() const {
    KvConfig kv;
    kv.set("config_version", std::to_string(kConfigVersion));
    kv.set("calibrate.dgp", dgp.string());
    kv.set("calibrate.target", csv::format_double(target));
    kv.set("calibrate.tolerance", csv::format_double(tolerance));
    kv.set("calibrate.lo", csv::format_double(lo));
    kv.set("calibrate.hi", csv::format_double(hi));
    kv.set("calibrate.oracle_mc", std::to_string(oracle_mc));
    kv.set("calibrate.seed", std::to_string(seed));
    kv.set("calibrate.out", out.string());
    return kv;
  }
};

int cmd_calibrate(const CalibrateConfig& cfg, std::ostream& out) {
  const DgpConfig cfg0 = load_dgp(cfg.dgp);
  CalibrationOptions co;
  co.tolerance = cfg.tolerance;
  co.lo = cfg.lo;
  co.hi = cfg.hi;
  co.n_mc = cfg.oracle_mc;
  co.seed = cfg.seed;
  const CalibrationResult res = calibrate(cfg.target, cfg0, co);

  std::ostringstream header;
  header << "calibrated to delta = " << csv::format_double(cfg.target) << " +- "
         << csv::format_double(cfg.tolerance) << '\n'
         << "oracle delta = " << csv::format_double(res.oracle.value)
         << " (MC se " << csv::format_double(res.oracle.mc_se) << ", n_mc " << res.oracle.n_mc
         << ", seed " << cfg.seed << ")\n"
         << (res.searched ? "infection.treatment found by bisection" : "verified without search");
  std::ostringstream trace;
  for (const auto& t : res.trace) trace << t << '\n';

  OutputSet files(cfg.out);
  files.add("dgp.ini", res.config.to_kv().to_ini(header.str()));
  files.add("calibration-trace.txt", trace.str());
  files.add("resolved-config.ini", cfg.resolved().to_ini("cltmle " + version_string()));
  files.add("VERSION", version_file());
  files.commit();
  out << (res.searched ? "calibrated" : "verified") << ": oracle delta = " << fixed(res.oracle.value, 4)
      << " (MC se " << fixed(res.oracle.mc_se, 6) << ")\n";
  return kOk;
}

// ------------------------------------------------------------ report

int cmd_report(const fs::path& input, const std::string& out_dir, std::ostream& out) {
  if (!fs::is_directory(input)) throw UsageError("report: " + input.string() + " is not a directory");
  std::string text;
  const fs::path est = input / "estimates.csv";
  if (fs::exists(est)) {
    const auto t = csv::read(est);
    const int cm = t.column("method"), ct = t.column("target"), ce = t.column("estimate"),
              cs = t.column("se"), cl = t.column("ci_lo"), ch = t.column("ci_hi");
    if (std::min({cm, ct, ce, cs, cl, ch}) < 0) throw SchemaError("estimates.csv: missing columns");
    std::vector<EstimateRow> rows;
    for (const auto& r : t.rows) {
      rows.push_back({r[cm], r[ct], parse_number(r[ce]), parse_number(r[cs]), parse_number(r[cl]),
                      parse_number(r[ch])});
    }
    text += estimates_table(rows);
  }
  std::vector<fs::path> sims;
  for (const auto& entry : fs::directory_iterator(input)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("simulation_", 0) == 0 && entry.path().extension() == ".csv") sims.push_back(entry.path());
  }
  std::sort(sims.begin(), sims.end());
  for (const auto& path : sims) {
    const auto t = csv::read(path);
    const std::vector<std::string> need{"scenario", "method", "delta_hat", "pct_bias", "se",
                                        "rmse",     "coverage", "reps",   "failures", "truth"};
    std::vector<int> col;
    for (const auto& n : need) {
      col.push_back(t.column(n));
      if (col.back() < 0) throw SchemaError(path.filename().string() + ": missing column " + n);
    }
    if (t.rows.empty()) continue;
    ScenarioReport rep;
    rep.scenario = parse_scenario(t.rows.front()[col[0]]);
    rep.truth = parse_number(t.rows.front()[col[9]]);
    for (const auto& r : t.rows) {
      MethodSummary m;
      m.method = r[col[1]];
      m.mean_delta = parse_number(r[col[2]]);
      m.pct_bias = parse_number(r[col[3]]);
      m.se = parse_number(r[col[4]]);
      m.rmse = parse_number(r[col[5]]);
      m.coverage = parse_number(r[col[6]]);
      m.reps = static_cast<int>(parse_number(r[col[7]]));
      m.failures = static_cast<int>(parse_number(r[col[8]]));
      rep.rows.push_back(m);
    }
    text += (text.empty() ? "" : "\n") + rep.to_table();
  }
  if (text.empty()) throw UsageError("report: no estimates.csv or simulation_*.csv in " + input.string());
  if (!out_dir.empty()) {
    OutputSet files(out_dir);
    files.add("report.txt", text);
    files.add("VERSION", version_file());
    files.commit();
  }
  out << text;
  return kOk;
}

// ------------------------------------------------------------ driver

struct Flags {
  std::string config, out, data, schema, dgp, scenario, input;
  std::vector<std::string> methods, regimens, contrasts;
  int bootstrap = 0, reps = 0, workers = 0, per_cluster = 0;
  std::uint64_t seed = 0;
  double target = 0.0;
};

void write_error_report(const std::string& out_dir, const std::string& kind, const std::string& message,
                        const std::vector<std::string>& details, int status) {
  if (out_dir.empty()) return;
  std::ostringstream text;
  text << "status = " << status << "\nkind = " << kind << "\nmessage = " << message << '\n';
  for (const auto& d : details) text << "detail = " << d << '\n';
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!ec) {
    try {
      csv::write_atomic(fs::path(out_dir) / "error.txt", text.str());
    } catch (const Error&) {
    }
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Targeted maximum likelihood and G-computation for clustered longitudinal data", "cltmle"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cltmle " + version_string());
  Flags f;

  auto add_run_flags = [&f](CLI::App* sub, bool methods) {
    sub->add_option("--config", f.config, "INI run configuration; flags override its keys");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "master seed");
    if (methods) {
      sub->add_option("--method", f.methods, "method label (repeatable or comma separated)")->delimiter(',')->allow_extra_args(false);
      sub->add_option("--bootstrap", f.bootstrap, "cluster bootstrap replicates for G-computation");
      sub->add_option("--workers", f.workers, "worker threads (0 = all cores)");
    }
  };

  auto* est = app.add_subcommand("estimate", "estimate counterfactual means and contrasts from a dataset");
  add_run_flags(est, true);
  est->add_option("--data", f.data, "dataset CSV");
  est->add_option("--schema", f.schema, "column mapping file");
  est->add_option("--regimen", f.regimens, "regimen such as [1,1,0] (repeatable)")->allow_extra_args(false);
  est->add_option("--contrast", f.contrasts, "contrast such as '[1,1] vs [0,0]' (repeatable)")->allow_extra_args(false);

  auto* sim = app.add_subcommand("simulate", "run the simulation study");
  add_run_flags(sim, true);
  sim->add_option("--dgp", f.dgp, "data-generating process config");
  sim->add_option("--scenario", f.scenario, "scenario name or 'all'");
  sim->add_option("--reps", f.reps, "replicates per scenario");
  sim->add_option("--per-cluster", f.per_cluster, "subjects per cluster (overrides the DGP file)");

  auto* cal = app.add_subcommand("calibrate", "calibrate the DGP to a target contrast");
  add_run_flags(cal, false);
  cal->add_option("--dgp", f.dgp, "starting data-generating process config");
  cal->add_option("--target", f.target, "target difference (1,1) - (0,0)");

  auto* rep = app.add_subcommand("report", "render tables from a previous run's CSV output");
  rep->add_option("input", f.input, "output directory of an estimate or simulate run")->required();
  rep->add_option("--out", f.out, "directory for report.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  std::string out_dir = f.out;
  try {
    if (rep->parsed()) return cmd_report(f.input, f.out, out);

    const std::string section = est->parsed() ? "estimate" : sim->parsed() ? "simulate" : "calibrate";
    CLI::App* sub = est->parsed() ? est : sim->parsed() ? sim : cal;
    KvConfig kv;
    fs::path base;
    if (!f.config.empty()) {
      try {
        kv = KvConfig::load(f.config);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      base = fs::path(f.config).parent_path();
      if (kv.has("config_version") &&
          typed("config_version", [&] { return kv.get_int("config_version", kConfigVersion); }) != kConfigVersion) {
        throw UsageError("unsupported config_version (expected " + std::to_string(kConfigVersion) + ")");
      }
    }
    // Flags are relative to the working directory, file keys to the file.
    auto set_path = [&](const std::string& key, const std::string& v) {
      kv.set(section + "." + key, fs::absolute(v).lexically_normal().string());
    };
    auto given = [&](const char* name) { return sub->count(name) > 0; };
    if (given("--out")) set_path("out", f.out);
    if (given("--seed")) kv.set(section + ".seed", std::to_string(f.seed));
    if (section != "calibrate") {
      if (given("--method")) kv.set(section + ".methods", join(f.methods, ", "));
      if (given("--bootstrap")) kv.set(section + ".bootstrap", std::to_string(f.bootstrap));
      if (given("--workers")) kv.set(section + ".workers", std::to_string(f.workers));
    }
    if (section == "estimate") {
      if (given("--data")) set_path("data", f.data);
      if (given("--schema")) set_path("schema", f.schema);
      if (given("--regimen")) kv.set("estimate.regimens", join(f.regimens, "; "));
      if (given("--contrast")) kv.set("estimate.contrasts", join(f.contrasts, "; "));
    } else {
      if (given("--dgp")) set_path("dgp", f.dgp);
    }
    if (section == "simulate") {
      if (given("--scenario")) kv.set("simulate.scenario", f.scenario);
      if (given("--reps")) kv.set("simulate.reps", std::to_string(f.reps));
      if (given("--per-cluster")) kv.set("simulate.per_cluster", std::to_string(f.per_cluster));
    }
    if (section == "calibrate" && given("--target")) kv.set("calibrate.target", csv::format_double(f.target));

    auto as_usage = [](auto&& make) {
      try {
        return make();
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
    };
    if (section == "estimate") {
      const auto c = as_usage([&] { return EstimateConfig::from(kv, base); });
      out_dir = c.out.string();
      return cmd_estimate(c, out);
    }
    if (section == "simulate") {
      const auto c = as_usage([&] { return SimulateConfig::from(kv, base); });
      out_dir = c.out.string();
      return cmd_simulate(c, out);
    }
    const auto c = as_usage([&] { return CalibrateConfig::from(kv, base); });
    out_dir = c.out.string();
    return cmd_calibrate(c, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CalibrationError& e) {
    err << "calibration failed: " << e.what() << '\n';
    for (const auto& t : e.trace()) err << "  " << t << '\n';
    write_error_report(out_dir, "calibration", e.what(), e.trace(), kCalibration);
    return kCalibration;
  } catch (const ValidationError& e) {
    err << "invalid data: " << e.what() << '\n';
    for (const auto& i : e.issues()) err << "  " << i << '\n';
    write_error_report(out_dir, "validation", e.what(), e.issues(), kRuntime);
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    write_error_report(out_dir, "runtime", e.what(), {}, kRuntime);
    return kRuntime;
  }
}

}  // namespace cltmle::cli
