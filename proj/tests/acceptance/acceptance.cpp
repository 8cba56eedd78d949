// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any selected criterion fails.
//
//   cltmle_acceptance [--criterion N]... [--workers W] [--reps R]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "cltmle/analysis.hpp"
#include "cltmle/csv.hpp"
#include "cltmle/estimators.hpp"
#include "cltmle/inference.hpp"
#include "cltmle/learners.hpp"
#include "cltmle/parallel.hpp"
#include "cltmle/simulation.hpp"
#include "oracles.hpp"
#include "unit/fixtures.hpp"

namespace fs = std::filesystem;
using namespace cltmle;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

struct Settings {
  int workers = 0;
  int reps_override = 0;  // 0 keeps each criterion's replicate count
};

int reps_or(const Settings& s, int fallback) { return s.reps_override > 0 ? s.reps_override : fallback; }

std::string fmt(double v, int digits = 3) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(digits);
  o << v;
  return o.str();
}

// ------------------------------------------------------------------ 1

void score_equations(const Settings&, Outcome& out) {
  double worst_component = 0.0, worst_total = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Dataset d = cltmle::testing::random_dataset(200, 3, 10, 1000 + seed);
    for (const Regimen& reg : {Regimen({1, 1}), Regimen({0, 0})}) {
      const auto prop = fit_propensity(d, reg, LearnerSpec::logistic());
      const OutcomeScaler scaler = make_scaler(d);
      const auto res = tmle(d, reg, prop, scaler);
      const auto ic = efficient_influence_curve(d, res.fits, prop, reg, res.report.psi_hat, scaler);
      for (Eigen::Index t = 0; t < ic.d_components.cols(); ++t) {
        worst_component = std::max(worst_component, std::abs(ic.d_components.col(t).mean()));
      }
      worst_total = std::max(worst_total, std::abs(ic.d_total.mean()));
    }
  }
  out.check(worst_component < 1e-8, "max |mean D_t| < 1e-8");
  out.check(worst_total < 1e-8, "max |mean D| < 1e-8");
  out.detail << "50 datasets x 2 regimens; max |mean D_t| = " << worst_component
             << ", max |mean D| = " << worst_total;
}

// ------------------------------------------------------------------ 2

void saturated_equivalence(const Settings&, Outcome& out) {
  EstimatorOptions opt;
  opt.q_learner = LearnerSpec::saturated_logistic(0.0);
  opt.l_learner = LearnerSpec::saturated_logistic(0.0);
  opt.g_learner = LearnerSpec::saturated_logistic(0.0);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = cltmle::testing::random_dataset(500, 2, 5, 300 + seed, true);
    for (const Regimen& reg : {Regimen({1}), Regimen({0})}) {
      const double truth = oracle::plugin_k2(d, reg);
      const double lik = gcomp_likelihood(d, reg, opt).psi_hat;
      const double seq = gcomp_sequential(d, reg, opt).psi_hat;
      const auto prop = fit_propensity(d, reg, opt.g_learner);
      const double tm = tmle(d, reg, prop, make_scaler(d), opt).report.psi_hat;
      for (double v : {lik, seq, tm}) worst = std::max(worst, std::abs(v - truth));
    }
  }
  out.check(worst < 1e-10, "all within 1e-10 of the plug-in");
  out.detail << "5 datasets x 2 regimens; max |estimate - plug-in| = " << worst;
}

// ------------------------------------------------------------------ 3

void double_robustness(const Settings& s, Outcome& out) {
  const DgpConfig cfg;  // 31 x 500
  const Regimen r1({1, 1}), r0({0, 0});
  const double truth = true_contrast_oracle(cfg, r1, r0, 1'000'000, 20240601).value;
  const int reps = reps_or(s, 200);
  std::vector<double> tm(static_cast<std::size_t>(reps)), gs(static_cast<std::size_t>(reps));
  EstimatorOptions opt;
  opt.q_learner = LearnerSpec::mean();
  opt.g_learner = LearnerSpec::logistic();
  parallel_for(static_cast<std::size_t>(reps), s.workers, [&](std::size_t r) {
    const Dataset d = apply_scenario(generate_dataset(cfg, derive_seed(33, r)), Scenario::fully_adjusted);
    const OutcomeScaler scaler = make_scaler(d);
    auto tmle_psi = [&](const Regimen& reg) {
      return tmle(d, reg, fit_propensity(d, reg, opt.g_learner), scaler, opt).report.psi_hat;
    };
    tm[r] = tmle_psi(r1) - tmle_psi(r0);
    gs[r] = gcomp_sequential(d, r1, opt).psi_hat - gcomp_sequential(d, r0, opt).psi_hat;
  });
  auto pct_bias = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    return 100.0 * (m - truth) / std::abs(truth);
  };
  const double bt = pct_bias(tm), bg = pct_bias(gs);
  out.check(std::abs(bt) < 15.0, "|TMLE %bias| < 15");
  out.check(std::abs(bg) > 50.0, "|G-comp (sequential) %bias| > 50");
  out.detail << reps << " reps at n=15500, intercept-only Q, logistic g; truth " << fmt(truth, 4)
             << "; TMLE %bias " << fmt(bt, 1) << ", G-comp (sequential) %bias " << fmt(bg, 1);
}

// ------------------------------------------------------------------ 4

// Tolerances widened by 1.5 for the reduced sample: bias bounds scale by 1.5
// (or 1/1.5 for lower bounds) and coverage bounds move their distance from the
// nominal 95 by the same factor.
constexpr double kWiden = 1.5;
double bias_at_most(double b) { return b * kWiden; }
double bias_at_least(double b) { return b / kWiden; }
double coverage_below(double c) { return 95.0 - (95.0 - c) / kWiden; }
double coverage_floor(double c) { return 95.0 - (95.0 - c) * kWiden; }
double coverage_ceiling(double c) { return 95.0 + (c - 95.0) * kWiden; }

void table4_patterns(const Settings& s, Outcome& out) {
  const DgpConfig base;
  DgpConfig cfg = base;
  cfg.per_cluster = 150;
  const double truth = true_contrast_oracle(base, Regimen({1, 1}), Regimen({0, 0}), 1'000'000, 20240601).value;
  out.check(std::abs(truth + 0.030) <= 0.002, "oracle delta within -0.030 +- 0.002");
  const std::vector<std::string> methods{"gcomp", "gcomp-seq", "iptw", "tmle", "sl-tmle"};
  SimulationOptions opt;
  opt.reps = reps_or(s, 200);
  opt.bootstrap = 200;
  opt.seed = 7;
  opt.workers = s.workers;
  std::map<std::string, std::map<std::string, MethodSummary>> res;
  std::ofstream tables("criterion4_tables.txt");
  for (Scenario sc : all_scenarios()) {
    const auto rep = run_scenario(sc, methods, cfg, truth, opt);
    tables << rep.to_table() << '\n';
    std::cout << rep.to_table() << std::flush;
    for (const auto& row : rep.rows) res[to_string(sc)][row.method] = row;
  }
  auto bias = [&](const char* sc, const char* m) { return std::abs(res[sc][m].pct_bias); };
  auto cov = [&](const char* sc, const char* m) { return res[sc][m].coverage; };
  auto name = [](const char* sc, const char* m, const char* what) {
    return std::string(sc) + "/" + m + " " + what;
  };
  for (const auto& m : methods) {
    out.check(bias("unmeasured", m.c_str()) >= bias_at_least(50), name("unmeasured", m.c_str(), "|%bias| >= 33.3"));
    out.check(bias("cluster_adjusted", m.c_str()) <= bias_at_most(25),
              name("cluster_adjusted", m.c_str(), "|%bias| <= 37.5"));
    const double c = cov("cluster_adjusted", m.c_str());
    out.check(c >= coverage_floor(85) && c <= coverage_ceiling(98),
              name("cluster_adjusted", m.c_str(), "coverage in [80, 99.5]"));
  }
  for (const char* m : {"gcomp", "gcomp-seq"}) {
    out.check(cov("unmeasured", m) < coverage_below(70), name("unmeasured", m, "coverage < 78.3"));
  }
  for (const char* m : {"iptw", "tmle"}) {
    out.check(bias("fully_adjusted", m) <= bias_at_most(15), name("fully_adjusted", m, "|%bias| <= 22.5"));
  }
  out.check(bias("transformed", "sl-tmle") < bias_at_most(20), "transformed/sl-tmle |%bias| < 30");
  out.check(cov("transformed", "sl-tmle") >= coverage_floor(85), "transformed/sl-tmle coverage >= 80");
  for (const char* m : {"tmle", "gcomp", "gcomp-seq"}) {
    out.check(bias("transformed", m) > bias_at_least(60), name("transformed", m, "|%bias| > 40"));
    out.check(cov("transformed", m) < coverage_below(60), name("transformed", m, "coverage < 71.7"));
  }
  out.detail << opt.reps << " reps, B=" << opt.bootstrap << ", 31x150, truth " << fmt(truth, 4)
             << "; tables in criterion4_tables.txt";
}

// ------------------------------------------------------------------ 5

void sandwich_formula(const Settings&, Outcome& out) {
  Eigen::VectorXd ic(4);
  ic << 1, -1, 2, 0;
  const std::vector<int> cl{0, 0, 1, 1};
  const double worked = clustered_sandwich(ic, cl).sigma2;
  out.check(worked == 0.25, "worked example equals 0.25");
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> norm(0.0, 1.0);
  double worst = 0.0;
  int compared = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int m = 1 + rep % 15;
    const int n = 10 + 3 * rep;
    std::uniform_int_distribution<int> pick(0, m - 1);
    Eigen::VectorXd d(n);
    std::vector<int> of(static_cast<std::size_t>(n));
    std::vector<double> shift(static_cast<std::size_t>(m));
    for (auto& v : shift) v = norm(rng);
    for (int i = 0; i < n; ++i) {
      of[static_cast<std::size_t>(i)] = pick(rng);
      d(i) = norm(rng) + shift[static_cast<std::size_t>(of[static_cast<std::size_t>(i)])];
    }
    const auto v = clustered_sandwich(d, of);
    if (v.floored) continue;
    const double ref = oracle::sandwich_double_loop(d, of);
    worst = std::max(worst, std::abs(v.sigma2 - ref) / std::max(1.0, std::abs(ref)));
    ++compared;
  }
  out.check(compared == 100, "no fixture floored");
  out.check(worst < 1e-12, "double-loop agreement to 1e-12");
  out.detail << "worked example " << worked << "; " << compared << " fixtures, max deviation " << worst;
}

// ------------------------------------------------------------------ 6

void ci_arithmetic(const Settings&, Outcome& out) {
  const auto [lo, hi] = wald_ci(-0.048, 0.018);
  const double rlo = std::round(lo * 1000) / 1000, rhi = std::round(hi * 1000) / 1000;
  out.check(rlo == -0.083 && rhi == -0.013, "(-0.048, 0.018) -> (-0.083, -0.013)");
  // The reported interval follows from an unrounded se that rounds to 0.018.
  bool consistent = false;
  for (double se = 0.0175; se < 0.0185; se += 1e-5) {
    const auto [a, b] = wald_ci(-0.048, se);
    if (std::round(a * 1000) == -84 && std::round(b * 1000) == -12) consistent = true;
  }
  out.check(consistent, "(-0.084, -0.012) reachable with se rounding to 0.018");
  out.detail << "(" << fmt(lo, 4) << ", " << fmt(hi, 4) << ") -> (" << fmt(rlo) << ", " << fmt(rhi) << ")";
}

// ------------------------------------------------------------------ 7

void learner_correctness(const Settings&, Outcome& out) {
  TrainingSet t2;
  t2.x.resize(8, 1);
  t2.x << 0, 0, 0, 0, 1, 1, 1, 1;
  t2.y.resize(8);
  t2.y << 1, 0, 0, 0, 1, 1, 1, 0;
  const auto f = fit_logistic_irls(t2, std::nullopt, 0.0);
  const double e0 = std::abs(f.logistic()->coef(0) - std::log(1.0 / 3.0));
  const double e1 = std::abs(f.logistic()->coef(1) - std::log(9.0));
  out.check(e0 < 1e-6 && e1 < 1e-6, "2x2 log-odds to 1e-6");

  std::mt19937_64 rng(7);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst_grad = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    TrainingSet ts;
    ts.x = Eigen::MatrixXd::NullaryExpr(80, 3, [&] { return norm(rng); });
    ts.y = Eigen::VectorXd::NullaryExpr(80, [&] { return unif(rng); });
    ts.weights = Eigen::VectorXd::NullaryExpr(80, [&] { return 0.5 + unif(rng); });
    const Eigen::VectorXd off = Eigen::VectorXd::NullaryExpr(80, [&] { return 0.3 * norm(rng); });
    const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(4, [&] { return norm(rng); });
    const double ridge = rep % 2 ? 0.5 : 0.0;
    const auto g = logistic_penalized_score(ts, &off, b, ridge, true);
    for (Eigen::Index j = 0; j < 4; ++j) {
      Eigen::VectorXd up = b, dn = b;
      up(j) += 1e-5;
      dn(j) -= 1e-5;
      const double fd = (logistic_penalized_loglik(ts, &off, up, ridge, true) -
                         logistic_penalized_loglik(ts, &off, dn, ridge, true)) / 2e-5;
      worst_grad = std::max(worst_grad, std::abs(fd - g(j)) / std::max(1.0, std::abs(g(j))));
    }
  }
  out.check(worst_grad < 1e-6, "gradient vs central differences, relative 1e-6");

  TrainingSet sl;
  sl.x = Eigen::MatrixXd::NullaryExpr(400, 2, [&] { return norm(rng); });
  sl.y = (sl.x.col(0) - 0.5 * sl.x.col(1)).unaryExpr([&](double e) { return unif(rng) < expit(e) ? 1.0 : 0.0; });
  const auto one = fit_super_learner(sl, {LearnerSpec::logistic()}, {});
  out.check(one.ensemble()->alpha.size() == 1 && one.ensemble()->alpha(0) == 1.0, "single member alpha = (1)");
  const auto three = fit_super_learner(sl, {LearnerSpec::logistic(), LearnerSpec::knn(20), LearnerSpec::mean()}, {});
  const auto& a = three.ensemble()->alpha;
  out.check(std::abs(a.sum() - 1.0) < 1e-12 && a.minCoeff() >= 0.0, "weights on the simplex");
  out.check(three.ensemble()->ensemble_cv_risk <= three.ensemble()->member_cv_risk.minCoeff() + 1e-10,
            "ensemble CV risk <= best member");
  out.detail << "2x2 errors " << e0 << ", " << e1 << "; max gradient rel. error " << worst_grad << "; alpha = ("
             << fmt(a(0)) << ", " << fmt(a(1)) << ", " << fmt(a(2)) << ")";
}

// ------------------------------------------------------------------ 8

void coverage_calibration(const Settings& s, Outcome& out) {
  DgpConfig cfg;
  cfg.per_cluster = 100;
  const double truth =
      true_contrast_oracle(DgpConfig{}, Regimen({1, 1}), Regimen({0, 0}), 1'000'000, 20240601).value;
  SimulationOptions opt;
  opt.reps = reps_or(s, 2000);
  opt.bootstrap = 0;
  opt.seed = 88;
  opt.workers = s.workers;
  const auto rep = run_scenario(Scenario::fully_adjusted, {"tmle"}, cfg, truth, opt);
  const double c = rep.rows.at(0).coverage;
  out.check(c >= 90.0 && c <= 98.0, "TMLE coverage in [90, 98]");
  out.detail << opt.reps << " reps at 31x100; coverage " << fmt(c, 1) << "%, %bias " << fmt(rep.rows[0].pct_bias, 1);
}

// ------------------------------------------------------------------ 9

std::map<std::string, std::string> numeric_csvs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[e.path().filename().string()] = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  return files;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cltmle");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  return cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink);
}

void determinism(const Settings&, Outcome& out) {
  const fs::path root = fs::absolute("determinism");
  fs::remove_all(root);
  fs::create_directories(root);
  DgpConfig small;
  small.clusters = 12;
  small.per_cluster = 40;
  write_dataset_csv(apply_scenario(generate_dataset(small, 3), Scenario::fully_adjusted), root / "data.csv");
  std::ofstream(root / "dgp.ini") << small.to_kv().to_ini();

  struct Case {
    std::string name;
    std::function<std::vector<std::string>(const std::string& out, const std::string& workers)> args;
  };
  const std::vector<Case> cases{
      {"estimate",
       [&](const std::string& o, const std::string& w) {
         return std::vector<std::string>{"estimate", "--data", (root / "data.csv").string(), "--method",
                                         "gcomp,gcomp-seq,iptw,tmle,sl-tmle", "--contrast", "[1,1] vs [0,0]",
                                         "--bootstrap", "30", "--seed", "11", "--workers", w, "--out", o};
       }},
      {"simulate",
       [&](const std::string& o, const std::string& w) {
         return std::vector<std::string>{"simulate", "--dgp", (root / "dgp.ini").string(), "--scenario", "all",
                                         "--reps", "3", "--bootstrap", "10", "--method",
                                         "gcomp,gcomp-seq,iptw,tmle,sl-tmle", "--seed", "11", "--workers", w,
                                         "--out", o};
       }},
  };
  int compared = 0;
  for (const auto& c : cases) {
    std::map<std::string, std::string> first;
    int run = 0;
    for (const char* w : {"1", "1", "4"}) {
      const fs::path dir = root / (c.name + std::to_string(run++));
      const int status = run_cli(c.args(dir.string(), w));
      out.check(status == 0, c.name + " exits 0");
      const auto files = numeric_csvs(dir);
      out.check(!files.empty(), c.name + " wrote CSV output");
      if (first.empty()) {
        first = files;
      } else {
        out.check(files == first, c.name + " CSVs byte-identical (workers " + w + ")");
        compared += static_cast<int>(files.size());
      }
    }
  }
  // Calibration writes the frozen DGP; compare it across reruns.
  std::ofstream(root / "cal.ini") << "[calibrate]\noracle_mc = 100000\n";
  std::string dgp_text[2];
  for (int r = 0; r < 2; ++r) {
    const fs::path dir = root / ("calibrate" + std::to_string(r));
    out.check(run_cli({"calibrate", "--config", (root / "cal.ini").string(), "--target", "-0.03", "--out",
                       dir.string()}) == 0,
              "calibrate exits 0");
    std::ifstream in(dir / "dgp.ini", std::ios::binary);
    dgp_text[r] = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  out.check(!dgp_text[0].empty() && dgp_text[0] == dgp_text[1], "calibrate output byte-identical");
  out.detail << compared << " CSV files compared across reruns and worker counts (1, 1, 4)";
}

}  // namespace

int main(int argc, char** argv) {
  Settings settings;
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto value = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::cerr << a << " needs a value\n";
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--criterion") {
      selected.push_back(std::stoi(value()));
    } else if (a == "--workers") {
      settings.workers = std::stoi(value());
    } else if (a == "--reps") {
      settings.reps_override = std::stoi(value());
    } else {
      std::cerr << "usage: cltmle_acceptance [--criterion N]... [--workers W] [--reps R]\n";
      return 2;
    }
  }
  settings.workers = resolve_workers(settings.workers);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::map<int, std::pair<std::string, std::function<void(const Settings&, Outcome&)>>> criteria{
      {1, {"score equations", score_equations}},
      {2, {"saturated-model oracle equivalence", saturated_equivalence}},
      {3, {"double robustness", double_robustness}},
      {4, {"simulation table patterns", table4_patterns}},
      {5, {"clustered variance formula", sandwich_formula}},
      {6, {"CI arithmetic", ci_arithmetic}},
      {7, {"learner correctness", learner_correctness}},
      {8, {"coverage calibration", coverage_calibration}},
      {9, {"determinism", determinism}},
  };
  bool all = true;
  for (int c : selected) {
    const auto it = criteria.find(c);
    if (it == criteria.end()) {
      std::cerr << "no criterion " << c << '\n';
      return 2;
    }
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      it->second.second(settings, o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c << " (" << it->second.first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail.str() << " [" << fmt(secs, 1) << " s]" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
