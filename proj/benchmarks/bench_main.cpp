#include <random>

#include <benchmark/benchmark.h>

#include "cltmle/estimators.hpp"
#include "cltmle/inference.hpp"
#include "cltmle/learners.hpp"
#include "cltmle/simulation.hpp"

using namespace cltmle;

namespace {

TrainingSet logistic_data(Eigen::Index n, Eigen::Index p) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TrainingSet ts;
  ts.x = Eigen::MatrixXd::NullaryExpr(n, p, [&] { return norm(rng); });
  ts.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) ts.y(i) = unif(rng) < expit(0.5 * ts.x.row(i).sum()) ? 1.0 : 0.0;
  return ts;
}

Dataset simulated(int per_cluster) {
  DgpConfig cfg;
  cfg.per_cluster = per_cluster;
  return apply_scenario(generate_dataset(cfg, 5), Scenario::fully_adjusted);
}

}  // namespace

static void BM_LogisticIrls(benchmark::State& state) {
  const auto ts = logistic_data(state.range(0), 6);
  for (auto _ : state) benchmark::DoNotOptimize(fit_logistic_irls(ts, std::nullopt, 1e-6));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LogisticIrls)->Arg(1000)->Arg(15500);

static void BM_KnnPredict(benchmark::State& state) {
  const auto ts = logistic_data(state.range(0), 3);
  const auto f = fit_learner(ts, LearnerSpec::knn(30));
  for (auto _ : state) benchmark::DoNotOptimize(predict(f, ts.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KnnPredict)->Arg(1000)->Arg(15500);

static void BM_SuperLearner(benchmark::State& state) {
  const auto ts = logistic_data(4650, 3);
  const auto lib = {LearnerSpec::logistic(), LearnerSpec::knn(30), LearnerSpec::mean()};
  for (auto _ : state) benchmark::DoNotOptimize(fit_super_learner(ts, lib, {}));
}
BENCHMARK(BM_SuperLearner)->Unit(benchmark::kMillisecond);

static void BM_Tmle(benchmark::State& state) {
  const Dataset d = simulated(static_cast<int>(state.range(0)));
  const Regimen reg({1, 1});
  const auto scaler = make_scaler(d);
  for (auto _ : state) {
    const auto prop = fit_propensity(d, reg, LearnerSpec::logistic());
    benchmark::DoNotOptimize(tmle(d, reg, prop, scaler));
  }
}
BENCHMARK(BM_Tmle)->Arg(150)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_GcompLikelihood(benchmark::State& state) {
  const Dataset d = simulated(static_cast<int>(state.range(0)));
  EstimatorOptions opt;
  opt.outcome_is_l_sum = true;
  for (auto _ : state) benchmark::DoNotOptimize(gcomp_likelihood(d, Regimen({1, 1}), opt));
}
BENCHMARK(BM_GcompLikelihood)->Arg(150)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_ClusteredSandwich(benchmark::State& state) {
  const Dataset d = simulated(500);
  const auto cl = d.cluster_of();
  const Eigen::VectorXd ic = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(d.size()), -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(clustered_sandwich(ic, cl));
}
BENCHMARK(BM_ClusteredSandwich);
BENCHMARK_MAIN();
