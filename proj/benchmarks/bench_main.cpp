#include <benchmark/benchmark.h>

#include <Eigen/Core>
#include <cmath>

#include "mortfc/evaluation.hpp"
#include "mortfc/fts.hpp"
#include "mortfc/gapc.hpp"
#include "mortfc/lee_carter.hpp"
#include "mortfc/mcs.hpp"
#include "mortfc/rng.hpp"
#include "mortfc/smoothing.hpp"

namespace {

using namespace mortfc;

MortalityDataset synthetic_dataset(int k, int n) {
  MortalityDataset ds;
  ds.population_label = "bench";
  ds.sex = Sex::female;
  for (int i = 0; i < k; ++i) ds.ages.push_back(60 + i);
  for (int j = 0; j < n; ++j) ds.years.push_back(1975 + j);
  ds.open_age_group = true;
  ds.deaths.resize(k, n);
  ds.exposures = Eigen::MatrixXd::Constant(k, n, 1e5);
  ds.rates.resize(k, n);
  RngStream rng(12);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      const double eta = -5.0 + 0.07 * i - 0.015 * j + 0.02 * rng.normal();
      ds.rates(i, j) = std::exp(eta);
      ds.deaths(i, j) = std::round(ds.rates(i, j) * 1e5);
    }
  }
  return ds;
}

LossPanel synthetic_panel(int m, int N) {
  LossPanel p;
  RngStream rng(5);
  for (int r = 0; r < m; ++r) p.model_labels.push_back(r + 1);
  for (int o = 0; o < N; ++o) p.origin_years.push_back(1990 + o);
  p.losses.resize(m, N);
  for (int r = 0; r < m; ++r)
    for (int o = 0; o < N; ++o) p.losses(r, o) = 10.0 + 0.1 * r + rng.normal();
  return p;
}

void bm_fit_lc(benchmark::State& state) {
  const MortalityDataset ds = synthetic_dataset(41, 31);
  for (auto _ : state) {
    const LcFit fit = fit_lc(ds, LcAdjustment::refit_total_deaths);
    benchmark::DoNotOptimize(fit.kappa.sum());
  }
}
BENCHMARK(bm_fit_lc);

void bm_fit_gapc(benchmark::State& state) {
  const MortalityDataset ds = synthetic_dataset(41, 31);
  const GapcSpec spec = gapc_spec(static_cast<GapcModel>(state.range(0)));
  for (auto _ : state) {
    const GapcFit fit = fit_gapc(spec, ds);
    benchmark::DoNotOptimize(fit.deviance_trace.back());
  }
  state.SetLabel(to_string(spec.model));
}
BENCHMARK(bm_fit_gapc)->DenseRange(0, 7);

void bm_smooth_gcv(benchmark::State& state) {
  const MortalityDataset ds = synthetic_dataset(101, 31);
  for (auto _ : state) {
    const LogRateSurface s = smooth_log_rates(ds, SmoothOptions{});
    benchmark::DoNotOptimize(s.values.sum());
  }
}
BENCHMARK(bm_smooth_gcv);

void bm_fpca(benchmark::State& state) {
  const MortalityDataset ds = synthetic_dataset(41, 31);
  const LogRateSurface s = smooth_log_rates(ds, 10.0, false);
  for (auto _ : state) {
    const FtsFit fit = fpca(s, 6);
    benchmark::DoNotOptimize(fit.scores.sum());
  }
}
BENCHMARK(bm_fpca);

void bm_run_mcs(benchmark::State& state) {
  const LossPanel panel = synthetic_panel(17, static_cast<int>(state.range(0)));
  McsConfig cfg;
  cfg.n_bootstrap = 1000;
  cfg.seed = 7;
  for (auto _ : state) {
    const McsResult r = run_mcs(panel, cfg);
    benchmark::DoNotOptimize(r.superior_set.size());
  }
}
BENCHMARK(bm_run_mcs)->Arg(10)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
