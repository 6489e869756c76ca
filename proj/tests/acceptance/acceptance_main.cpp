// Acceptance suite: one pass/fail line per criterion. Run with no arguments
// for the full set or with a criterion number (1..11) for a single one.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mortfc/combination.hpp"
#include "mortfc/evaluation.hpp"
#include "mortfc/forecast.hpp"
#include "mortfc/gapc.hpp"
#include "mortfc/lee_carter.hpp"
#include "mortfc/mcs.hpp"
#include "mortfc/rng.hpp"
#include "mortfc/stats.hpp"
#include "pipeline.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace mortfc;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& msg) {
  if (!cond) throw Failure(msg);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- criterion 1: LC exact recovery on a rank-1 surface -------------------

void criterion_1() {
  const auto t0 = Clock::now();
  const auto s = testutil::make_rank1_surface(41, 31);
  const MortalityDataset ds = testutil::dataset_from_log_rates(s.ages, s.years, s.log_rates);
  const LcFit fit = fit_lc(ds, LcAdjustment::none);
  require((fit.alpha - s.alpha).cwiseAbs().maxCoeff() < 1e-8, "alpha not recovered to 1e-8");
  require((fit.beta - s.beta).cwiseAbs().maxCoeff() < 1e-8, "beta not recovered to 1e-8");
  require((fit.kappa - s.kappa).cwiseAbs().maxCoeff() < 1e-8, "kappa not recovered to 1e-8");
  require(seconds_since(t0) < 1.0, "runtime exceeded 1 s");
}

// ---- criterion 2: GAPC correctness ----------------------------------------

void criterion_2() {
  const auto t0 = Clock::now();

  // CBD simulation at exposure 1e6.
  const int k = 41, n = 31;
  const auto ages = testutil::age_range(60, 100);
  std::vector<int> years;
  for (int j = 0; j < n; ++j) years.push_back(1975 + j);
  const double xbar = 80.0;
  Eigen::MatrixXd eta(k, n);
  for (int j = 0; j < n; ++j) {
    const double f = static_cast<double>(j) / (n - 1);
    const double k1 = -3.2 - 0.45 * f + 0.02 * std::sin(2.0 * j);
    const double k2 = 0.085 + 0.012 * f + 0.0006 * std::cos(1.3 * j);
    for (int i = 0; i < k; ++i) eta(i, j) = k1 + (ages[i] - xbar) * k2;
  }
  const MortalityDataset ds = testutil::poisson_dataset(ages, years, eta, 1e6, 4242);
  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::cbd), ds);
  const double rmse =
      std::sqrt((fit.fitted_log_rates - eta).squaredNorm() / static_cast<double>(eta.size()));
  require(rmse < 1e-2, "CBD fitted log rates RMSE " + std::to_string(rmse) + " >= 1e-2");

  // Ascent property across the family on random small datasets.
  for (int seed = 1; seed <= 50; ++seed) {
    const MortalityDataset small = testutil::random_small_dataset(seed);
    for (GapcModel model : {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc, GapcModel::cbd,
                            GapcModel::m6, GapcModel::m7, GapcModel::m8, GapcModel::plat}) {
      const GapcFit f = fit_gapc(gapc_spec(model), small, 1e-6, 80);
      for (std::size_t i = 1; i < f.deviance_trace.size(); ++i)
        require(f.deviance_trace[i] <=
                    f.deviance_trace[i - 1] + 1e-8 * (1.0 + std::abs(f.deviance_trace[i - 1])),
                to_string(model) + ": deviance increased at cycle " + std::to_string(i));
    }
  }
  require(seconds_since(t0) < 30.0, "runtime exceeded 30 s");
}

// ---- criterion 3: constraint suite ----------------------------------------

void criterion_3() {
  // A surface rich enough for every term: CBD base plus cohort wiggle.
  const int k = 21, n = 18;
  const auto ages = testutil::age_range(60, 80);
  std::vector<int> years;
  for (int j = 0; j < n; ++j) years.push_back(1988 + j);
  const double xbar = 70.0;
  Eigen::MatrixXd eta(k, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < k; ++i)
      eta(i, j) = -3.4 - 0.02 * j + (ages[i] - xbar) * (0.05 + 0.001 * j) +
                  0.05 * std::sin(0.4 * (j - i));
  const MortalityDataset ds = testutil::poisson_dataset(ages, years, eta, 1e5, 99);

  for (GapcModel model : {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc, GapcModel::cbd,
                          GapcModel::m6, GapcModel::m7, GapcModel::m8, GapcModel::plat}) {
    const GapcFit raw = fit_gapc(gapc_spec(model), ds, 1e-6, 300, /*identify=*/false);
    const GapcFit post = apply_identifiability(raw);
    require((post.fitted_log_rates - raw.fitted_log_rates).cwiseAbs().maxCoeff() < 1e-10,
            to_string(model) + ": identifiability transform moved eta beyond 1e-10");
    for (const auto& [name, resid] : gapc_constraint_residuals(post))
      require(std::abs(resid) < 1e-8,
              to_string(model) + ": constraint " + name + " residual " + std::to_string(resid));
  }

  // Lee-Carter family: sum(beta) = 1 and sum(raw kappa) = 0.
  auto s = testutil::make_rank1_surface(21, 18);
  RngStream rng(5);
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 18; ++j) s.log_rates(i, j) += 0.03 * rng.normal();
  const MortalityDataset lcds = testutil::dataset_from_log_rates(s.ages, s.years, s.log_rates);
  for (LcAdjustment adj : {LcAdjustment::none, LcAdjustment::refit_total_deaths,
                           LcAdjustment::fit_e0, LcAdjustment::fit_death_distribution}) {
    const LcFit fit = fit_lc(lcds, adj);
    require(std::abs(fit.beta.sum() - 1.0) < 1e-8, "LC sum(beta) != 1");
    require(std::abs(fit.kappa_raw.sum()) < 1e-8, "LC sum(kappa) != 0");
  }
}

// ---- criterion 4: scoring oracles -----------------------------------------

void criterion_4() {
  require(interval_score(0.0, 1.0, 0.5, 0.2) == 1.0, "covered case != width");
  require(interval_score(0.0, 1.0, 1.5, 0.2) == 6.0, "upper miss != 6");
  require(interval_score(0.0, 1.0, -0.2, 0.2) == 3.0, "lower miss != 3");
  const std::vector<double> y = {-3.1, -2.9, -2.5};
  require(mean_interval_score(y, y, y, 0.2) == 0.0, "zero-width truthful intervals != 0");
  require(rmsfe(y, y) == 0.0, "perfect forecast RMSFE != 0");
}

// ---- criteria 5-7: MCS power, size, invariances ----------------------------

LossPanel gaussian_panel(const Eigen::VectorXd& means, int N, std::uint64_t seed) {
  RngStream rng(seed);
  LossPanel p;
  for (int m = 0; m < means.size(); ++m) p.model_labels.push_back(m + 1);
  for (int o = 0; o < N; ++o) p.origin_years.push_back(2000 + o);
  p.losses.resize(means.size(), N);
  for (int m = 0; m < means.size(); ++m)
    for (int o = 0; o < N; ++o) p.losses(m, o) = means(m) + rng.normal();
  p.loss_kind = LossKind::rmsfe;
  return p;
}

void criterion_5() {
  const auto t0 = Clock::now();
  Eigen::VectorXd means(4);
  means << 10.0, 11.0, 11.0, 11.0;
  int singleton_tmax = 0, singleton_tr = 0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    const LossPanel panel = gaussian_panel(means, 200, 100000 + rep);
    for (McsStatistic stat : {McsStatistic::t_max, McsStatistic::t_r}) {
      McsConfig cfg;
      cfg.statistic = stat;
      cfg.confidence = 0.90;
      cfg.n_bootstrap = 1000;
      cfg.seed = 7000 + rep;
      const McsResult r = run_mcs(panel, cfg);
      if (r.superior_set == std::vector<int>{1})
        (stat == McsStatistic::t_max ? singleton_tmax : singleton_tr)++;
    }
  }
  require(singleton_tmax >= 48,
          "T_max singleton rate " + std::to_string(singleton_tmax) + "/50 < 95%");
  require(singleton_tr >= 48, "T_R singleton rate " + std::to_string(singleton_tr) + "/50 < 95%");
  require(seconds_since(t0) < 120.0, "runtime exceeded 2 min");
}

void criterion_6() {
  const Eigen::VectorXd means = Eigen::VectorXd::Constant(5, 12.0);
  int kept_all = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const LossPanel panel = gaussian_panel(means, 200, 200000 + rep);
    McsConfig cfg;
    cfg.confidence = 0.90;
    cfg.n_bootstrap = 1000;
    cfg.seed = 5000 + rep;
    kept_all += run_mcs(panel, cfg).superior_set.size() == 5;
  }
  require(kept_all >= 170, "null retention " + std::to_string(kept_all) + "/200 < 0.85");
}

void criterion_7() {
  Eigen::VectorXd means(4);
  means << 10.0, 10.5, 11.0, 11.3;
  const LossPanel base = gaussian_panel(means, 150, 777);
  McsConfig cfg;
  cfg.n_bootstrap = 1000;
  cfg.seed = 99;
  const McsResult r0 = run_mcs(base, cfg);
  for (double c : {0.1, 100.0}) {
    LossPanel scaled = base;
    scaled.losses *= c;
    const McsResult rc = run_mcs(scaled, cfg);
    require(rc.superior_set == r0.superior_set, "superior set changed under loss scale");
    require(rc.trace.size() == r0.trace.size(), "elimination count changed under loss scale");
    for (std::size_t i = 0; i < rc.trace.size(); ++i)
      require(rc.trace[i].eliminated_label == r0.trace[i].eliminated_label,
              "elimination order changed under loss scale");
  }
  McsConfig cfg8 = cfg;
  cfg8.n_threads = 8;
  const McsResult r8 = run_mcs(base, cfg8);
  require(r8.superior_set == r0.superior_set, "superior set differs across worker counts");
  require(r8.mcs_p_values == r0.mcs_p_values, "p-values differ across worker counts");
}

// ---- criterion 8: coverage calibration -------------------------------------

void criterion_8() {
  const int k = 41, n = 31, reps = 500;
  const auto base = testutil::make_rank1_surface(k, n);
  const double drift = -0.8, sigma_kappa = 2.0;
  Eigen::VectorXd noise_sd(k);
  for (int i = 0; i < k; ++i) noise_sd(i) = 0.01 + 0.015 * i / (k - 1.0);

  int covered = 0, total = 0;
  for (int rep = 0; rep < reps; ++rep) {
    RngStream rng(31000 + rep);
    Eigen::VectorXd kappa(n + 1);
    kappa(0) = 0.0;
    for (int j = 1; j <= n; ++j) kappa(j) = kappa(j - 1) + drift + sigma_kappa * rng.normal();
    Eigen::MatrixXd lm(k, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < k; ++i)
        lm(i, j) = base.alpha(i) + base.beta(i) * kappa(j) + noise_sd(i) * rng.normal();

    const MortalityDataset ds = testutil::dataset_from_log_rates(base.ages, base.years, lm);
    const LcFit fit = fit_lc(ds, LcAdjustment::none);
    const ForecastResult fc = forecast_lc(fit, 1, 0.2);

    for (int i = 0; i < k; ++i) {
      const double truth = base.alpha(i) + base.beta(i) * kappa(n) + noise_sd(i) * rng.normal();
      covered += (truth >= fc.lower(i, 0) && truth <= fc.upper(i, 0));
      ++total;
    }
  }
  const double rate = static_cast<double>(covered) / total;
  require(rate >= 0.76 && rate <= 0.84,
          "empirical coverage " + std::to_string(rate) + " outside [0.76, 0.84]");
}

// ---- criterion 9: product-ratio coherence -----------------------------------

void criterion_9() {
  const int k = 41, n = 25;
  RngStream rng(606);
  Eigen::MatrixXd female(k, n), male(k, n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      const double basev = -5.0 + 0.07 * i - 0.02 * j;
      female(i, j) = basev + 0.04 * rng.normal();
      male(i, j) = basev + 0.4 + 0.04 * rng.normal();
    }
  LogRateSurface fs, ms;
  fs.ages = ms.ages = testutil::age_range(60, 100);
  for (int j = 0; j < n; ++j) fs.years.push_back(1985 + j);
  ms.years = fs.years;
  fs.values = female;
  ms.values = male;
  fs.weights = ms.weights = Eigen::MatrixXd::Ones(k, n);

  const CoherentFit fit = product_ratio_fit(fs, ms, 6);
  const int h = 10;
  const SexForecasts fc = forecast_product_ratio(fit, h, 0.2);
  const ForecastResult ratio = forecast_fts(fit.ratio_fit, h, 0.2, 0);
  const double tol = 64.0 * std::numeric_limits<double>::epsilon() * 10.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < h; ++j) {
      const double diff = (fc.male.point(i, j) - fc.female.point(i, j)) - 2.0 * ratio.point(i, j);
      require(std::abs(diff) < tol, "coherence identity off by " + std::to_string(diff));
    }
}

// ---- criterion 10: pipeline shape -------------------------------------------

int count_lines(const std::string& text) {
  int c = 0;
  for (char ch : text)
    if (ch == '\n') ++c;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Failure("missing output " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_10() {
  testutil::TempDir tmp("accept10");
  testutil::write_synthetic_hmd(tmp.path() / "fd.txt", tmp.path() / "fe.txt", 1975, 2015, 10);
  testutil::write_synthetic_hmd(tmp.path() / "md.txt", tmp.path() / "me.txt", 1975, 2015, 10);

  pipeline::PipelineConfig cfg;
  cfg.female_deaths = (tmp.path() / "fd.txt").string();
  cfg.female_exposures = (tmp.path() / "fe.txt").string();
  cfg.male_deaths = (tmp.path() / "md.txt").string();
  cfg.male_exposures = (tmp.path() / "me.txt").string();
  cfg.population_label = "Synthia";
  cfg.train_end = 1995;
  cfg.validation_end = 2005;
  cfg.test_end = 2015;
  for (int m = 1; m <= 17; ++m) cfg.models.push_back(m);
  cfg.n_bootstrap = 400;
  cfg.n_sim = 300;
  cfg.seed = 20240601;
  cfg.output_dir = (tmp.path() / "out").string();

  std::ostringstream log;
  const int status =
      pipeline::run_pipeline(cfg, pipeline::Stage::all, pipeline::PopulationFilter::both, log);
  require(status == 0, "pipeline exited with status " + std::to_string(status) + "\n" + log.str());
  const fs::path out = cfg.output_dir;

  // Ten one-step origins, 1995..2004, in each validation panel.
  for (const char* sex : {"female", "male"})
    for (const char* kind : {"point", "interval"}) {
      const std::string text =
          slurp(out / ("losses_" + std::string(kind) + "_Synthia_" + sex + ".csv"));
      require(count_lines(text) == 1 + 17 * 10,
              std::string("panel ") + kind + "/" + sex + " is not 17 models x 10 origins");
    }

  // One superior set per (population, statistic) and loss kind.
  for (const char* kind : {"point", "interval"})
    for (const char* stat : {"tmax", "tr"}) {
      const std::string table =
          slurp(out / ("superior_sets_" + std::string(kind) + "_" + stat + ".csv"));
      require(count_lines(table) == 2, "superior-set table must have one population row");
    }

  // Nineteen summary rows per sex with errors x100.
  const std::string summary = slurp(out / "forecast_summary.csv");
  require(count_lines(summary) == 1 + 2 * 19, "summary is not 19 rows per sex");

  // The x100 convention, checked against an independent recomputation of the
  // deterministic model 12 (no simulation enters its forecasts).
  std::map<std::string, double> summary_rmsfe;
  {
    std::istringstream in(summary);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string series, model, rmsfe_nat;
      std::getline(ss, series, ',');
      std::getline(ss, model, ',');
      std::getline(ss, rmsfe_nat, ',');
      summary_rmsfe[series + ":" + model] = std::stod(rmsfe_nat);
    }
  }
  std::vector<std::string> warn;
  MortalityDataset female_raw =
      load_hmd_table(cfg.female_deaths, cfg.female_exposures, "Synthia", Sex::female, &warn);
  const MortalityDataset female = truncate_ages(female_raw, 60, 100);
  double loss_sum = 0.0;
  int origins = 0;
  for (int T = 2005; T + 1 <= 2015; ++T) {
    const MortalityDataset win = window_years(female, female.years.front(), T);
    const LcFit fit = fit_lc(win, LcAdjustment::none);
    const ForecastResult fc = forecast_lc(fit, 1, 0.2);
    std::vector<double> actual, point;
    const int target = female.year_index(T + 1);
    for (int i = 0; i < female.n_ages(); ++i) {
      actual.push_back(std::log(female.rates(i, target)));
      point.push_back(fc.point(i, 0));
    }
    loss_sum += rmsfe(actual, point);
    ++origins;
  }
  const double expected_x100 = 100.0 * loss_sum / origins;
  const double got = summary_rmsfe.at("female:12");
  require(std::abs(got - expected_x100) < 1e-6 * (1.0 + std::abs(expected_x100)),
          "summary model-12 RMSFE " + std::to_string(got) + " != 100x recomputed " +
              std::to_string(expected_x100));
}

// ---- criterion 11: combination sanity ----------------------------------------

void criterion_11() {
  {
    const std::vector<int> labels = {1, 2};
    const std::vector<double> losses = {1.0, 3.0};
    const CombinationWeights w = inverse_error_weights(labels, losses);
    require(std::abs(w.weights(0) - 0.75) < 1e-12 && std::abs(w.weights(1) - 0.25) < 1e-12,
            "inverse-error weights for (1,3) are not (0.75, 0.25)");
  }

  // A dominating model: its forecasts equal the realized curves; the others
  // carry constant biases.
  const int n_origins = 12, k = 5;
  WindowForecasts wf;
  wf.model_labels = {1, 2, 3};
  wf.model_ok = {1, 1, 1};
  wf.ages = testutil::age_range(60, 64);
  wf.forecasts.resize(3);
  RngStream rng(14);
  for (int o = 0; o < n_origins; ++o) {
    wf.origins.push_back(1990 + o);
    Eigen::VectorXd realized(k);
    for (int i = 0; i < k; ++i) realized(i) = -4.0 + 0.1 * i + 0.2 * rng.normal();
    wf.realized.push_back(realized);
    const double bias[3] = {0.0, 1.0, -2.0};
    for (int m = 0; m < 3; ++m) {
      ForecastResult r;
      r.model_label = m + 1;
      r.ages = wf.ages;
      r.h = 1;
      r.alpha = 0.2;
      r.point = realized.array() + bias[m];
      r.lower = r.point.array() - 0.1;
      r.upper = r.point.array() + 0.1;
      wf.forecasts[m].push_back(r);
    }
  }
  const LossPanel panel = loss_panel(wf, LossKind::rmsfe);
  McsConfig cfg;
  cfg.n_bootstrap = 500;
  cfg.seed = 3;
  const McsResult mcs = run_mcs(panel, cfg);
  require(mcs.superior_set == std::vector<int>{1}, "dominating model not selected");

  const CombinationWeights equal = equal_weights(mcs.superior_set);
  const std::vector<int> pool = {1, 2, 3};
  const CombinationWeights pool_avg = equal_weights(pool);
  double combined_loss = 0.0, pool_loss = 0.0;
  for (int o = 0; o < n_origins; ++o) {
    std::vector<ForecastResult> members = {wf.forecasts[0][o]};
    const ForecastResult comb = combine_forecasts(members, equal, 18);
    std::vector<ForecastResult> all = {wf.forecasts[0][o], wf.forecasts[1][o],
                                       wf.forecasts[2][o]};
    const ForecastResult avg = combine_forecasts(all, pool_avg, 0);
    std::vector<double> actual(k), cpt(k), apt(k);
    for (int i = 0; i < k; ++i) {
      actual[i] = wf.realized[o](i);
      cpt[i] = comb.point(i, 0);
      apt[i] = avg.point(i, 0);
    }
    combined_loss += rmsfe(actual, cpt);
    pool_loss += rmsfe(actual, apt);
  }
  require(combined_loss <= pool_loss + 1e-12,
          "MCS-equal combination does not dominate the pool average");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void()> fn;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "LC exact recovery on a rank-1 surface (< 1 s)", criterion_1},
      {2, "GAPC correctness: CBD recovery and deviance ascent (< 30 s)", criterion_2},
      {3, "constraint suite and eta-invariance of the identifiability transform", criterion_3},
      {4, "scoring oracles: interval score, mean interval score, RMSFE", criterion_4},
      {5, "MCS power: singleton superior set under a 1-sigma gap (< 2 min)", criterion_5},
      {6, "MCS size: exchangeable null retains all models", criterion_6},
      {7, "MCS invariances: loss scale and worker count", criterion_7},
      {8, "LC 80% interval coverage within [0.76, 0.84]", criterion_8},
      {9, "product-ratio coherence identity at machine precision", criterion_9},
      {10, "pipeline shape under the default 1995/2005/2015 splits", criterion_10},
      {11, "combination sanity: inverse-error weights and MCS dominance", criterion_11},
  };

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = Clock::now();
    try {
      c.fn();
      std::cout << "[PASS] criterion " << c.id << ": " << c.name << " ("
                << std::fixed << std::setprecision(1) << seconds_since(t0) << " s)\n";
    } catch (const std::exception& ex) {
      ++failures;
      std::cout << "[FAIL] criterion " << c.id << ": " << c.name << " — " << ex.what() << "\n";
    }
  }
  return failures == 0 ? 0 : 1;
}
