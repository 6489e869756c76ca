#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mortfc/evaluation.hpp"
#include "mortfc/rng.hpp"
#include "mortfc/stats.hpp"
#include "test_util.hpp"

using namespace mortfc;

TEST_CASE("rmsfe basics") {
  const std::vector<double> zeros = {0.0, 0.0};
  const std::vector<double> fc = {3.0, 4.0};
  CHECK(rmsfe(fc, fc) == 0.0);
  CHECK(rmsfe(zeros, fc) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK_THROWS(rmsfe(zeros, std::vector<double>{1.0}));

  // 41 ages: the divisor matches the age-grid size.
  std::vector<double> a(41, 0.0), b(41, 0.0);
  b[0] = 41.0;
  CHECK(rmsfe(a, b) == doctest::Approx(std::sqrt(41.0 * 41.0 / 41.0)));
}

TEST_CASE("rmsfe is shift equivariant") {
  RngStream rng(4);
  std::vector<double> actual(20), forecast(20), actual_s(20), forecast_s(20);
  for (int i = 0; i < 20; ++i) {
    actual[i] = rng.normal();
    forecast[i] = rng.normal();
    actual_s[i] = actual[i] + 3.7;
    forecast_s[i] = forecast[i] + 3.7;
  }
  CHECK(rmsfe(actual, forecast) == doctest::Approx(rmsfe(actual_s, forecast_s)).epsilon(1e-12));
}

TEST_CASE("interval score on the three tabulated cases") {
  CHECK(interval_score(0.0, 1.0, 0.5, 0.2) == doctest::Approx(1.0));
  CHECK(interval_score(0.0, 1.0, 1.5, 0.2) == doctest::Approx(6.0));
  CHECK(interval_score(0.0, 1.0, -0.2, 0.2) == doctest::Approx(3.0));
  CHECK_THROWS(interval_score(1.0, 0.0, 0.5, 0.2));
}

TEST_CASE("mean interval score") {
  const std::vector<double> l = {0.0, 0.0};
  const std::vector<double> u = {1.0, 1.0};
  const std::vector<double> y_in = {0.5, 0.2};
  CHECK(mean_interval_score(l, u, y_in, 0.2) == doctest::Approx(1.0));
  const std::vector<double> y_mixed = {0.5, 1.5};  // scores 1 and 6
  CHECK(mean_interval_score(l, u, y_mixed, 0.2) == doctest::Approx(3.5));
  const std::vector<double> y0 = {0.3, 0.6};
  CHECK(mean_interval_score(y0, y0, y0, 0.2) == doctest::Approx(0.0));
}

TEST_CASE("the true central interval wins the expected interval score") {
  // Propriety spot check: for standard gaussian data the 80% interval
  // [-z, z] should not be beaten by shifted or rescaled competitors.
  const double z = stats::normal_quantile(0.9);
  const int n = 100000;
  RngStream rng(8);
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = rng.normal();

  auto expected_score = [&](double lo, double hi) {
    double s = 0.0;
    for (double y : draws) s += interval_score(lo, hi, y, 0.2);
    return s / n;
  };
  const double best = expected_score(-z, z);
  RngStream perturb(9);
  for (int rep = 0; rep < 50; ++rep) {
    const double shift = 0.6 * perturb.normal();
    const double scale = std::exp(0.4 * perturb.normal());
    const double lo = -z * scale + shift;
    const double hi = z * scale + shift;
    CHECK(best <= expected_score(lo, hi) + 1e-3);
  }
}

TEST_CASE("loss panel csv round trip") {
  LossPanel panel;
  panel.model_labels = {4, 9};
  panel.origin_years = {1995, 1996, 1997};
  panel.losses.resize(2, 3);
  panel.losses << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  panel.loss_kind = LossKind::rmsfe;
  std::ostringstream out;
  write_loss_panel_csv(panel, out);
  std::istringstream in(out.str());
  const LossPanel back = read_loss_panel_csv(in, LossKind::rmsfe);
  CHECK(back.model_labels == panel.model_labels);
  CHECK(back.origin_years == panel.origin_years);
  CHECK((back.losses - panel.losses).cwiseAbs().maxCoeff() == 0.0);
}

namespace {

PopulationData small_bundle(int first_year, int last_year, std::uint64_t seed) {
  const int n = last_year - first_year + 1;
  auto f = testutil::make_rank1_surface(16, n, 60, first_year, seed);
  auto m = testutil::make_rank1_surface(16, n, 60, first_year, seed + 1);
  m.log_rates.array() += 0.3;  // male level shift
  PopulationData pop;
  pop.label = "toy";
  pop.female = testutil::dataset_from_log_rates(f.ages, f.years, f.log_rates, 5e4);
  pop.male = testutil::dataset_from_log_rates(m.ages, m.years, m.log_rates, 5e4);
  pop.male.sex = Sex::male;
  return pop;
}

}  // namespace

TEST_CASE("expanding window produces a models x origins panel") {
  const PopulationData pop = small_bundle(1990, 2000, 3);
  EvalOptions opts;
  opts.train_end = 1996;
  opts.eval_end = 1999;
  opts.horizon = 1;
  opts.n_sim = 200;
  opts.seed = 5;
  const SexWindowForecasts wf = run_expanding_window(pop, {9, 12}, opts);
  const LossPanel panel = loss_panel(wf.female, LossKind::rmsfe);
  CHECK(panel.n_models() == 2);
  CHECK(panel.n_origins() == 3);
  CHECK(panel.origin_years == std::vector<int>{1996, 1997, 1998});
  CHECK(panel.losses.allFinite());
  CHECK(panel.losses.minCoeff() >= 0.0);

  SUBCASE("panel construction is deterministic") {
    const SexWindowForecasts again = run_expanding_window(pop, {9, 12}, opts);
    const LossPanel panel2 = loss_panel(again.female, LossKind::rmsfe);
    CHECK((panel.losses - panel2.losses).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("multi-step horizons shift the origin grid") {
  const PopulationData pop = small_bundle(1990, 2000, 9);
  EvalOptions opts;
  opts.train_end = 1995;
  opts.eval_end = 1999;
  opts.horizon = 2;
  opts.n_sim = 150;
  const SexWindowForecasts wf = run_expanding_window(pop, {12}, opts);
  // Origins run from train_end while T + horizon stays inside the window.
  CHECK(wf.female.origins == std::vector<int>{1995, 1996, 1997});
  const LossPanel panel = loss_panel(wf.female, LossKind::rmsfe);
  CHECK(panel.losses.allFinite());
}

TEST_CASE("paper schedule gives ten one-step origins") {
  const PopulationData pop = small_bundle(1975, 2006, 11);
  EvalOptions opts;
  opts.train_end = 1995;
  opts.eval_end = 2005;
  opts.n_sim = 150;
  const SexWindowForecasts wf = run_expanding_window(pop, {12}, opts);
  CHECK(wf.female.origins.size() == 10);
  CHECK(wf.female.origins.front() == 1995);
  CHECK(wf.female.origins.back() == 2004);
}

TEST_CASE("a perfect forecast scores zero under both loss kinds") {
  // Hand-built window: the forecast equals the realized curve with a
  // zero-width interval.
  WindowForecasts wf;
  wf.model_labels = {1};
  wf.model_ok = {1};
  wf.origins = {2000, 2001};
  wf.ages = {60, 61, 62};
  wf.forecasts.resize(1);
  for (int o = 0; o < 2; ++o) {
    Eigen::VectorXd realized(3);
    realized << -4.0, -3.9, -3.8 + o * 0.1;
    wf.realized.push_back(realized);
    ForecastResult r;
    r.model_label = 1;
    r.ages = wf.ages;
    r.h = 1;
    r.alpha = 0.2;
    r.point = realized;
    r.lower = realized;
    r.upper = realized;
    wf.forecasts[0].push_back(r);
  }
  CHECK(loss_panel(wf, LossKind::rmsfe).losses.cwiseAbs().maxCoeff() == 0.0);
  CHECK(loss_panel(wf, LossKind::mean_interval_score).losses.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("models that fail anywhere are dropped with a warning") {
  PopulationData pop = small_bundle(1990, 2000, 7);
  EvalOptions opts;
  opts.train_end = 1996;
  opts.eval_end = 1999;
  opts.n_sim = 150;
  // Label 99 does not exist: it fails at every origin and is dropped.
  const SexWindowForecasts wf = run_expanding_window(pop, {12, 99}, opts);
  CHECK_FALSE(wf.female.warnings.empty());
  const LossPanel panel = loss_panel(wf.female, LossKind::rmsfe);
  CHECK(panel.n_models() == 1);
  CHECK(panel.model_labels == std::vector<int>{12});
}

TEST_CASE("joint models produce both sexes from one fit") {
  const PopulationData pop = small_bundle(1988, 2002, 13);
  EvalOptions opts;
  opts.train_end = 1999;
  opts.eval_end = 2001;
  opts.n_sim = 150;
  opts.fpca_K = 3;
  for (int label : {15, 16, 17}) {
    const SexWindowForecasts wf = run_expanding_window(pop, {label}, opts);
    CHECK(wf.female.model_ok[0] == 1);
    CHECK(wf.male.model_ok[0] == 1);
    const LossPanel pf = loss_panel(wf.female, LossKind::rmsfe);
    const LossPanel pm = loss_panel(wf.male, LossKind::rmsfe);
    CHECK(pf.losses.allFinite());
    CHECK(pm.losses.allFinite());
  }
}
