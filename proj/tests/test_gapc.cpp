#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "mortfc/gapc.hpp"
#include "mortfc/rng.hpp"
#include "test_util.hpp"

using namespace mortfc;

namespace {

// CBD predictor with known index paths; deaths drawn at a large exposure.
struct CbdTruth {
  std::vector<int> ages;
  std::vector<int> years;
  Eigen::VectorXd kappa1, kappa2;
  Eigen::MatrixXd eta;
};

CbdTruth make_cbd_truth(int n_ages = 21, int n_years = 15) {
  CbdTruth t;
  t.ages = testutil::age_range(60, 60 + n_ages - 1);
  for (int j = 0; j < n_years; ++j) t.years.push_back(1991 + j);
  double xbar = 0.0;
  for (int a : t.ages) xbar += a;
  xbar /= n_ages;
  t.kappa1.resize(n_years);
  t.kappa2.resize(n_years);
  for (int j = 0; j < n_years; ++j) {
    const double f = static_cast<double>(j) / (n_years - 1);
    t.kappa1(j) = -2.8 - 0.5 * f + 0.02 * std::sin(3.0 * j);
    t.kappa2(j) = 0.040 + 0.010 * f + 0.0005 * std::cos(2.0 * j);
  }
  t.eta.resize(n_ages, n_years);
  for (int i = 0; i < n_ages; ++i)
    for (int j = 0; j < n_years; ++j)
      t.eta(i, j) = t.kappa1(j) + (t.ages[i] - xbar) * t.kappa2(j);
  return t;
}

}  // namespace

TEST_CASE("cbd fit recovers the generating index paths") {
  const CbdTruth truth = make_cbd_truth();
  const MortalityDataset ds =
      testutil::poisson_dataset(truth.ages, truth.years, truth.eta, 1e6, 2024);
  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::cbd), ds);
  REQUIRE(fit.converged);
  CHECK((fit.kappas.row(0).transpose() - truth.kappa1).cwiseAbs().maxCoeff() < 1e-2);
  CHECK((fit.kappas.row(1).transpose() - truth.kappa2).cwiseAbs().maxCoeff() < 1e-2);
  const double rmse = std::sqrt((fit.fitted_log_rates - truth.eta).squaredNorm() /
                                truth.eta.size());
  CHECK(rmse < 1e-2);
}

TEST_CASE("apc on flat data reduces to the per-age closed form") {
  // gamma and kappa identically zero in the generator: eta is an age
  // profile replicated across years, and the per-age MLE is
  // ln(sum_t d / sum_t e).
  const auto ages = testutil::age_range(60, 74);
  std::vector<int> years;
  for (int j = 0; j < 12; ++j) years.push_back(1990 + j);
  Eigen::MatrixXd eta(15, 12);
  for (int i = 0; i < 15; ++i) eta.row(i).setConstant(-4.5 + 0.12 * i);

  MortalityDataset ds;
  ds.ages = ages;
  ds.years = years;
  ds.deaths.resize(15, 12);
  ds.exposures.resize(15, 12);
  ds.rates.resize(15, 12);
  for (int i = 0; i < 15; ++i) {
    for (int j = 0; j < 12; ++j) {
      ds.exposures(i, j) = 1e6 * (1.0 + 0.03 * j);  // uneven exposure over time
      ds.deaths(i, j) = ds.exposures(i, j) * std::exp(eta(i, j));
      ds.rates(i, j) = ds.deaths(i, j) / ds.exposures(i, j);
    }
  }

  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::apc), ds);
  for (int i = 0; i < 15; ++i) {
    double dsum = 0.0, esum = 0.0;
    for (int j = 0; j < 12; ++j) {
      dsum += ds.deaths(i, j);
      esum += ds.exposures(i, j);
    }
    const double closed_form = std::log(dsum / esum);
    for (int j = 0; j < 12; ++j)
      CHECK(fit.fitted_log_rates(i, j) == doctest::Approx(closed_form).epsilon(1e-6));
  }
}

TEST_CASE("deviance trace is non-increasing for every spec") {
  for (int seed = 1; seed <= 6; ++seed) {
    const MortalityDataset ds = testutil::random_small_dataset(seed);
    for (GapcModel model : {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc, GapcModel::cbd,
                            GapcModel::m6, GapcModel::m7, GapcModel::m8, GapcModel::plat}) {
      const GapcFit fit = fit_gapc(gapc_spec(model), ds, 1e-6, 60);
      REQUIRE(fit.deviance_trace.size() >= 2);
      for (std::size_t i = 1; i < fit.deviance_trace.size(); ++i)
        CHECK(fit.deviance_trace[i] <=
              fit.deviance_trace[i - 1] + 1e-8 * (1.0 + std::abs(fit.deviance_trace[i - 1])));
      // One full cycle already improves on the initialization.
      CHECK(fit.deviance_trace[1] <= fit.deviance_trace[0] + 1e-9);
    }
  }
}

TEST_CASE("identifiability transform normalizes a hand-built lc fit") {
  // Raw parameters violating the constraints: sum(beta) = 2, sum(kappa) = 10.
  GapcFit fit;
  fit.spec = gapc_spec(GapcModel::lc_poisson);
  fit.ages = {60, 61, 62, 63};
  fit.years = {2000, 2001, 2002, 2003, 2004};
  fit.mean_age = 61.5;
  fit.sigma2_age = 1.25;
  fit.alpha = Eigen::VectorXd::Constant(4, -3.0);
  fit.betas.resize(4, 1);
  fit.betas << 0.8, 0.6, 0.4, 0.2;
  fit.kappas.resize(1, 5);
  fit.kappas << 4.0, 3.0, 2.0, 1.0, 0.0;
  fit.beta_cohort = Eigen::VectorXd::Zero(4);
  fit.gamma = Eigen::VectorXd();
  fit.fitted_log_rates = gapc_predictor(fit);

  const Eigen::MatrixXd eta_before = gapc_predictor(fit);
  const GapcFit post = apply_identifiability(fit);
  CHECK(post.betas.col(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(post.kappas.row(0).sum()) < 1e-10);
  CHECK((gapc_predictor(post) - eta_before).cwiseAbs().maxCoeff() < 1e-10);

  // Idempotence.
  const GapcFit twice = apply_identifiability(post);
  CHECK((twice.betas - post.betas).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((twice.kappas - post.kappas).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((twice.alpha - post.alpha).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("apc transform projects a linear cohort trend into kappa and alpha") {
  GapcFit fit;
  fit.spec = gapc_spec(GapcModel::apc);
  fit.ages = {60, 61, 62};
  fit.years = {2000, 2001, 2002, 2003};
  fit.mean_age = 61.0;
  fit.sigma2_age = 2.0 / 3.0;
  fit.alpha = Eigen::VectorXd::Constant(3, -4.0);
  fit.betas = Eigen::MatrixXd::Ones(3, 1);
  fit.kappas = Eigen::MatrixXd::Zero(1, 4);
  fit.beta_cohort = Eigen::VectorXd::Ones(3);
  const int c_min = 2000 - 62, c_max = 2003 - 60;
  for (int c = c_min; c <= c_max; ++c) fit.cohorts.push_back(c);
  fit.cohort_included.assign(fit.cohorts.size(), true);
  fit.gamma.resize(static_cast<int>(fit.cohorts.size()));
  for (std::size_t c = 0; c < fit.cohorts.size(); ++c)
    fit.gamma(static_cast<int>(c)) = 0.3 + 0.05 * fit.cohorts[c];  // pure linear trend
  fit.fitted_log_rates = gapc_predictor(fit);

  const Eigen::MatrixXd eta_before = gapc_predictor(fit);
  const GapcFit post = apply_identifiability(fit);
  // Residual of an exact linear trend is zero, and eta is untouched.
  CHECK(post.gamma.cwiseAbs().maxCoeff() < 1e-9);
  CHECK((gapc_predictor(post) - eta_before).cwiseAbs().maxCoeff() < 1e-10);
  for (const auto& [name, resid] : gapc_constraint_residuals(post))
    CHECK(std::abs(resid) < 1e-8);
}

TEST_CASE("all eight specs satisfy their constraint sets after fitting") {
  const CbdTruth truth = make_cbd_truth(12, 10);
  RngStream rng(31);
  Eigen::MatrixXd eta = truth.eta;
  // Mild cohort-like wiggle so the cohort terms have something to fit.
  for (int i = 0; i < eta.rows(); ++i)
    for (int j = 0; j < eta.cols(); ++j) eta(i, j) += 0.05 * std::sin(0.4 * (j - i));
  const MortalityDataset ds = testutil::poisson_dataset(truth.ages, truth.years, eta, 1e5, 77);

  for (GapcModel model : {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc, GapcModel::cbd,
                          GapcModel::m6, GapcModel::m7, GapcModel::m8, GapcModel::plat}) {
    const GapcFit fit = fit_gapc(gapc_spec(model), ds, 1e-6, 200);
    for (const auto& [name, resid] : gapc_constraint_residuals(fit))
      CHECK_MESSAGE(std::abs(resid) < 1e-8, to_string(model), " ", name, " = ", resid);
  }
}

TEST_CASE("identifiability leaves eta unchanged for every spec") {
  const CbdTruth truth = make_cbd_truth(10, 9);
  Eigen::MatrixXd eta = truth.eta;
  for (int i = 0; i < eta.rows(); ++i)
    for (int j = 0; j < eta.cols(); ++j) eta(i, j) += 0.04 * std::cos(0.3 * (j - 2 * i));
  const MortalityDataset ds = testutil::poisson_dataset(truth.ages, truth.years, eta, 1e5, 5);

  for (GapcModel model : {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc, GapcModel::cbd,
                          GapcModel::m6, GapcModel::m7, GapcModel::m8, GapcModel::plat}) {
    const GapcFit raw = fit_gapc(gapc_spec(model), ds, 1e-6, 120, /*identify=*/false);
    const Eigen::MatrixXd eta_before = raw.fitted_log_rates;
    const GapcFit post = apply_identifiability(raw);
    CHECK_MESSAGE((post.fitted_log_rates - eta_before).cwiseAbs().maxCoeff() < 1e-10,
                  to_string(model));
  }
}

TEST_CASE("nesting: the cbd deviance dominates its extensions") {
  const CbdTruth truth = make_cbd_truth(14, 12);
  RngStream rng(3);
  Eigen::MatrixXd eta = truth.eta;
  for (int i = 0; i < eta.rows(); ++i)
    for (int j = 0; j < eta.cols(); ++j) eta(i, j) += 0.03 * rng.normal();
  const MortalityDataset ds = testutil::poisson_dataset(truth.ages, truth.years, eta, 1e5, 11);

  const double dev_cbd = fit_gapc(gapc_spec(GapcModel::cbd), ds).deviance_trace.back();
  const double dev_m6 = fit_gapc(gapc_spec(GapcModel::m6), ds, 1e-7, 400).deviance_trace.back();
  const double dev_m7 = fit_gapc(gapc_spec(GapcModel::m7), ds, 1e-7, 400).deviance_trace.back();
  CHECK(dev_m6 <= dev_cbd + 1e-6 * dev_cbd);
  CHECK(dev_m7 <= dev_cbd + 1e-6 * dev_cbd);
}

TEST_CASE("non-convergence is flagged, not fatal") {
  const MortalityDataset ds = testutil::random_small_dataset(44);
  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::rh), ds, 1e-14, 2);
  CHECK_FALSE(fit.converged);
  CHECK(fit.deviance_trace.size() == 3);  // initialization + two cycles
}

TEST_CASE("duplicated fixed bases are rejected as unidentifiable") {
  GapcSpec spec = gapc_spec(GapcModel::cbd);
  spec.age_terms.push_back({AgeBasis::age_minus_mean});
  const MortalityDataset ds = testutil::random_small_dataset(8);
  CHECK_THROWS(fit_gapc(spec, ds));
}

TEST_CASE("m8 profiles its cohort pivot inside the age range") {
  const CbdTruth truth = make_cbd_truth(10, 12);
  Eigen::MatrixXd eta = truth.eta;
  for (int i = 0; i < eta.rows(); ++i)
    for (int j = 0; j < eta.cols(); ++j) eta(i, j) += 0.02 * std::sin(0.5 * (j - i));
  const MortalityDataset ds = testutil::poisson_dataset(truth.ages, truth.years, eta, 1e5, 13);
  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::m8), ds, 1e-6, 150);
  CHECK(fit.xc >= truth.ages.front());
  CHECK(fit.xc <= truth.ages.back());
  // Materialized modulation matches (xc - x).
  for (int i = 0; i < 10; ++i)
    CHECK(fit.beta_cohort(i) == doctest::Approx(fit.xc - truth.ages[i]));
}

TEST_CASE("the fit document carries the pinned json keys") {
  const MortalityDataset ds = testutil::random_small_dataset(2, 6, 9);
  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::m8), ds, 1e-6, 80);
  const nlohmann::json j = gapc_fit_to_json(fit);
  for (const char* key : {"spec", "alpha", "betas", "kappas", "gamma", "xc", "deviance",
                          "converged"})
    CHECK_MESSAGE(j.contains(key), key);
  CHECK(j["spec"] == "M8");
  CHECK(j["xc"].is_number());
  CHECK(j["betas"].size() == 2);
}

TEST_CASE("clamped corner cohorts are excluded from constraints") {
  const MortalityDataset ds = testutil::random_small_dataset(21, 6, 9);
  const GapcFit fit = fit_gapc(gapc_spec(GapcModel::apc), ds);
  // Corner cohorts (single observation) are not in the constraint set.
  CHECK_FALSE(fit.cohort_included.front());
  CHECK_FALSE(fit.cohort_included.back());
  int included = 0;
  for (bool b : fit.cohort_included) included += b;
  CHECK(included >= 3);
}
