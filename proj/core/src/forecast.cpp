#include "mortfc/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "mortfc/index_models.hpp"
#include "mortfc/stats.hpp"

namespace mortfc {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("forecast: alpha must be in (0,1)");
}

// Gaussian symmetric interval around the point matrix.
void gaussian_bounds(ForecastResult& r, const Eigen::MatrixXd& variance) {
  const double z = stats::normal_quantile(1.0 - r.alpha / 2.0);
  r.lower = r.point - z * variance.cwiseMax(0.0).cwiseSqrt();
  r.upper = r.point + z * variance.cwiseMax(0.0).cwiseSqrt();
}

}  // namespace

ForecastResult forecast_lc(const LcFit& fit, int h, double alpha, int model_label) {
  check_alpha(alpha);
  if (h < 1) throw std::invalid_argument("forecast_lc: h must be >= 1");
  const RwdModel rwd = fit_rwd(std::span<const double>(fit.kappa.data(), fit.kappa.size()));
  const IndexForecast kf = forecast_rwd(rwd, h);

  ForecastResult r;
  r.model_label = model_label;
  r.ages = fit.ages;
  r.h = h;
  r.alpha = alpha;
  const int k = static_cast<int>(fit.ages.size());
  r.point.resize(k, h);
  for (int j = 0; j < h; ++j) r.point.col(j) = fit.alpha + fit.beta * kf.mean(j);
  gaussian_bounds(r, lc_forecast_variance(fit, kf.variance));
  return r;
}

ForecastResult forecast_gapc(const GapcFit& fit, int h, double alpha, int n_sim,
                             std::uint64_t seed, int model_label) {
  check_alpha(alpha);
  if (h < 1) throw std::invalid_argument("forecast_gapc: h must be >= 1");
  if (n_sim < 100) throw std::invalid_argument("forecast_gapc: n_sim must be >= 100");
  const int k = static_cast<int>(fit.ages.size());
  const int nt = fit.n_terms();
  const int n = static_cast<int>(fit.years.size());

  // Period indices jointly.
  Eigen::MatrixXd series(n, nt);
  for (int m = 0; m < nt; ++m) series.col(m) = fit.kappas.row(m).transpose();
  const MrwdModel mrwd = fit_mrwd(series);
  const MrwdForecast kmean = forecast_mrwd(mrwd, h);
  const std::vector<Eigen::MatrixXd> kpaths = simulate_mrwd(mrwd, h, n_sim, seed);

  // Cohort index, when present: ARIMA(1,1,0) with drift on the reliable
  // cohorts; trailing clamped cohorts and never-observed cohorts take the
  // extrapolated path.
  const bool has_cohort = fit.spec.cohort != CohortModulation::none;
  std::vector<double> gamma_obs;
  int last_included = -1;
  ArimaModel cohort_model;
  Eigen::VectorXd gmean;
  Eigen::MatrixXd gpaths;
  bool extrapolated_any = false;
  int max_steps = 0;
  if (has_cohort) {
    for (std::size_t c = 0; c < fit.cohorts.size(); ++c)
      if (fit.cohort_included[c]) last_included = static_cast<int>(c);
    if (last_included < 0) throw std::runtime_error("forecast_gapc: no usable cohorts");
    for (int c = 0; c <= last_included; ++c)
      if (fit.cohort_included[c]) gamma_obs.push_back(fit.gamma(c));
    // Steps needed beyond the last reliable cohort: youngest age at the
    // farthest horizon.
    const int last_cohort_needed = fit.years.back() + h - fit.ages.front();
    max_steps = last_cohort_needed - fit.cohorts[last_included];
    if (max_steps > 0) {
      if (gamma_obs.size() >= 5) {
        cohort_model = fit_arima(gamma_obs, 1, 0, true);
      } else {
        const RwdModel grw = fit_rwd(gamma_obs);
        cohort_model.p = 0;
        cohort_model.q = 0;
        cohort_model.with_drift = true;
        cohort_model.drift = grw.drift;
        cohort_model.innovation_var = grw.innovation_var;
        cohort_model.last_level = grw.last_value;
        cohort_model.last_diffs = {0.0};
        cohort_model.fallback = true;
      }
      gmean = forecast_arima(cohort_model, max_steps).mean;
      gpaths = simulate_arima(cohort_model, max_steps, n_sim, seed + 1);
      extrapolated_any = true;
    }
  }

  auto gamma_at = [&](int cohort_year, const double* path, int path_len) -> double {
    // Observed reliable cohorts use the fitted value; anything beyond the
    // last reliable cohort takes the extrapolated path.
    const int c0 = fit.cohorts.front();
    const int idx = cohort_year - c0;
    if (idx <= fit.cohorts[last_included] - c0 && idx >= 0) {
      if (fit.cohort_included[idx]) return fit.gamma(idx);
      // Interior clamped cohorts keep their (transformed) value.
      return fit.gamma(idx);
    }
    const int step = cohort_year - fit.cohorts[last_included];
    if (step < 1 || step > path_len) throw std::logic_error("forecast_gapc: cohort step range");
    return path[step - 1];
  };

  ForecastResult r;
  r.model_label = model_label == 0 ? static_cast<int>(fit.spec.model) + 1 : model_label;
  r.ages = fit.ages;
  r.h = h;
  r.alpha = alpha;
  r.point.resize(k, h);
  r.lower.resize(k, h);
  r.upper.resize(k, h);
  r.metadata.push_back("intervals: simulated index paths (n_sim=" + std::to_string(n_sim) + ")");
  if (extrapolated_any) r.metadata.push_back("cohort index extrapolated beyond fitted range");

  // Point forecast at the index means.
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < k; ++i) {
      double eta = fit.alpha.size() > 0 ? fit.alpha(i) : 0.0;
      for (int m = 0; m < nt; ++m) eta += fit.betas(i, m) * kmean.mean(j, m);
      if (has_cohort) {
        const int cohort_year = fit.years.back() + (j + 1) - fit.ages[i];
        eta += fit.beta_cohort(i) *
               gamma_at(cohort_year, gmean.size() ? gmean.data() : nullptr,
                        static_cast<int>(gmean.size()));
      }
      r.point(i, j) = eta;
    }
  }

  // Empirical interval from the simulated paths.
  std::vector<double> cell(n_sim);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < k; ++i) {
      for (int s = 0; s < n_sim; ++s) {
        double eta = fit.alpha.size() > 0 ? fit.alpha(i) : 0.0;
        for (int m = 0; m < nt; ++m) eta += fit.betas(i, m) * kpaths[s](j, m);
        if (has_cohort) {
          const int cohort_year = fit.years.back() + (j + 1) - fit.ages[i];
          eta += fit.beta_cohort(i) *
                 gamma_at(cohort_year, gpaths.size() ? gpaths.row(s).data() : nullptr,
                          static_cast<int>(gpaths.cols()));
        }
        cell[s] = eta;
      }
      const double lo = stats::empirical_quantile(cell, alpha / 2.0);
      const double hi = stats::empirical_quantile(cell, 1.0 - alpha / 2.0);
      r.lower(i, j) = std::min(lo, r.point(i, j));
      r.upper(i, j) = std::max(hi, r.point(i, j));
    }
  }
  return r;
}

namespace {

// Shared assembly for FPCA-style fits: RWD on each score series, variance
// summed over components plus a per-age residual floor.
void fts_point_and_variance(const FtsFit& fit, int h, Eigen::MatrixXd& point,
                            Eigen::MatrixXd& variance, const Eigen::VectorXd& base_mu) {
  const int k = static_cast<int>(fit.mu.size());
  point.resize(k, h);
  variance.resize(k, h);
  Eigen::MatrixXd score_mean(h, fit.K), score_var(h, fit.K);
  for (int c = 0; c < fit.K; ++c) {
    // Zero-weight years are excluded from the score series fed to the
    // random walk (outliers must not contaminate the drift).
    std::vector<double> series;
    for (int t = 0; t < fit.scores.rows(); ++t)
      if (fit.obs_weights(t) > 0.0) series.push_back(fit.scores(t, c));
    const RwdModel rwd = fit_rwd(series);
    const IndexForecast f = forecast_rwd(rwd, h);
    score_mean.col(c) = f.mean;
    score_var.col(c) = f.variance;
  }
  for (int j = 0; j < h; ++j) {
    point.col(j) = base_mu + fit.components * score_mean.row(j).transpose();
    Eigen::VectorXd var = fit.residual_var;
    for (int c = 0; c < fit.K; ++c)
      var += fit.components.col(c).cwiseProduct(fit.components.col(c)) * score_var(j, c);
    variance.col(j) = var;
  }
}

}  // namespace

ForecastResult forecast_fts(const FtsFit& fit, int h, double alpha, int model_label) {
  check_alpha(alpha);
  if (h < 1) throw std::invalid_argument("forecast_fts: h must be >= 1");
  ForecastResult r;
  r.model_label = model_label;
  r.ages = fit.ages;
  r.h = h;
  r.alpha = alpha;
  Eigen::MatrixXd variance;
  fts_point_and_variance(fit, h, r.point, variance, fit.mu);
  gaussian_bounds(r, variance);
  return r;
}

SexForecasts forecast_product_ratio(const CoherentFit& fit, int h, double alpha,
                                    int model_label) {
  check_alpha(alpha);
  Eigen::MatrixXd p_point, p_var, r_point, r_var;
  fts_point_and_variance(fit.product_fit, h, p_point, p_var, fit.product_fit.mu);
  fts_point_and_variance(fit.ratio_fit, h, r_point, r_var, fit.ratio_fit.mu);

  SexForecasts out;
  for (ForecastResult* r : {&out.female, &out.male}) {
    r->model_label = model_label;
    r->ages = fit.product_fit.ages;
    r->h = h;
    r->alpha = alpha;
  }
  out.male.point = p_point + r_point;
  out.female.point = p_point - r_point;
  const Eigen::MatrixXd var = p_var + r_var;
  gaussian_bounds(out.male, var);
  gaussian_bounds(out.female, var);
  return out;
}

std::vector<ForecastResult> forecast_multivariate(const MultivariateFtsFit& fit, int h,
                                                  double alpha, int model_label) {
  check_alpha(alpha);
  Eigen::MatrixXd point, variance;
  fts_point_and_variance(fit.fit, h, point, variance, fit.fit.mu);
  std::vector<ForecastResult> out;
  for (std::size_t p = 0; p < fit.offsets.size(); ++p) {
    ForecastResult r;
    r.model_label = model_label;
    r.ages = fit.population_ages[p];
    r.h = h;
    r.alpha = alpha;
    r.point = unstack_block(fit, point, static_cast<int>(p));
    gaussian_bounds(r, unstack_block(fit, variance, static_cast<int>(p)));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ForecastResult> forecast_multilevel(const MultilevelFtsFit& fit, int h, double alpha,
                                                int model_label) {
  check_alpha(alpha);
  Eigen::MatrixXd c_point, c_var;
  fts_point_and_variance(fit.common, h, c_point, c_var, fit.common.mu);
  // The common residual floor would double-count the specific level; only
  // the component score variances carry over.
  for (int j = 0; j < h; ++j) c_var.col(j) -= fit.common.residual_var;

  std::vector<ForecastResult> out;
  for (std::size_t p = 0; p < fit.mu.size(); ++p) {
    Eigen::MatrixXd s_point, s_var;
    fts_point_and_variance(fit.specific[p], h, s_point, s_var, fit.specific[p].mu);
    for (int j = 0; j < h; ++j) s_var.col(j) -= fit.specific[p].residual_var;

    ForecastResult r;
    r.model_label = model_label;
    r.ages = fit.ages;
    r.h = h;
    r.alpha = alpha;
    r.point = c_point + s_point;
    for (int j = 0; j < h; ++j) r.point.col(j) += fit.mu[p];
    Eigen::MatrixXd var = c_var + s_var;
    var.array() += fit.sigma2(static_cast<int>(p));
    gaussian_bounds(r, var);
    out.push_back(std::move(r));
  }
  return out;
}

void write_forecast_csv(std::ostream& out, const std::vector<ForecastResult>& results) {
  out << "model,age,horizon,point,lower,upper\n";
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.ages.size(); ++i)
      for (int j = 0; j < r.h; ++j)
        out << r.model_label << ',' << r.ages[i] << ',' << (j + 1) << ','
            << format_double(r.point(static_cast<int>(i), j)) << ','
            << format_double(r.lower(static_cast<int>(i), j)) << ','
            << format_double(r.upper(static_cast<int>(i), j)) << '\n';
}

}  // namespace mortfc
