#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mortfc/dataset.hpp"

namespace mortfc {

/// Post-fit treatment of the period scores: the classic refit to total
/// deaths, the life-expectancy refit, the deaths-distribution refit, or the
/// raw SVD scores.
enum class LcAdjustment { none, refit_total_deaths, fit_e0, fit_death_distribution };

std::string to_string(LcAdjustment a);

struct LcFit {
  std::vector<int> ages;
  std::vector<int> years;
  bool open_age_group = false;
  Eigen::VectorXd alpha;      // per-age mean of log rates
  Eigen::VectorXd beta;       // sums to 1
  Eigen::VectorXd kappa_raw;  // SVD scores, sum 0
  Eigen::VectorXd kappa;      // adjusted scores actually used for forecasting
  LcAdjustment adjustment = LcAdjustment::none;
  Eigen::VectorXd residual_var;  // v_x, per age
  Eigen::VectorXd beta_sq;       // b_x^2
  Eigen::MatrixXd fitted_log_rates;
};

/// SVD-based Lee-Carter fit under Gaussian errors on log rates. Cells with
/// zero deaths or non-positive exposure are excluded from the mean, handled
/// in the SVD by iterative imputation, and excluded from the residual
/// variances.
LcFit fit_lc(const MortalityDataset& ds, LcAdjustment adjustment,
             std::vector<std::string>* warnings = nullptr);

/// Forecast variance b_x^2 u_h + v_x per age and horizon; u holds the score
/// forecast variances per horizon and must be nonnegative.
Eigen::MatrixXd lc_forecast_variance(const LcFit& fit, const Eigen::VectorXd& u);

/// Period life expectancy at the first age of the rate vector, built with
/// a_x = 1/2 (uniform deaths within the year) and an open final group with
/// a = 1/m.
double life_expectancy(const Eigen::VectorXd& rates);

nlohmann::json lc_fit_to_json(const LcFit& fit);

}  // namespace mortfc
