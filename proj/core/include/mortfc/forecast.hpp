#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mortfc/fts.hpp"
#include "mortfc/gapc.hpp"
#include "mortfc/lee_carter.hpp"

namespace mortfc {

/// Point forecasts and symmetric prediction intervals for log mortality
/// rates over horizons 1..h.
struct ForecastResult {
  int model_label = 0;
  std::vector<int> ages;
  int h = 0;
  double alpha = 0.2;       // interval level 100(1-alpha)%
  Eigen::MatrixXd point;    // ages x h
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  std::vector<std::string> metadata;
};

/// Point = alpha_x + beta_x * kappa_hat; interval from the score-variance
/// plus residual-variance sum with Gaussian quantiles. The adjusted scores
/// are extrapolated by a random walk with drift.
ForecastResult forecast_lc(const LcFit& fit, int h, double alpha, int model_label = 9);

/// Period indices jointly by multivariate random walk with drift, cohort
/// index by ARIMA(1,1,0) with drift. Intervals are empirical quantiles of
/// the predictor over simulated index paths (index uncertainty only).
ForecastResult forecast_gapc(const GapcFit& fit, int h, double alpha, int n_sim,
                             std::uint64_t seed, int model_label = 0);

/// Score series by random walk with drift; variance sums the component
/// contributions and the residual variance.
ForecastResult forecast_fts(const FtsFit& fit, int h, double alpha, int model_label = 13);

struct SexForecasts {
  ForecastResult female;
  ForecastResult male;
};

/// Product-ratio assembly: male = product + ratio, female = product - ratio
/// on the log scale; variances add across the independent parts.
SexForecasts forecast_product_ratio(const CoherentFit& fit, int h, double alpha,
                                    int model_label = 15);

std::vector<ForecastResult> forecast_multivariate(const MultivariateFtsFit& fit, int h,
                                                  double alpha, int model_label = 16);

std::vector<ForecastResult> forecast_multilevel(const MultilevelFtsFit& fit, int h, double alpha,
                                                int model_label = 17);

/// CSV rows `model,age,horizon,point,lower,upper`.
void write_forecast_csv(std::ostream& out, const std::vector<ForecastResult>& results);

}  // namespace mortfc
