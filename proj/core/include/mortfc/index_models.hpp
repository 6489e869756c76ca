#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mortfc {

/// Forecast mean and variance per horizon 1..h.
struct IndexForecast {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

struct RwdModel {
  double drift = 0.0;
  double innovation_var = 0.0;
  double last_value = 0.0;
  int n = 0;
};

/// Random walk with drift. drift = (y_n - y_1)/(n-1); innovation variance is
/// the sample variance of the drift-removed first differences with divisor
/// n-2 (0 when n == 2).
RwdModel fit_rwd(std::span<const double> series);
IndexForecast forecast_rwd(const RwdModel& model, int h);

struct MrwdModel {
  Eigen::VectorXd drift;
  Eigen::MatrixXd innovation_cov;  // symmetric PSD
  Eigen::VectorXd last_value;
  int n = 0;
};

struct MrwdForecast {
  Eigen::MatrixXd mean;  // h x q
  // Covariance at horizon j is (j+1) * innovation_cov; kept implicit.
};

/// Multivariate random walk with drift on a years x q matrix.
MrwdModel fit_mrwd(const Eigen::MatrixXd& series);
MrwdForecast forecast_mrwd(const MrwdModel& model, int h);

struct ArimaModel {
  int p = 0;
  int q = 0;
  bool with_drift = false;
  double drift = 0.0;           // intercept of the differenced series
  Eigen::VectorXd ar;           // phi_1..phi_p
  Eigen::VectorXd ma;           // theta_1..theta_q
  double innovation_var = 0.0;
  double last_level = 0.0;         // y_n
  std::vector<double> last_diffs;  // most recent first, length >= p
  double last_resid = 0.0;         // eps_n from the CSS recursion
  bool fallback = false;           // true when estimation fell back to (0,1,0)+drift
};

/// Restricted ARIMA(p,1,q) with p <= 2, q <= 1 by conditional sum of squares
/// on the differenced series. A non-stationary AR estimate is retried from
/// three perturbed starts and then falls back to (0,1,0) with drift.
ArimaModel fit_arima(std::span<const double> series, int p, int q, bool with_drift,
                     std::vector<std::string>* warnings = nullptr);
IndexForecast forecast_arima(const ArimaModel& model, int h);

/// psi weights of the integrated process (cumulative ARMA psi weights),
/// entries 0..h-1; forecast variance at horizon h is
/// sigma^2 * sum_{j<h} psi_int[j]^2.
Eigen::VectorXd arima_integrated_psi(const ArimaModel& model, int h);

/// Gaussian-innovation sample paths, n_paths x h, deterministic given seed;
/// path streams are keyed by (seed, path) so generation order is irrelevant.
Eigen::MatrixXd simulate_rwd(const RwdModel& model, int h, int n_paths, std::uint64_t seed);
/// Per-path h x q matrices.
std::vector<Eigen::MatrixXd> simulate_mrwd(const MrwdModel& model, int h, int n_paths,
                                           std::uint64_t seed);
Eigen::MatrixXd simulate_arima(const ArimaModel& model, int h, int n_paths, std::uint64_t seed);

}  // namespace mortfc
