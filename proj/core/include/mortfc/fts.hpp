#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mortfc/dataset.hpp"

namespace mortfc {

/// Functional principal component decomposition of a curve time series:
/// mean curve, components orthonormal under the trapezoid inner product on
/// the age grid, per-year scores, and per-age residual variances.
struct FtsFit {
  std::vector<int> ages;
  std::vector<int> years;
  int K = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd components;   // ages x K
  Eigen::MatrixXd scores;       // years x K
  Eigen::VectorXd eigenvalues;  // K
  Eigen::VectorXd obs_weights;  // per year, in [0,1]
  Eigen::VectorXd residual_var; // per age

  /// mu + components * scores(t) for one year index.
  Eigen::VectorXd reconstruct(int year_index) const;
};

/// Trapezoid quadrature weights on a unit-spaced grid of the given size.
Eigen::VectorXd trapezoid_weights(int n);

/// FPCA of a (finite-valued, typically smoothed) log-rate surface.
FtsFit fpca(const LogRateSurface& surface, int K);

/// FPCA with per-year observation weights.
FtsFit fpca(const LogRateSurface& surface, int K, const Eigen::VectorXd& year_weights);

/// Two-pass robust FPCA: plain fit, integrated squared error per year,
/// chi-squared cutoff on the median-scaled errors, refit with zero weight on
/// the flagged years.
FtsFit robust_fpca(const LogRateSurface& surface, int K, double chi_sq_level);

/// Coherent two-population model of the geometric mean and ratio surfaces:
/// ln p = (ln m^M + ln m^F)/2, ln r = (ln m^M - ln m^F)/2.
struct CoherentFit {
  FtsFit product_fit;
  FtsFit ratio_fit;
};

CoherentFit product_ratio_fit(const LogRateSurface& female, const LogRateSurface& male, int K);

/// Curves of several populations stacked into one long vector per year.
struct MultivariateFtsFit {
  FtsFit fit;                  // on the stacked surface
  std::vector<int> offsets;    // row offset of each population block
  std::vector<std::vector<int>> population_ages;
};

MultivariateFtsFit multivariate_fts_fit(const std::vector<LogRateSurface>& surfaces, int K);

/// Stack per-year curves into one long surface; identity partner of unstack.
Eigen::MatrixXd stack_surfaces(const std::vector<LogRateSurface>& surfaces);
Eigen::MatrixXd unstack_block(const MultivariateFtsFit& fit, const Eigen::MatrixXd& stacked,
                              int population);

/// Two-level decomposition: per-population mean, a common trend shared by
/// all populations, population-specific residual trends, and a scalar
/// measurement-error variance per population.
struct MultilevelFtsFit {
  std::vector<int> ages;
  std::vector<int> years;
  std::vector<Eigen::VectorXd> mu;  // per population
  FtsFit common;
  std::vector<FtsFit> specific;
  Eigen::VectorXd sigma2;  // per population
};

MultilevelFtsFit multilevel_fts_fit(const std::vector<LogRateSurface>& surfaces, int K_common,
                                    int K_specific);

nlohmann::json fts_fit_to_json(const FtsFit& fit);
nlohmann::json multivariate_fit_to_json(const MultivariateFtsFit& fit);
nlohmann::json multilevel_fit_to_json(const MultilevelFtsFit& fit);

}  // namespace mortfc
