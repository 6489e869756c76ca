#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "mortfc/dataset.hpp"

namespace mortfc {

struct SmoothOptions {
  /// Second-difference penalty; chosen per year by GCV over a log-spaced
  /// grid 1e-2 .. 1e4 when unset.
  std::optional<double> penalty;
  /// Project each smoothed year to be non-decreasing in age (PAV).
  bool monotone = false;
};

/// Smooth each year's log-rate curve independently by minimizing
///   sum_x w_x (ln m_x - g_x)^2 + penalty * sum (second differences of g)^2
/// with deaths-proportional weights (normalized to mean one over trusted
/// cells; zero-weight cells excluded and filled from the smooth). Years with
/// fewer than 4 weighted cells are copied unsmoothed with a warning.
LogRateSurface smooth_log_rates(const MortalityDataset& ds, const SmoothOptions& options,
                                std::vector<std::string>* warnings = nullptr);

LogRateSurface smooth_log_rates(const MortalityDataset& ds, double penalty, bool monotone,
                                std::vector<std::string>* warnings = nullptr);

namespace detail {

/// Solve (diag(w) + lambda * D'D) g = diag(w) y for one curve. Entries of y
/// with w == 0 may be NaN; they do not enter the criterion.
Eigen::VectorXd penalized_fit(const Eigen::VectorXd& y, const Eigen::VectorXd& w, double lambda);

/// Trace of the smoother hat matrix H = (diag(w) + lambda D'D)^{-1} diag(w),
/// computed from the banded factorization (Takahashi recursion).
double smoother_hat_trace(const Eigen::VectorXd& w, double lambda);

/// GCV score for one curve at a given penalty.
double gcv_score(const Eigen::VectorXd& y, const Eigen::VectorXd& w, double lambda);

/// Pool-adjacent-violators projection to a non-decreasing sequence.
Eigen::VectorXd pav_non_decreasing(const Eigen::VectorXd& y);

}  // namespace detail

}  // namespace mortfc
