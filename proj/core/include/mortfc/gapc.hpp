#pragma once

#include <Eigen/Core>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mortfc/dataset.hpp"

namespace mortfc {

/// The Poisson generalized age-period-cohort family.
enum class GapcModel { lc_poisson, rh, apc, cbd, m6, m7, m8, plat };

std::string to_string(GapcModel m);
GapcModel gapc_model_from_string(const std::string& s);

/// Age-modulating function attached to one period index.
enum class AgeBasis {
  free_fn,             // estimated beta_x
  one,                 // 1
  age_minus_mean,      // x - xbar
  mean_minus_age,      // xbar - x
  quadratic_centered,  // (x - xbar)^2 - mean((x - xbar)^2)
  hinge_mean_minus_age // max(xbar - x, 0)
};

enum class CohortModulation {
  none,
  free_fn,      // estimated beta0_x
  one,          // 1
  xc_minus_age  // (x_c - x), x_c estimated
};

struct GapcTerm {
  AgeBasis basis;
};

struct GapcConstraintSet {
  std::vector<int> kappa_sum_zero;  // term indices with sum_t kappa = 0
  std::vector<int> beta_sum_one;    // term indices with sum_x beta = 1
  bool beta_cohort_sum_one = false;
  // -1: no gamma constraints; 0: sum = 0; 1: + sum c*gamma = 0;
  // 2: + sum c^2*gamma = 0.
  int gamma_moments = -1;
};

/// Declarative predictor structure eta = [alpha_x] + sum_i beta_x^(i) kappa_t^(i)
/// [+ modulation(x) * gamma_{t-x}].
struct GapcSpec {
  GapcModel model;
  bool has_static_age = false;
  std::vector<GapcTerm> age_terms;
  CohortModulation cohort = CohortModulation::none;
  GapcConstraintSet constraints;
};

/// The predictor of the named model, with its identifiability constraint set.
GapcSpec gapc_spec(GapcModel model);

struct GapcFit {
  GapcSpec spec;
  std::vector<int> ages;
  std::vector<int> years;
  std::vector<int> cohorts;           // t1 - xk .. tn - x1
  std::vector<bool> cohort_included;  // cohorts with >= 3 observed cells
  Eigen::VectorXd alpha;              // empty when the spec has no static age term
  Eigen::MatrixXd betas;              // ages x n_terms, fixed bases materialized
  Eigen::MatrixXd kappas;             // n_terms x years
  Eigen::VectorXd gamma;              // per cohort; empty without a cohort term
  Eigen::VectorXd beta_cohort;        // materialized cohort modulation per age
  double xc = std::numeric_limits<double>::quiet_NaN();
  double mean_age = 0.0;
  double sigma2_age = 0.0;  // mean (x - xbar)^2
  std::vector<double> deviance_trace;
  bool converged = false;
  Eigen::MatrixXd fitted_log_rates;

  int n_terms() const { return static_cast<int>(spec.age_terms.size()); }
};

/// Blockwise Newton maximization of the Poisson log-likelihood
/// sum w [d*eta - e*exp(eta)] with per-update step halving (the deviance
/// trace is non-increasing by construction). Applies the identifiability
/// transform afterwards unless identify is false. Non-convergence within
/// max_iter is reported through the converged flag, not an error.
GapcFit fit_gapc(const GapcSpec& spec, const MortalityDataset& ds, double tol = 1e-6,
                 int max_iter = 500, bool identify = true);

/// Invariance transformations that enforce the spec's constraint set while
/// leaving the predictor unchanged. Idempotent.
GapcFit apply_identifiability(const GapcFit& fit);

/// Recompute eta from the stored parameters.
Eigen::MatrixXd gapc_predictor(const GapcFit& fit);

/// Named residuals of every constraint in the spec's set (0 when satisfied).
std::vector<std::pair<std::string, double>> gapc_constraint_residuals(const GapcFit& fit);

/// Poisson deviance of a fit against its dataset.
double gapc_deviance(const GapcFit& fit, const MortalityDataset& ds);

nlohmann::json gapc_fit_to_json(const GapcFit& fit);

}  // namespace mortfc
