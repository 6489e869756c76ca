#include "mortfc/fts.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "mortfc/stats.hpp"

namespace mortfc {

namespace {

void require_finite(const Eigen::MatrixXd& values, const char* who) {
  if (!values.allFinite())
    throw std::invalid_argument(std::string(who) +
                                ": surface has non-finite cells; smooth or impute first");
}

// Core decomposition on a raw matrix (ages x years) under the given
// quadrature weights.
FtsFit fpca_matrix(const Eigen::MatrixXd& values, const std::vector<int>& ages,
                   const std::vector<int>& years, int K, const Eigen::VectorXd& year_weights,
                   const Eigen::VectorXd& omega) {
  const int k = static_cast<int>(values.rows());
  const int n = static_cast<int>(values.cols());
  if (K < 1 || K > std::min(k, n) - 1)
    throw std::invalid_argument("fpca: K out of range (1 <= K <= min(ages, years) - 1)");
  if (year_weights.size() != n) throw std::invalid_argument("fpca: weight length mismatch");
  const double wsum = year_weights.sum();
  if (!(wsum > 0.0)) throw std::invalid_argument("fpca: all year weights are zero");

  FtsFit fit;
  fit.ages = ages;
  fit.years = years;
  fit.K = K;
  fit.obs_weights = year_weights;

  fit.mu = (values * year_weights) / wsum;
  Eigen::MatrixXd centered = values.colwise() - fit.mu;

  const Eigen::VectorXd omega_sqrt = omega.cwiseSqrt();

  // Weighted sample covariance of the centered curves, symmetrized in the
  // trapezoid inner product so eigenvectors are orthonormal under it.
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < n; ++j) {
    if (year_weights(j) == 0.0) continue;
    cov.noalias() += year_weights(j) * centered.col(j) * centered.col(j).transpose();
  }
  cov /= wsum;
  Eigen::MatrixXd sym = omega_sqrt.asDiagonal() * cov * omega_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);

  fit.components.resize(k, K);
  fit.eigenvalues.resize(K);
  for (int c = 0; c < K; ++c) {
    const int idx = k - 1 - c;  // eigenvalues ascend in Eigen
    fit.eigenvalues(c) = std::max(0.0, es.eigenvalues()(idx));
    Eigen::VectorXd phi = es.eigenvectors().col(idx).cwiseQuotient(omega_sqrt);
    // Sign convention: nonnegative inner product with the constant curve,
    // ties broken by the first nonzero entry.
    double ip = (omega.array() * phi.array()).sum();
    if (std::abs(ip) < 1e-12) {
      for (int i = 0; i < k; ++i) {
        if (std::abs(phi(i)) > 1e-12) {
          ip = phi(i);
          break;
        }
      }
    }
    if (ip < 0.0) phi = -phi;
    fit.components.col(c) = phi;
  }

  // Scores for every year (including zero-weight years) by projection.
  fit.scores.resize(n, K);
  for (int j = 0; j < n; ++j)
    fit.scores.row(j) =
        (fit.components.transpose() * omega.asDiagonal() * centered.col(j)).transpose();

  // Per-age weighted mean squared reconstruction residual.
  fit.residual_var = Eigen::VectorXd::Zero(k);
  for (int j = 0; j < n; ++j) {
    if (year_weights(j) == 0.0) continue;
    const Eigen::VectorXd resid =
        centered.col(j) - fit.components * fit.scores.row(j).transpose();
    fit.residual_var += year_weights(j) * resid.cwiseProduct(resid);
  }
  fit.residual_var /= wsum;
  return fit;
}

void require_same_grid(const LogRateSurface& a, const LogRateSurface& b, const char* who) {
  if (a.ages != b.ages || a.years != b.years)
    throw std::invalid_argument(std::string(who) + ": age/year grid mismatch");
}

}  // namespace

Eigen::VectorXd trapezoid_weights(int n) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (n >= 2) {
    w(0) = 0.5;
    w(n - 1) = 0.5;
  }
  return w;
}

Eigen::VectorXd FtsFit::reconstruct(int year_index) const {
  return mu + components * scores.row(year_index).transpose();
}

FtsFit fpca(const LogRateSurface& surface, int K) {
  return fpca(surface, K, Eigen::VectorXd::Ones(surface.n_years()));
}

FtsFit fpca(const LogRateSurface& surface, int K, const Eigen::VectorXd& year_weights) {
  require_finite(surface.values, "fpca");
  return fpca_matrix(surface.values, surface.ages, surface.years, K, year_weights,
                     trapezoid_weights(surface.n_ages()));
}

FtsFit robust_fpca(const LogRateSurface& surface, int K, double chi_sq_level) {
  if (!(chi_sq_level > 0.0 && chi_sq_level < 1.0))
    throw std::invalid_argument("robust_fpca: chi_sq_level must be in (0,1)");
  const FtsFit first = fpca(surface, K);
  const int k = surface.n_ages();
  const int n = surface.n_years();
  const Eigen::VectorXd omega = trapezoid_weights(k);

  // Integrated squared reconstruction error per year.
  std::vector<double> v(n);
  for (int j = 0; j < n; ++j) {
    const Eigen::VectorXd resid = surface.values.col(j) - first.reconstruct(j);
    v[j] = (omega.array() * resid.array().square()).sum();
  }

  // Median-based scale: under clean curves v_t / sigma^2 is roughly
  // chi-squared with (ages - K) degrees of freedom.
  const double df = static_cast<double>(k - K);
  const double sigma2 = stats::median(v) / stats::chi_squared_quantile(0.5, df);
  const double cutoff = stats::chi_squared_quantile(chi_sq_level, df);

  Eigen::VectorXd weights = Eigen::VectorXd::Ones(n);
  int flagged = 0;
  for (int j = 0; j < n; ++j) {
    if (sigma2 > 0.0 && v[j] / sigma2 > cutoff) {
      weights(j) = 0.0;
      ++flagged;
    }
  }
  if (flagged == n) throw std::runtime_error("robust_fpca: every year flagged as an outlier");
  return fpca(surface, K, weights);
}

CoherentFit product_ratio_fit(const LogRateSurface& female, const LogRateSurface& male, int K) {
  require_same_grid(female, male, "product_ratio_fit");
  require_finite(female.values, "product_ratio_fit");
  require_finite(male.values, "product_ratio_fit");
  LogRateSurface product = female;
  LogRateSurface ratio = female;
  product.values = 0.5 * (male.values + female.values);
  ratio.values = 0.5 * (male.values - female.values);
  CoherentFit out;
  out.product_fit = fpca(product, K);
  out.ratio_fit = fpca(ratio, K);
  return out;
}

Eigen::MatrixXd stack_surfaces(const std::vector<LogRateSurface>& surfaces) {
  int rows = 0;
  for (const auto& s : surfaces) rows += s.n_ages();
  const int n = surfaces.front().n_years();
  Eigen::MatrixXd stacked(rows, n);
  int at = 0;
  for (const auto& s : surfaces) {
    stacked.middleRows(at, s.n_ages()) = s.values;
    at += s.n_ages();
  }
  return stacked;
}

MultivariateFtsFit multivariate_fts_fit(const std::vector<LogRateSurface>& surfaces, int K) {
  if (surfaces.size() < 2)
    throw std::invalid_argument("multivariate_fts_fit: need at least 2 surfaces");
  for (const auto& s : surfaces) {
    if (s.years != surfaces.front().years)
      throw std::invalid_argument("multivariate_fts_fit: year grid mismatch");
    require_finite(s.values, "multivariate_fts_fit");
  }
  MultivariateFtsFit out;
  int at = 0;
  std::vector<int> stacked_ages;
  for (const auto& s : surfaces) {
    out.offsets.push_back(at);
    out.population_ages.push_back(s.ages);
    stacked_ages.insert(stacked_ages.end(), s.ages.begin(), s.ages.end());
    at += s.n_ages();
  }
  const Eigen::MatrixXd stacked = stack_surfaces(surfaces);
  // Quadrature weights are per-population trapezoids, so each block keeps
  // the same inner product it would have on its own.
  Eigen::VectorXd omega(stacked.rows());
  int pos = 0;
  for (const auto& s : surfaces) {
    omega.segment(pos, s.n_ages()) = trapezoid_weights(s.n_ages());
    pos += s.n_ages();
  }
  out.fit = fpca_matrix(stacked, stacked_ages, surfaces.front().years, K,
                        Eigen::VectorXd::Ones(static_cast<int>(surfaces.front().years.size())),
                        omega);
  return out;
}

Eigen::MatrixXd unstack_block(const MultivariateFtsFit& fit, const Eigen::MatrixXd& stacked,
                              int population) {
  const int rows = static_cast<int>(fit.population_ages[population].size());
  return stacked.middleRows(fit.offsets[population], rows);
}

MultilevelFtsFit multilevel_fts_fit(const std::vector<LogRateSurface>& surfaces, int K_common,
                                    int K_specific) {
  if (surfaces.size() < 2)
    throw std::invalid_argument("multilevel_fts_fit: need at least 2 surfaces");
  for (const auto& s : surfaces) {
    if (s.ages != surfaces.front().ages || s.years != surfaces.front().years)
      throw std::invalid_argument("multilevel_fts_fit: grid mismatch");
    require_finite(s.values, "multilevel_fts_fit");
  }
  const int k = surfaces.front().n_ages();
  const int n = surfaces.front().n_years();
  const int npop = static_cast<int>(surfaces.size());

  MultilevelFtsFit out;
  out.ages = surfaces.front().ages;
  out.years = surfaces.front().years;

  std::vector<Eigen::MatrixXd> centered(npop);
  for (int p = 0; p < npop; ++p) {
    Eigen::VectorXd mu = surfaces[p].values.rowwise().mean();
    out.mu.push_back(mu);
    centered[p] = surfaces[p].values.colwise() - mu;
  }

  // Common trend: decomposition of the cross-population average curve.
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(k, n);
  for (int p = 0; p < npop; ++p) avg += centered[p];
  avg /= npop;
  out.common = fpca_matrix(avg, out.ages, out.years, K_common, Eigen::VectorXd::Ones(n),
                           trapezoid_weights(k));

  // Population-specific residual trends and measurement-error variances.
  out.sigma2.resize(npop);
  for (int p = 0; p < npop; ++p) {
    Eigen::MatrixXd resid(k, n);
    for (int j = 0; j < n; ++j) resid.col(j) = centered[p].col(j) - out.common.reconstruct(j);
    out.specific.push_back(fpca_matrix(resid, out.ages, out.years, K_specific,
                                       Eigen::VectorXd::Ones(n), trapezoid_weights(k)));
    double ss = 0.0;
    for (int j = 0; j < n; ++j) {
      const Eigen::VectorXd final_resid = resid.col(j) - out.specific[p].reconstruct(j);
      ss += final_resid.squaredNorm();
    }
    out.sigma2(p) = ss / static_cast<double>(k * n);
  }
  return out;
}

nlohmann::json fts_fit_to_json(const FtsFit& fit) {
  nlohmann::json j;
  j["spec"] = "FTS";
  j["ages"] = fit.ages;
  j["years"] = fit.years;
  j["K"] = fit.K;
  j["mu"] = std::vector<double>(fit.mu.begin(), fit.mu.end());
  std::vector<std::vector<double>> comps, scores;
  for (int c = 0; c < fit.K; ++c)
    comps.emplace_back(fit.components.col(c).begin(), fit.components.col(c).end());
  for (int t = 0; t < fit.scores.rows(); ++t)
    scores.emplace_back(fit.scores.row(t).begin(), fit.scores.row(t).end());
  j["components"] = comps;
  j["scores"] = scores;
  j["eigenvalues"] = std::vector<double>(fit.eigenvalues.begin(), fit.eigenvalues.end());
  j["obs_weights"] = std::vector<double>(fit.obs_weights.begin(), fit.obs_weights.end());
  j["residual_var"] = std::vector<double>(fit.residual_var.begin(), fit.residual_var.end());
  return j;
}

nlohmann::json multivariate_fit_to_json(const MultivariateFtsFit& fit) {
  nlohmann::json j = fts_fit_to_json(fit.fit);
  j["spec"] = "MFTS";
  j["layout"]["offsets"] = fit.offsets;
  j["layout"]["population_ages"] = fit.population_ages;
  return j;
}

nlohmann::json multilevel_fit_to_json(const MultilevelFtsFit& fit) {
  nlohmann::json j;
  j["spec"] = "MLFTS";
  j["ages"] = fit.ages;
  j["years"] = fit.years;
  for (const auto& mu : fit.mu)
    j["mu"].push_back(std::vector<double>(mu.begin(), mu.end()));
  j["common"] = fts_fit_to_json(fit.common);
  for (const auto& sp : fit.specific) j["specific"].push_back(fts_fit_to_json(sp));
  j["sigma2"] = std::vector<double>(fit.sigma2.begin(), fit.sigma2.end());
  return j;
}

}  // namespace mortfc
