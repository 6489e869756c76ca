#include "mortfc/lee_carter.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mortfc {

namespace {

// Root of f on a bracket around center; the bracket is widened x10 up to
// five times if it does not straddle a sign change.
double bisect_root(const std::function<double(double)>& f, double center, double half_width) {
  double lo = center - half_width;
  double hi = center + half_width;
  double flo = f(lo);
  double fhi = f(hi);
  int widen = 0;
  while (flo * fhi > 0.0) {
    if (++widen > 5) throw std::runtime_error("bisection bracket failure after widening x10 five times");
    half_width *= 10.0;
    lo = center - half_width;
    hi = center + half_width;
    flo = f(lo);
    fhi = f(hi);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if (flo * fm <= 0.0) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return 0.5 * (lo + hi);
}

double golden_minimize(const std::function<double(double)>& f, double lo, double hi,
                       double tol_abs) {
  const double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol_abs) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

std::string to_string(LcAdjustment a) {
  switch (a) {
    case LcAdjustment::none: return "none";
    case LcAdjustment::refit_total_deaths: return "refit_total_deaths";
    case LcAdjustment::fit_e0: return "fit_e0";
    case LcAdjustment::fit_death_distribution: return "fit_death_distribution";
  }
  return "none";
}

double life_expectancy(const Eigen::VectorXd& rates) {
  const int k = static_cast<int>(rates.size());
  if (k < 1) throw std::invalid_argument("life_expectancy: empty rate vector");
  double l = 1.0;
  double total = 0.0;
  for (int i = 0; i + 1 < k; ++i) {
    const double m = rates(i);
    if (!(m >= 0.0)) throw std::invalid_argument("life_expectancy: negative or missing rate");
    double q = m / (1.0 + 0.5 * m);
    if (q > 1.0) q = 1.0;
    const double d = l * q;
    total += l - 0.5 * d;
    l -= d;
  }
  const double m_open = rates(k - 1);
  if (!(m_open > 0.0)) throw std::invalid_argument("life_expectancy: open-group rate must be positive");
  total += l / m_open;
  return total;
}

LcFit fit_lc(const MortalityDataset& ds, LcAdjustment adjustment,
             std::vector<std::string>* warnings) {
  const int k = ds.n_ages();
  const int n = ds.n_years();
  if (k < 2 || n < 2) throw std::invalid_argument("fit_lc: need at least 2 ages and 2 years");

  const LogRateSurface surf = log_rate_surface(ds);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j)
      if (ds.exposures(i, j) > 0.0 && ds.deaths(i, j) > 0.0 && !(ds.rates(i, j) > 0.0))
        throw std::invalid_argument(
            "fit_lc: non-positive rate on a weighted cell; apply the zero-cell policy upstream");

  LcFit fit;
  fit.ages = ds.ages;
  fit.years = ds.years;
  fit.open_age_group = ds.open_age_group;
  fit.adjustment = adjustment;

  // Row means over weighted cells.
  fit.alpha.resize(k);
  int n_missing = 0;
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    int c = 0;
    for (int j = 0; j < n; ++j) {
      if (surf.weights(i, j) > 0.0) {
        s += surf.values(i, j);
        ++c;
      } else {
        ++n_missing;
      }
    }
    if (c == 0)
      throw std::invalid_argument("fit_lc: age " + std::to_string(ds.ages[i]) +
                                  " has no weighted cells; apply the zero-cell policy upstream");
    fit.alpha(i) = s / c;
  }
  if (n_missing > 0 && warnings)
    warnings->push_back("fit_lc: " + std::to_string(n_missing) +
                        " zero-weight cells imputed during SVD");

  // Centered matrix with iterative imputation at missing cells.
  Eigen::MatrixXd z(k, n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j)
      z(i, j) = surf.weights(i, j) > 0.0 ? surf.values(i, j) - fit.alpha(i) : 0.0;

  Eigen::VectorXd u, v;
  double s1 = 0.0;
  const int rounds = n_missing > 0 ? 10 : 1;
  for (int round = 0; round < rounds; ++round) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u = svd.matrixU().col(0);
    v = svd.matrixV().col(0);
    s1 = svd.singularValues()(0);
    if (round + 1 < rounds) {
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j)
          if (surf.weights(i, j) == 0.0) z(i, j) = s1 * u(i) * v(j);
    }
  }

  const double usum = u.sum();
  if (s1 <= 1e-14 * std::max(1.0, fit.alpha.cwiseAbs().maxCoeff()) || std::abs(usum) < 1e-12) {
    fit.beta = Eigen::VectorXd::Constant(k, 1.0 / k);
    fit.kappa_raw = Eigen::VectorXd::Zero(n);
  } else {
    fit.beta = u / usum;
    fit.kappa_raw = s1 * usum * v;
    const double kmean = fit.kappa_raw.mean();
    fit.alpha += fit.beta * kmean;
    fit.kappa_raw.array() -= kmean;
  }

  // Per-year score adjustment.
  fit.kappa = fit.kappa_raw;
  if (adjustment != LcAdjustment::none) {
    for (int j = 0; j < n; ++j) {
      std::vector<int> cells;  // ages with usable exposure
      for (int i = 0; i < k; ++i)
        if (std::isfinite(ds.exposures(i, j)) && ds.exposures(i, j) > 0.0) cells.push_back(i);
      if (cells.empty()) continue;

      const double kappa0 = fit.kappa_raw(j);
      const double width = std::max(1.0, 2.0 * std::abs(kappa0));
      switch (adjustment) {
        case LcAdjustment::refit_total_deaths: {
          double observed = 0.0;
          for (int i : cells) observed += ds.deaths(i, j);
          auto f = [&](double kap) {
            double implied = 0.0;
            for (int i : cells)
              implied += ds.exposures(i, j) * std::exp(fit.alpha(i) + fit.beta(i) * kap);
            return implied - observed;
          };
          fit.kappa(j) = bisect_root(f, kappa0, width);
          break;
        }
        case LcAdjustment::fit_e0: {
          Eigen::VectorXd observed_rates(k);
          for (int i = 0; i < k; ++i) {
            observed_rates(i) = surf.weights(i, j) > 0.0
                                    ? ds.rates(i, j)
                                    : std::exp(fit.alpha(i) + fit.beta(i) * kappa0);
          }
          const double target = life_expectancy(observed_rates);
          auto f = [&](double kap) {
            Eigen::VectorXd implied(k);
            for (int i = 0; i < k; ++i) implied(i) = std::exp(fit.alpha(i) + fit.beta(i) * kap);
            return life_expectancy(implied) - target;
          };
          fit.kappa(j) = bisect_root(f, kappa0, width);
          break;
        }
        case LcAdjustment::fit_death_distribution: {
          auto deviance = [&](double kap) {
            double dev = 0.0;
            for (int i : cells) {
              const double d = ds.deaths(i, j);
              const double mu = ds.exposures(i, j) * std::exp(fit.alpha(i) + fit.beta(i) * kap);
              dev += 2.0 * ((d > 0.0 ? d * std::log(d / mu) : 0.0) - (d - mu));
            }
            return dev;
          };
          fit.kappa(j) = golden_minimize(deviance, kappa0 - 10.0 * width, kappa0 + 10.0 * width,
                                         1e-10);
          break;
        }
        case LcAdjustment::none: break;
      }
    }
  }

  // Residual variances against the adjusted scores.
  fit.residual_var.resize(k);
  for (int i = 0; i < k; ++i) {
    double ss = 0.0;
    int c = 0;
    for (int j = 0; j < n; ++j) {
      if (surf.weights(i, j) > 0.0) {
        const double r = surf.values(i, j) - fit.alpha(i) - fit.beta(i) * fit.kappa(j);
        ss += r * r;
        ++c;
      }
    }
    fit.residual_var(i) = c > 0 ? ss / c : 0.0;
  }
  fit.beta_sq = fit.beta.cwiseProduct(fit.beta);
  fit.fitted_log_rates = fit.alpha.replicate(1, n) + fit.beta * fit.kappa.transpose();
  return fit;
}

Eigen::MatrixXd lc_forecast_variance(const LcFit& fit, const Eigen::VectorXd& u) {
  for (int h = 0; h < u.size(); ++h)
    if (u(h) < 0.0) throw std::invalid_argument("lc_forecast_variance: negative score variance");
  const int k = static_cast<int>(fit.ages.size());
  Eigen::MatrixXd out(k, u.size());
  for (int i = 0; i < k; ++i)
    for (int h = 0; h < u.size(); ++h) out(i, h) = fit.beta_sq(i) * u(h) + fit.residual_var(i);
  return out;
}

nlohmann::json lc_fit_to_json(const LcFit& fit) {
  nlohmann::json j;
  j["spec"] = "LC_GAUSSIAN";
  j["adjustment"] = to_string(fit.adjustment);
  j["ages"] = fit.ages;
  j["years"] = fit.years;
  j["alpha"] = std::vector<double>(fit.alpha.begin(), fit.alpha.end());
  j["betas"] = std::vector<std::vector<double>>{
      std::vector<double>(fit.beta.begin(), fit.beta.end())};
  j["kappas"] = std::vector<std::vector<double>>{
      std::vector<double>(fit.kappa.begin(), fit.kappa.end())};
  j["gamma"] = std::vector<double>{};
  j["xc"] = nullptr;
  double rss = 0.0;
  for (int i = 0; i < fit.residual_var.size(); ++i) rss += fit.residual_var(i);
  j["deviance"] = rss;
  j["converged"] = true;
  return j;
}

}  // namespace mortfc
