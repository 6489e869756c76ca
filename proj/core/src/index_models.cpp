#include "mortfc/index_models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mortfc/rng.hpp"

namespace mortfc {

namespace {

// Smallest root modulus of 1 - phi_1 x - ... - phi_p x^p (p <= 2).
double min_ar_root_modulus(const Eigen::VectorXd& phi) {
  const int p = static_cast<int>(phi.size());
  if (p == 0) return std::numeric_limits<double>::infinity();
  if (p == 1 || phi(p - 1) == 0.0) {
    const double p1 = phi(0);
    if (p1 == 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / std::abs(p1);
  }
  const double a = phi(1), b = phi(0);  // phi_2 x^2 + phi_1 x - 1 = 0
  const double disc = b * b + 4.0 * a;
  if (disc >= 0.0) {
    const double r1 = (-b + std::sqrt(disc)) / (2.0 * a);
    const double r2 = (-b - std::sqrt(disc)) / (2.0 * a);
    return std::min(std::abs(r1), std::abs(r2));
  }
  return 1.0 / std::sqrt(std::abs(a));
}

bool is_stationary(const Eigen::VectorXd& phi) { return min_ar_root_modulus(phi) > 1.0 + 1e-8; }

// Conditional sum of squares for an ARMA(p, q<=1) with optional intercept on
// the differenced series; also reports the terminal residual.
double css(const std::vector<double>& z, double c, const Eigen::VectorXd& phi, double theta,
           double* last_resid = nullptr, int* nobs = nullptr) {
  const int p = static_cast<int>(phi.size());
  const int len = static_cast<int>(z.size());
  double ss = 0.0;
  double eps_prev = 0.0;
  int count = 0;
  for (int t = p; t < len; ++t) {
    double pred = c;
    for (int i = 0; i < p; ++i) pred += phi(i) * z[t - 1 - i];
    pred += theta * eps_prev;
    const double eps = z[t] - pred;
    ss += eps * eps;
    eps_prev = eps;
    ++count;
  }
  if (last_resid) *last_resid = eps_prev;
  if (nobs) *nobs = count;
  return ss;
}

// Compact Nelder-Mead for the low-dimensional CSS objectives.
Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& start, double scale, int max_iter) {
  const int d = static_cast<int>(start.size());
  std::vector<Eigen::VectorXd> pts(d + 1, start);
  std::vector<double> fv(d + 1);
  for (int i = 1; i <= d; ++i) pts[i](i - 1) += scale;
  for (int i = 0; i <= d; ++i) fv[i] = f(pts[i]);
  for (int it = 0; it < max_iter; ++it) {
    std::vector<int> idx(d + 1);
    for (int i = 0; i <= d; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    std::vector<Eigen::VectorXd> sp(d + 1);
    std::vector<double> sf(d + 1);
    for (int i = 0; i <= d; ++i) {
      sp[i] = pts[idx[i]];
      sf[i] = fv[idx[i]];
    }
    pts = sp;
    fv = sf;
    if (std::abs(fv[d] - fv[0]) < 1e-13 * (1.0 + std::abs(fv[0]))) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < d; ++i) centroid += pts[i];
    centroid /= d;
    const Eigen::VectorXd refl = centroid + (centroid - pts[d]);
    const double fr = f(refl);
    if (fr < fv[0]) {
      const Eigen::VectorXd exp_pt = centroid + 2.0 * (centroid - pts[d]);
      const double fe = f(exp_pt);
      if (fe < fr) {
        pts[d] = exp_pt;
        fv[d] = fe;
      } else {
        pts[d] = refl;
        fv[d] = fr;
      }
    } else if (fr < fv[d - 1]) {
      pts[d] = refl;
      fv[d] = fr;
    } else {
      const Eigen::VectorXd contr = centroid + 0.5 * (pts[d] - centroid);
      const double fc = f(contr);
      if (fc < fv[d]) {
        pts[d] = contr;
        fv[d] = fc;
      } else {
        for (int i = 1; i <= d; ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          fv[i] = f(pts[i]);
        }
      }
    }
  }
  int best = 0;
  for (int i = 1; i <= static_cast<int>(pts.size()) - 1; ++i)
    if (fv[i] < fv[best]) best = i;
  return pts[best];
}

}  // namespace

RwdModel fit_rwd(std::span<const double> series) {
  const int n = static_cast<int>(series.size());
  if (n < 2) throw std::invalid_argument("fit_rwd: need at least 2 observations");
  RwdModel m;
  m.n = n;
  m.last_value = series[n - 1];
  m.drift = (series[n - 1] - series[0]) / static_cast<double>(n - 1);
  if (n == 2) {
    m.innovation_var = 0.0;
    return m;
  }
  double ss = 0.0;
  for (int t = 1; t < n; ++t) {
    const double dev = (series[t] - series[t - 1]) - m.drift;
    ss += dev * dev;
  }
  m.innovation_var = ss / static_cast<double>(n - 2);
  return m;
}

IndexForecast forecast_rwd(const RwdModel& model, int h) {
  if (h < 1) throw std::invalid_argument("forecast_rwd: h must be >= 1");
  IndexForecast f;
  f.mean.resize(h);
  f.variance.resize(h);
  for (int j = 1; j <= h; ++j) {
    f.mean(j - 1) = model.last_value + j * model.drift;
    f.variance(j - 1) = j * model.innovation_var;
  }
  return f;
}

MrwdModel fit_mrwd(const Eigen::MatrixXd& series) {
  const int n = static_cast<int>(series.rows());
  const int q = static_cast<int>(series.cols());
  if (n < 3) throw std::invalid_argument("fit_mrwd: need at least 3 rows");
  if (q < 1) throw std::invalid_argument("fit_mrwd: need at least 1 coordinate");
  MrwdModel m;
  m.n = n;
  m.last_value = series.row(n - 1).transpose();
  Eigen::MatrixXd diffs = series.bottomRows(n - 1) - series.topRows(n - 1);
  m.drift = diffs.colwise().mean().transpose();
  Eigen::MatrixXd centered = diffs.rowwise() - m.drift.transpose();
  m.innovation_cov = centered.transpose() * centered / static_cast<double>(n - 2);
  m.innovation_cov = 0.5 * (m.innovation_cov + m.innovation_cov.transpose());
  return m;
}

MrwdForecast forecast_mrwd(const MrwdModel& model, int h) {
  if (h < 1) throw std::invalid_argument("forecast_mrwd: h must be >= 1");
  MrwdForecast f;
  const int q = static_cast<int>(model.drift.size());
  f.mean.resize(h, q);
  for (int j = 1; j <= h; ++j)
    f.mean.row(j - 1) = (model.last_value + j * model.drift).transpose();
  return f;
}

ArimaModel fit_arima(std::span<const double> series, int p, int q, bool with_drift,
                     std::vector<std::string>* warnings) {
  if (p < 0 || p > 2 || q < 0 || q > 1)
    throw std::invalid_argument("fit_arima: orders restricted to p <= 2, d = 1, q <= 1");
  const int n = static_cast<int>(series.size());
  if (n < p + q + 3) throw std::invalid_argument("fit_arima: series too short for the orders");

  std::vector<double> z(n - 1);
  for (int t = 1; t < n; ++t) z[t - 1] = series[t] - series[t - 1];
  const int len = static_cast<int>(z.size());

  ArimaModel m;
  m.p = p;
  m.q = q;
  m.with_drift = with_drift;
  m.last_level = series[n - 1];
  m.last_diffs.clear();
  for (int i = 0; i < std::max(p, 1); ++i) m.last_diffs.push_back(z[len - 1 - i]);

  auto finalize = [&](double c, const Eigen::VectorXd& phi, double theta) {
    m.drift = c;
    m.ar = phi;
    m.ma = Eigen::VectorXd::Zero(q);
    if (q == 1) m.ma(0) = theta;
    int nobs = 0;
    double last_resid = 0.0;
    const double ss = css(z, c, phi, theta, &last_resid, &nobs);
    const int npar = (with_drift ? 1 : 0) + p + q;
    const int dof = std::max(1, nobs - npar);
    m.innovation_var = ss / static_cast<double>(dof);
    m.last_resid = last_resid;
  };

  if (p == 0 && q == 0) {
    const double c = with_drift
                         ? std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(len)
                         : 0.0;
    finalize(c, Eigen::VectorXd(), 0.0);
    return m;
  }

  // Pure AR: conditional least squares is an exact linear solve.
  auto ols_ar = [&](Eigen::VectorXd& phi_out, double& c_out) {
    const int nobs = len - p;
    const int ncol = (with_drift ? 1 : 0) + p;
    Eigen::MatrixXd X(nobs, ncol);
    Eigen::VectorXd yv(nobs);
    for (int t = p; t < len; ++t) {
      int col = 0;
      if (with_drift) X(t - p, col++) = 1.0;
      for (int i = 0; i < p; ++i) X(t - p, col++) = z[t - 1 - i];
      yv(t - p) = z[t];
    }
    const Eigen::VectorXd coef = (X.transpose() * X).ldlt().solve(X.transpose() * yv);
    int col = 0;
    c_out = with_drift ? coef(col++) : 0.0;
    phi_out.resize(p);
    for (int i = 0; i < p; ++i) phi_out(i) = coef(col++);
  };

  if (q == 0) {
    Eigen::VectorXd phi;
    double c;
    ols_ar(phi, c);
    if (!is_stationary(phi)) {
      if (warnings)
        warnings->push_back("fit_arima: non-stationary AR estimate; falling back to (0,1,0)+drift");
      m.p = 0;
      m.q = 0;
      m.with_drift = true;
      m.fallback = true;
      const double cd = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(len);
      ArimaModel fb = m;
      fb.ar = Eigen::VectorXd();
      int nobs = 0;
      double last_resid = 0.0;
      const double ss = css(z, cd, Eigen::VectorXd(), 0.0, &last_resid, &nobs);
      fb.drift = cd;
      fb.ma = Eigen::VectorXd();
      fb.innovation_var = ss / std::max(1, nobs - 1);
      fb.last_resid = last_resid;
      return fb;
    }
    finalize(c, phi, 0.0);
    return m;
  }

  // ARMA with one MA term: Nelder-Mead on the CSS surface with an
  // admissibility penalty.
  auto objective = [&](const Eigen::VectorXd& par) {
    int idx = 0;
    const double c = with_drift ? par(idx++) : 0.0;
    Eigen::VectorXd phi(p);
    for (int i = 0; i < p; ++i) phi(i) = par(idx++);
    const double theta = par(idx++);
    double penalty = 0.0;
    if (!is_stationary(phi)) penalty += 1e6 * (1.0 + phi.cwiseAbs().sum());
    if (std::abs(theta) >= 0.995) penalty += 1e6 * std::abs(theta);
    if (penalty > 0.0) return 1e12 + penalty;
    return css(z, c, phi, theta);
  };

  Eigen::VectorXd phi0 = Eigen::VectorXd::Zero(p);
  double c0 = 0.0;
  if (p > 0) {
    ols_ar(phi0, c0);
    if (!is_stationary(phi0)) phi0 *= 0.5;
  } else if (with_drift) {
    c0 = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(len);
  }

  const int dim = (with_drift ? 1 : 0) + p + q;
  const std::array<double, 4> theta_starts = {0.0, 0.3, -0.3, 0.6};
  for (std::size_t attempt = 0; attempt < theta_starts.size(); ++attempt) {
    Eigen::VectorXd start(dim);
    int idx = 0;
    if (with_drift) start(idx++) = c0;
    for (int i = 0; i < p; ++i) start(idx++) = phi0(i) * (attempt == 0 ? 1.0 : 0.7);
    start(idx++) = theta_starts[attempt];
    const Eigen::VectorXd sol = nelder_mead(objective, start, 0.2, 600);
    idx = 0;
    const double c = with_drift ? sol(idx++) : 0.0;
    Eigen::VectorXd phi(p);
    for (int i = 0; i < p; ++i) phi(i) = sol(idx++);
    const double theta = sol(idx++);
    if (is_stationary(phi) && std::abs(theta) < 0.995) {
      finalize(c, phi, theta);
      return m;
    }
    if (warnings && attempt + 1 < theta_starts.size())
      warnings->push_back("fit_arima: inadmissible estimate; retrying from a perturbed start");
  }

  if (warnings)
    warnings->push_back("fit_arima: non-stationary AR estimate; falling back to (0,1,0)+drift");
  ArimaModel fb;
  fb.p = 0;
  fb.q = 0;
  fb.with_drift = true;
  fb.fallback = true;
  fb.last_level = series[n - 1];
  fb.last_diffs = {z[len - 1]};
  const double cd = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(len);
  int nobs = 0;
  double last_resid = 0.0;
  const double ss = css(z, cd, Eigen::VectorXd(), 0.0, &last_resid, &nobs);
  fb.drift = cd;
  fb.innovation_var = ss / std::max(1, nobs - 1);
  fb.last_resid = last_resid;
  return fb;
}

Eigen::VectorXd arima_integrated_psi(const ArimaModel& model, int h) {
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd psi_z = Eigen::VectorXd::Zero(h);
  for (int j = 0; j < h; ++j) {
    double v = (j == 0) ? 1.0 : 0.0;
    if (j >= 1) {
      for (int i = 0; i < model.p; ++i)
        if (j - 1 - i >= 0) v += model.ar(i) * psi_z(j - 1 - i);
      if (model.q == 1 && j == 1) v += model.ma(0);
    }
    psi_z(j) = v;
    psi(j) = (j == 0 ? 0.0 : psi(j - 1)) + v;
  }
  return psi;
}

IndexForecast forecast_arima(const ArimaModel& model, int h) {
  if (h < 1) throw std::invalid_argument("forecast_arima: h must be >= 1");
  IndexForecast f;
  f.mean.resize(h);
  f.variance.resize(h);
  std::vector<double> zpath;  // forecast differences
  double level = model.last_level;
  for (int j = 1; j <= h; ++j) {
    double zhat = model.drift;
    for (int i = 0; i < model.p; ++i) {
      const int lag = j - 1 - i;  // index into zpath (future) or last_diffs (past)
      const double zlag = lag >= 1 ? zpath[lag - 1] : model.last_diffs[-lag];
      zhat += model.ar(i) * zlag;
    }
    if (model.q == 1 && j == 1) zhat += model.ma(0) * model.last_resid;
    zpath.push_back(zhat);
    level += zhat;
    f.mean(j - 1) = level;
  }
  const Eigen::VectorXd psi = arima_integrated_psi(model, h);
  double acc = 0.0;
  for (int j = 0; j < h; ++j) {
    acc += psi(j) * psi(j);
    f.variance(j) = model.innovation_var * acc;
  }
  return f;
}

Eigen::MatrixXd simulate_rwd(const RwdModel& model, int h, int n_paths, std::uint64_t seed) {
  if (n_paths < 1) throw std::invalid_argument("simulate_rwd: n_paths must be >= 1");
  Eigen::MatrixXd paths(n_paths, h);
  const double sd = std::sqrt(std::max(0.0, model.innovation_var));
  for (int pth = 0; pth < n_paths; ++pth) {
    RngStream rng(seed, static_cast<std::uint64_t>(pth));
    double y = model.last_value;
    for (int j = 0; j < h; ++j) {
      y += model.drift + sd * rng.normal();
      paths(pth, j) = y;
    }
  }
  return paths;
}

std::vector<Eigen::MatrixXd> simulate_mrwd(const MrwdModel& model, int h, int n_paths,
                                           std::uint64_t seed) {
  if (n_paths < 1) throw std::invalid_argument("simulate_mrwd: n_paths must be >= 1");
  const int q = static_cast<int>(model.drift.size());
  // PSD square root via eigen-decomposition with negative eigenvalues
  // clamped to zero.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.innovation_cov);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();

  std::vector<Eigen::MatrixXd> out;
  out.reserve(n_paths);
  for (int pth = 0; pth < n_paths; ++pth) {
    RngStream rng(seed, static_cast<std::uint64_t>(pth));
    Eigen::MatrixXd path(h, q);
    Eigen::VectorXd y = model.last_value;
    for (int j = 0; j < h; ++j) {
      Eigen::VectorXd zvec(q);
      for (int a = 0; a < q; ++a) zvec(a) = rng.normal();
      y += model.drift + root * zvec;
      path.row(j) = y.transpose();
    }
    out.push_back(std::move(path));
  }
  return out;
}

Eigen::MatrixXd simulate_arima(const ArimaModel& model, int h, int n_paths, std::uint64_t seed) {
  if (n_paths < 1) throw std::invalid_argument("simulate_arima: n_paths must be >= 1");
  Eigen::MatrixXd paths(n_paths, h);
  const double sd = std::sqrt(std::max(0.0, model.innovation_var));
  for (int pth = 0; pth < n_paths; ++pth) {
    RngStream rng(seed, static_cast<std::uint64_t>(pth));
    std::vector<double> zpath;
    double eps_prev = model.last_resid;
    double level = model.last_level;
    for (int j = 1; j <= h; ++j) {
      double zval = model.drift;
      for (int i = 0; i < model.p; ++i) {
        const int lag = j - 1 - i;
        const double zlag = lag >= 1 ? zpath[lag - 1] : model.last_diffs[-lag];
        zval += model.ar(i) * zlag;
      }
      const double eps = sd * rng.normal();
      if (model.q == 1) zval += model.ma(0) * eps_prev;
      zval += eps;
      eps_prev = eps;
      zpath.push_back(zval);
      level += zval;
      paths(pth, j - 1) = level;
    }
  }
  return paths;
}

}  // namespace mortfc
