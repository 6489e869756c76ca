#include "mortfc/gapc.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mortfc {

namespace {

double basis_value(AgeBasis basis, double x, double xbar, double sigma2) {
  switch (basis) {
    case AgeBasis::free_fn: return std::numeric_limits<double>::quiet_NaN();
    case AgeBasis::one: return 1.0;
    case AgeBasis::age_minus_mean: return x - xbar;
    case AgeBasis::mean_minus_age: return xbar - x;
    case AgeBasis::quadratic_centered: return (x - xbar) * (x - xbar) - sigma2;
    case AgeBasis::hinge_mean_minus_age: return std::max(xbar - x, 0.0);
  }
  return 0.0;
}

void validate_spec(const GapcSpec& spec) {
  if (spec.age_terms.empty() && !spec.has_static_age)
    throw std::invalid_argument("fit_gapc: spec has no predictor terms");
  for (std::size_t i = 0; i < spec.age_terms.size(); ++i)
    for (std::size_t j = i + 1; j < spec.age_terms.size(); ++j)
      if (spec.age_terms[i].basis != AgeBasis::free_fn &&
          spec.age_terms[i].basis == spec.age_terms[j].basis)
        throw std::invalid_argument(
            "fit_gapc: duplicated fixed age basis makes the spec structurally unidentifiable");
}

// Working state for the blockwise fitter.
struct FitState {
  const MortalityDataset* ds;
  Eigen::MatrixXd w;    // 1 for usable cells
  Eigen::MatrixXd eta;  // current predictor

  double mu(int i, int j) const { return ds->exposures(i, j) * std::exp(eta(i, j)); }
};

// Guarded joint Newton step over a cell list. sens(p, i, j) gives the
// sensitivity of parameter p at a cell; the step is halved until the local
// log-likelihood does not decrease (the objective is concave in any linear
// reparametrization, so this terminates).
template <typename Cells, typename Sens>
Eigen::VectorXd joint_update(FitState& st, const Cells& cells, int np, const Sens& sens) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(np);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(np, np);
  Eigen::VectorXd s(np);
  for (const auto& [i, j] : cells) {
    if (st.w(i, j) == 0.0) continue;
    for (int p = 0; p < np; ++p) s(p) = sens(p, i, j);
    const double mu = st.mu(i, j);
    grad += s * (st.ds->deaths(i, j) - mu);
    hess += s * s.transpose() * mu;
  }

  // Parameters without curvature information stay put.
  std::vector<int> active;
  for (int p = 0; p < np; ++p)
    if (hess(p, p) > 1e-300 && std::isfinite(grad(p))) active.push_back(p);
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(np);
  if (active.empty()) return delta;
  const int na = static_cast<int>(active.size());
  Eigen::MatrixXd ha(na, na);
  Eigen::VectorXd ga(na);
  for (int a = 0; a < na; ++a) {
    ga(a) = grad(active[a]);
    for (int b = 0; b < na; ++b) ha(a, b) = hess(active[a], active[b]);
  }
  ha.diagonal().array() += 1e-12 * ha.diagonal().maxCoeff();
  const Eigen::VectorXd da = ha.ldlt().solve(ga);
  if (!da.allFinite()) return delta;
  for (int a = 0; a < na; ++a) delta(active[a]) = da(a);

  for (int half = 0; half < 40; ++half) {
    double dll = 0.0;
    for (const auto& [i, j] : cells) {
      if (st.w(i, j) == 0.0) continue;
      double step = 0.0;
      for (int p = 0; p < np; ++p)
        if (delta(p) != 0.0) step += delta(p) * sens(p, i, j);
      if (step == 0.0) continue;
      dll += st.ds->deaths(i, j) * step -
             st.ds->exposures(i, j) * (std::exp(st.eta(i, j) + step) - std::exp(st.eta(i, j)));
    }
    if (std::isfinite(dll) && dll >= 0.0) break;
    delta *= 0.5;
    if (half == 39) delta.setZero();
  }
  if (delta.isZero(0.0)) return delta;
  for (const auto& [i, j] : cells) {
    double step = 0.0;
    for (int p = 0; p < np; ++p)
      if (delta(p) != 0.0) step += delta(p) * sens(p, i, j);
    st.eta(i, j) += step;
  }
  return delta;
}

struct RowCells {
  int i, n;
  struct It {
    int i, j;
    std::pair<int, int> operator*() const { return {i, j}; }
    It& operator++() { ++j; return *this; }
    bool operator!=(const It& o) const { return j != o.j; }
  };
  It begin() const { return {i, 0}; }
  It end() const { return {i, n}; }
};

struct ColCells {
  int j, k;
  struct It {
    int i, j;
    std::pair<int, int> operator*() const { return {i, j}; }
    It& operator++() { ++i; return *this; }
    bool operator!=(const It& o) const { return i != o.i; }
  };
  It begin() const { return {0, j}; }
  It end() const { return {k, j}; }
};

// Polynomial trend of gamma over the included cohorts, in powers of the
// centered cohort index. Two projection passes keep the raw cohort moments
// near the rounding floor despite the large cohort-year magnitudes; the
// subtraction is evaluated in centered form for the same reason.
struct GammaTrend {
  double a = 0.0, b = 0.0, d = 0.0;  // on {1, (c - center), (c - center)^2}
  double center = 0.0;
};

GammaTrend remove_gamma_trend(GapcFit& fit, int degree) {
  std::vector<double> cs;
  std::vector<int> idx;
  for (std::size_t c = 0; c < fit.cohorts.size(); ++c) {
    if (fit.cohort_included[c]) {
      cs.push_back(static_cast<double>(fit.cohorts[c]));
      idx.push_back(static_cast<int>(c));
    }
  }
  GammaTrend total;
  const int n = static_cast<int>(cs.size());
  if (n == 0) return total;
  degree = std::min(degree, n - 1);
  if (degree < 0) degree = 0;
  double center = 0.0;
  for (double c : cs) center += c;
  center /= n;
  total.center = center;

  const int dim = degree + 1;
  Eigen::MatrixXd X(n, dim);
  for (int r = 0; r < n; ++r) {
    const double cc = cs[r] - center;
    X(r, 0) = 1.0;
    if (dim > 1) X(r, 1) = cc;
    if (dim > 2) X(r, 2) = cc * cc;
  }
  const Eigen::MatrixXd gram = X.transpose() * X;
  const auto solver = gram.ldlt();

  for (int pass = 0; pass < 2; ++pass) {
    Eigen::VectorXd y(n);
    for (int r = 0; r < n; ++r) y(r) = fit.gamma(idx[r]);
    const Eigen::VectorXd beta = solver.solve(X.transpose() * y);
    total.a += beta(0);
    if (dim > 1) total.b += beta(1);
    if (dim > 2) total.d += beta(2);
    for (std::size_t c = 0; c < fit.cohorts.size(); ++c) {
      const double cc = static_cast<double>(fit.cohorts[c]) - center;
      double poly = beta(0);
      if (dim > 1) poly += beta(1) * cc;
      if (dim > 2) poly += beta(2) * cc * cc;
      fit.gamma(static_cast<int>(c)) -= poly;
    }
  }
  return total;
}

}  // namespace

std::string to_string(GapcModel m) {
  switch (m) {
    case GapcModel::lc_poisson: return "LC_POISSON";
    case GapcModel::rh: return "RH";
    case GapcModel::apc: return "APC";
    case GapcModel::cbd: return "CBD";
    case GapcModel::m6: return "M6";
    case GapcModel::m7: return "M7";
    case GapcModel::m8: return "M8";
    case GapcModel::plat: return "PLAT";
  }
  return "?";
}

GapcModel gapc_model_from_string(const std::string& s) {
  for (GapcModel m : {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc, GapcModel::cbd,
                      GapcModel::m6, GapcModel::m7, GapcModel::m8, GapcModel::plat})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown GAPC model '" + s + "'");
}

GapcSpec gapc_spec(GapcModel model) {
  GapcSpec s;
  s.model = model;
  switch (model) {
    case GapcModel::lc_poisson:
      s.has_static_age = true;
      s.age_terms = {{AgeBasis::free_fn}};
      s.cohort = CohortModulation::none;
      s.constraints.kappa_sum_zero = {0};
      s.constraints.beta_sum_one = {0};
      break;
    case GapcModel::rh:
      s.has_static_age = true;
      s.age_terms = {{AgeBasis::free_fn}};
      s.cohort = CohortModulation::free_fn;
      s.constraints.kappa_sum_zero = {0};
      s.constraints.beta_sum_one = {0};
      s.constraints.beta_cohort_sum_one = true;
      s.constraints.gamma_moments = 0;
      break;
    case GapcModel::apc:
      s.has_static_age = true;
      s.age_terms = {{AgeBasis::one}};
      s.cohort = CohortModulation::one;
      s.constraints.kappa_sum_zero = {0};
      s.constraints.gamma_moments = 1;
      break;
    case GapcModel::cbd:
      s.has_static_age = false;
      s.age_terms = {{AgeBasis::one}, {AgeBasis::age_minus_mean}};
      s.cohort = CohortModulation::none;
      break;
    case GapcModel::m6:
      s.has_static_age = false;
      s.age_terms = {{AgeBasis::one}, {AgeBasis::age_minus_mean}};
      s.cohort = CohortModulation::one;
      s.constraints.gamma_moments = 1;
      break;
    case GapcModel::m7:
      s.has_static_age = false;
      s.age_terms = {{AgeBasis::one}, {AgeBasis::age_minus_mean}, {AgeBasis::quadratic_centered}};
      s.cohort = CohortModulation::one;
      s.constraints.gamma_moments = 2;
      break;
    case GapcModel::m8:
      s.has_static_age = false;
      s.age_terms = {{AgeBasis::one}, {AgeBasis::age_minus_mean}};
      s.cohort = CohortModulation::xc_minus_age;
      s.constraints.gamma_moments = 0;
      break;
    case GapcModel::plat:
      s.has_static_age = true;
      s.age_terms = {{AgeBasis::one}, {AgeBasis::mean_minus_age}, {AgeBasis::hinge_mean_minus_age}};
      s.cohort = CohortModulation::one;
      s.constraints.kappa_sum_zero = {0, 1, 2};
      s.constraints.gamma_moments = 2;
      break;
  }
  return s;
}

Eigen::MatrixXd gapc_predictor(const GapcFit& fit) {
  const int k = static_cast<int>(fit.ages.size());
  const int n = static_cast<int>(fit.years.size());
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(k, n);
  if (fit.n_terms() > 0) eta = fit.betas * fit.kappas;
  if (fit.alpha.size() > 0) eta.colwise() += fit.alpha;
  if (fit.spec.cohort != CohortModulation::none) {
    const int c0 = fit.cohorts.front();
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j)
        eta(i, j) += fit.beta_cohort(i) * fit.gamma(fit.years[j] - fit.ages[i] - c0);
  }
  return eta;
}

double gapc_deviance(const GapcFit& fit, const MortalityDataset& ds) {
  double dev = 0.0;
  for (int i = 0; i < ds.n_ages(); ++i) {
    for (int j = 0; j < ds.n_years(); ++j) {
      const double e = ds.exposures(i, j);
      const double d = ds.deaths(i, j);
      if (!(std::isfinite(e) && e > 0.0 && std::isfinite(d))) continue;
      const double mu = e * std::exp(fit.fitted_log_rates(i, j));
      dev += 2.0 * ((d > 0.0 ? d * std::log(d / mu) : 0.0) - (d - mu));
    }
  }
  return dev;
}

GapcFit fit_gapc(const GapcSpec& spec, const MortalityDataset& ds, double tol, int max_iter,
                 bool identify) {
  validate_spec(spec);
  const int k = ds.n_ages();
  const int n = ds.n_years();
  if (k < 3 || n < 3) throw std::invalid_argument("fit_gapc: need at least 3 ages and 3 years");
  if (max_iter < 1) throw std::invalid_argument("fit_gapc: max_iter must be >= 1");

  GapcFit fit;
  fit.spec = spec;
  fit.ages = ds.ages;
  fit.years = ds.years;
  const int nt = fit.n_terms();

  double xbar = 0.0;
  for (int a : ds.ages) xbar += a;
  xbar /= k;
  fit.mean_age = xbar;
  double s2 = 0.0;
  for (int a : ds.ages) s2 += (a - xbar) * (a - xbar);
  fit.sigma2_age = s2 / k;

  FitState st;
  st.ds = &ds;
  st.w.resize(k, n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j)
      st.w(i, j) = (std::isfinite(ds.exposures(i, j)) && ds.exposures(i, j) > 0.0 &&
                    std::isfinite(ds.deaths(i, j)) && ds.deaths(i, j) >= 0.0)
                       ? 1.0
                       : 0.0;

  // Cohort bookkeeping: corner cohorts with fewer than 3 observed cells stay
  // clamped at zero and are excluded from the constraint sums.
  const bool has_cohort = spec.cohort != CohortModulation::none;
  std::vector<std::vector<std::pair<int, int>>> cohort_cells;
  if (has_cohort) {
    const int c_min = ds.years.front() - ds.ages.back();
    const int c_max = ds.years.back() - ds.ages.front();
    for (int c = c_min; c <= c_max; ++c) fit.cohorts.push_back(c);
    cohort_cells.resize(fit.cohorts.size());
    const int c0 = c_min;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j)
        if (st.w(i, j) > 0.0) cohort_cells[ds.years[j] - ds.ages[i] - c0].push_back({i, j});
  }
  fit.cohort_included.assign(fit.cohorts.size(), false);
  for (std::size_t c = 0; c < fit.cohorts.size(); ++c)
    fit.cohort_included[c] = cohort_cells[c].size() >= 3;

  // Initialization: alpha at the per-age empirical log rate, free betas
  // uniform, indices at zero.
  if (spec.has_static_age) {
    fit.alpha.resize(k);
    for (int i = 0; i < k; ++i) {
      double dsum = 0.0, esum = 0.0;
      for (int j = 0; j < n; ++j) {
        if (st.w(i, j) > 0.0) {
          dsum += ds.deaths(i, j);
          esum += ds.exposures(i, j);
        }
      }
      if (!(esum > 0.0))
        throw std::invalid_argument("fit_gapc: age " + std::to_string(ds.ages[i]) +
                                    " has no usable cells");
      fit.alpha(i) = std::log(std::max(dsum, 1e-8) / esum);
    }
  }
  fit.betas.resize(k, std::max(nt, 1));
  for (int m = 0; m < nt; ++m)
    for (int i = 0; i < k; ++i)
      fit.betas(i, m) = spec.age_terms[m].basis == AgeBasis::free_fn
                            ? 1.0 / k
                            : basis_value(spec.age_terms[m].basis, ds.ages[i], xbar,
                                          fit.sigma2_age);
  fit.kappas = Eigen::MatrixXd::Zero(std::max(nt, 1), n);
  fit.gamma = Eigen::VectorXd::Zero(static_cast<int>(fit.cohorts.size()));
  fit.xc = spec.cohort == CohortModulation::xc_minus_age ? xbar
                                                         : std::numeric_limits<double>::quiet_NaN();
  fit.beta_cohort.resize(k);
  auto materialize_cohort_modulation = [&]() {
    for (int i = 0; i < k; ++i) {
      switch (spec.cohort) {
        case CohortModulation::none: fit.beta_cohort(i) = 0.0; break;
        case CohortModulation::one: fit.beta_cohort(i) = 1.0; break;
        case CohortModulation::free_fn: break;  // maintained directly
        case CohortModulation::xc_minus_age: fit.beta_cohort(i) = fit.xc - ds.ages[i]; break;
      }
    }
  };
  if (spec.cohort == CohortModulation::free_fn)
    fit.beta_cohort = Eigen::VectorXd::Constant(k, 1.0 / k);
  else
    materialize_cohort_modulation();

  fit.fitted_log_rates = gapc_predictor(fit);
  st.eta = fit.fitted_log_rates;

  auto deviance_now = [&]() {
    double dev = 0.0;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) {
        if (st.w(i, j) == 0.0) continue;
        const double d = ds.deaths(i, j);
        const double mu = st.mu(i, j);
        dev += 2.0 * ((d > 0.0 ? d * std::log(d / mu) : 0.0) - (d - mu));
      }
    return dev;
  };

  fit.deviance_trace.clear();
  fit.deviance_trace.push_back(deviance_now());

  // Which parameters live on an age row: the static term plus any free
  // modulations.
  std::vector<int> free_terms;
  for (int m = 0; m < nt; ++m)
    if (spec.age_terms[m].basis == AgeBasis::free_fn) free_terms.push_back(m);
  const bool cohort_free = spec.cohort == CohortModulation::free_fn;
  const int row_np = (spec.has_static_age ? 1 : 0) + static_cast<int>(free_terms.size()) +
                     (cohort_free ? 1 : 0);
  const int c0 = has_cohort ? fit.cohorts.front() : 0;

  // Joint Fisher-scoring block over every parameter, run at the end of each
  // cycle. Blockwise sweeps alone crawl when cohort and period terms are
  // nearly collinear (the M7/Plat quadratic-age and cohort directions), which
  // can strand a nested model above its parent's deviance.
  // Parameter layout: [alpha | free betas | kappas | included gammas | xc].
  std::vector<int> included_idx;
  for (std::size_t c = 0; c < fit.cohorts.size(); ++c)
    if (fit.cohort_included[c]) included_idx.push_back(static_cast<int>(c));
  std::vector<int> gamma_pos(fit.cohorts.size(), -1);
  const int alpha_off = 0;
  int param_at = spec.has_static_age ? k : 0;
  std::vector<int> beta_off(nt + 1, -1);
  for (int m : free_terms) {
    beta_off[m] = param_at;
    param_at += k;
  }
  if (cohort_free) {
    beta_off[nt] = param_at;  // slot nt marks the cohort modulation
    param_at += k;
  }
  const int kappa_off = param_at;
  param_at += nt * n;
  const int gamma_off = param_at;
  for (std::size_t g = 0; g < included_idx.size(); ++g)
    gamma_pos[included_idx[g]] = gamma_off + static_cast<int>(g);
  param_at += static_cast<int>(included_idx.size());
  const int xc_pos = spec.cohort == CohortModulation::xc_minus_age ? param_at++ : -1;
  const int np = param_at;

  // Sensitivities of eta at one cell, as (parameter, value) pairs.
  std::vector<std::pair<int, double>> entries;
  auto cell_entries = [&](int i, int j) {
    entries.clear();
    if (spec.has_static_age) entries.emplace_back(alpha_off + i, 1.0);
    for (int m : free_terms) entries.emplace_back(beta_off[m] + i, fit.kappas(m, j));
    for (int m = 0; m < nt; ++m) entries.emplace_back(kappa_off + m * n + j, fit.betas(i, m));
    if (has_cohort) {
      const int c = fit.years[j] - fit.ages[i] - c0;
      if (cohort_free) entries.emplace_back(beta_off[nt] + i, fit.gamma(c));
      if (gamma_pos[c] >= 0) entries.emplace_back(gamma_pos[c], fit.beta_cohort(i));
      if (xc_pos >= 0) entries.emplace_back(xc_pos, fit.gamma(c));
    }
  };
  auto apply_step = [&](const Eigen::VectorXd& delta) {
    if (spec.has_static_age)
      for (int i = 0; i < k; ++i) fit.alpha(i) += delta(alpha_off + i);
    for (int m : free_terms)
      for (int i = 0; i < k; ++i) fit.betas(i, m) += delta(beta_off[m] + i);
    if (cohort_free)
      for (int i = 0; i < k; ++i) fit.beta_cohort(i) += delta(beta_off[nt] + i);
    for (int m = 0; m < nt; ++m)
      for (int j = 0; j < n; ++j) fit.kappas(m, j) += delta(kappa_off + m * n + j);
    for (std::size_t g = 0; g < included_idx.size(); ++g)
      fit.gamma(included_idx[g]) += delta(gamma_off + static_cast<int>(g));
    if (xc_pos >= 0) {
      fit.xc += delta(xc_pos);
      materialize_cohort_modulation();
    }
  };
  auto joint_fisher_step = [&]() {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(np);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(np, np);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < n; ++j) {
        if (st.w(i, j) == 0.0) continue;
        cell_entries(i, j);
        const double mu = st.mu(i, j);
        const double resid = ds.deaths(i, j) - mu;
        for (const auto& [p, sp] : entries) {
          grad(p) += sp * resid;
          for (const auto& [q, sq] : entries) hess(p, q) += sp * sq * mu;
        }
      }
    }
    // Identifiability null directions make the information singular; a
    // scaled ridge keeps the solve stable without touching eta.
    hess.diagonal().array() += 1e-9 * (hess.trace() / np + 1.0);
    const Eigen::VectorXd delta = hess.ldlt().solve(grad);
    if (!delta.allFinite()) return;

    // The free-beta/kappa cross terms make eta quadratic in the step, so
    // each trial step is evaluated exactly and rolled back if it does not
    // improve the likelihood.
    const GapcFit snapshot = fit;
    auto ll_now = [&]() {
      double ll = 0.0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j) {
          if (st.w(i, j) == 0.0) continue;
          ll += ds.deaths(i, j) * st.eta(i, j) - ds.exposures(i, j) * std::exp(st.eta(i, j));
        }
      return ll;
    };
    const double ll_before = ll_now();
    double scale = 1.0;
    for (int half = 0; half < 30; ++half) {
      apply_step(Eigen::VectorXd(scale * delta));
      st.eta = gapc_predictor(fit);
      const double ll_after = ll_now();
      if (std::isfinite(ll_after) && ll_after >= ll_before) return;
      fit = snapshot;
      st.eta = gapc_predictor(fit);
      scale *= 0.5;
    }
  };

  for (int iter = 0; iter < max_iter; ++iter) {
    // Row block: alpha and the free age modulations, jointly per age.
    if (row_np > 0) {
      for (int i = 0; i < k; ++i) {
        auto sens = [&](int p, int ii, int j) -> double {
          int at = 0;
          if (spec.has_static_age) {
            if (p == at) return 1.0;
            ++at;
          }
          for (int f : free_terms) {
            if (p == at) return fit.kappas(f, j);
            ++at;
          }
          return fit.gamma(fit.years[j] - fit.ages[ii] - c0);
        };
        const Eigen::VectorXd delta = joint_update(st, RowCells{i, n}, row_np, sens);
        int at = 0;
        if (spec.has_static_age) fit.alpha(i) += delta(at++);
        for (int f : free_terms) fit.betas(i, f) += delta(at++);
        if (cohort_free) fit.beta_cohort(i) += delta(at);
      }
    }

    // Column block: all period indices jointly per year.
    if (nt > 0) {
      for (int j = 0; j < n; ++j) {
        auto sens = [&](int p, int i, int) -> double { return fit.betas(i, p); };
        const Eigen::VectorXd delta = joint_update(st, ColCells{j, k}, nt, sens);
        for (int m = 0; m < nt; ++m) fit.kappas(m, j) += delta(m);
      }
    }

    // Cohort block.
    if (has_cohort) {
      for (std::size_t c = 0; c < fit.cohorts.size(); ++c) {
        if (!fit.cohort_included[c]) continue;
        auto sens = [&](int, int i, int) -> double { return fit.beta_cohort(i); };
        const Eigen::VectorXd delta = joint_update(st, cohort_cells[c], 1, sens);
        fit.gamma(static_cast<int>(c)) += delta(0);
      }
      if (spec.cohort == CohortModulation::xc_minus_age) {
        // Profile x_c by golden-section; the likelihood is concave in x_c
        // because eta is affine in it.
        auto ll_at = [&](double xc) {
          double ll = 0.0;
          const double shift_base = xc - fit.xc;
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < n; ++j) {
              if (st.w(i, j) == 0.0) continue;
              const double g = fit.gamma(fit.years[j] - fit.ages[i] - c0);
              const double etav = st.eta(i, j) + shift_base * g;
              ll += ds.deaths(i, j) * etav - ds.exposures(i, j) * std::exp(etav);
            }
          }
          return ll;
        };
        const double invphi = 0.6180339887498949;
        double a = ds.ages.front(), b = ds.ages.back();
        double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
        double f1 = ll_at(x1), f2 = ll_at(x2);
        for (int gs = 0; gs < 40 && b - a > 1e-7; ++gs) {
          if (f1 >= f2) {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = ll_at(x1);
          } else {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = ll_at(x2);
          }
        }
        const double xc_new = 0.5 * (a + b);
        if (ll_at(xc_new) >= ll_at(fit.xc)) {
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < n; ++j)
              st.eta(i, j) += (xc_new - fit.xc) * fit.gamma(fit.years[j] - fit.ages[i] - c0);
          fit.xc = xc_new;
          materialize_cohort_modulation();
        }
      }
    }

    joint_fisher_step();

    const double dev = deviance_now();
    const double prev = fit.deviance_trace.back();
    fit.deviance_trace.push_back(dev);
    if (std::abs(prev - dev) < tol * (std::abs(prev) + 0.1)) {
      fit.converged = true;
      break;
    }
  }

  fit.fitted_log_rates = st.eta;
  if (identify) fit = apply_identifiability(fit);
  return fit;
}

GapcFit apply_identifiability(const GapcFit& input) {
  GapcFit fit = input;
  const GapcSpec& spec = fit.spec;
  const int n = static_cast<int>(fit.years.size());
  const int k = static_cast<int>(fit.ages.size());

  auto kappa_mean = [&](int m) { return fit.kappas.row(m).mean(); };

  switch (spec.model) {
    case GapcModel::lc_poisson:
    case GapcModel::rh: {
      // Location of kappa into alpha, then the beta/kappa scale trade.
      const double km = kappa_mean(0);
      fit.alpha += fit.betas.col(0) * km;
      fit.kappas.row(0).array() -= km;
      const double s = fit.betas.col(0).sum();
      if (std::abs(s) > 1e-12) {
        fit.betas.col(0) /= s;
        fit.kappas.row(0) *= s;
      }
      if (spec.model == GapcModel::rh) {
        const GammaTrend t = remove_gamma_trend(fit, 0);
        fit.alpha += fit.beta_cohort * t.a;
        const double s0 = fit.beta_cohort.sum();
        if (std::abs(s0) > 1e-12) {
          fit.beta_cohort /= s0;
          fit.gamma *= s0;
        }
      }
      break;
    }
    case GapcModel::apc: {
      const GammaTrend t = remove_gamma_trend(fit, 1);
      // a + b(c - m) with c = t - x splits into kappa and alpha pieces.
      for (int i = 0; i < k; ++i) fit.alpha(i) -= t.b * fit.ages[i];
      for (int j = 0; j < n; ++j) fit.kappas(0, j) += t.a + t.b * (fit.years[j] - t.center);
      const double km = kappa_mean(0);
      fit.kappas.row(0).array() -= km;
      fit.alpha.array() += km;
      break;
    }
    case GapcModel::cbd:
      break;
    case GapcModel::m6: {
      const GammaTrend t = remove_gamma_trend(fit, 1);
      for (int j = 0; j < n; ++j) {
        const double tau = fit.years[j] - fit.mean_age - t.center;
        fit.kappas(0, j) += t.a + t.b * tau;
        fit.kappas(1, j) -= t.b;
      }
      break;
    }
    case GapcModel::m7: {
      const GammaTrend t = remove_gamma_trend(fit, 2);
      for (int j = 0; j < n; ++j) {
        const double tau = fit.years[j] - fit.mean_age - t.center;
        fit.kappas(0, j) += t.a + t.b * tau + t.d * (tau * tau + fit.sigma2_age);
        fit.kappas(1, j) -= t.b + 2.0 * t.d * tau;
        fit.kappas(2, j) += t.d;
      }
      break;
    }
    case GapcModel::m8: {
      const GammaTrend t = remove_gamma_trend(fit, 0);
      for (int j = 0; j < n; ++j) {
        fit.kappas(0, j) += t.a * (fit.xc - fit.mean_age);
        fit.kappas(1, j) -= t.a;
      }
      break;
    }
    case GapcModel::plat: {
      const GammaTrend t = remove_gamma_trend(fit, 2);
      for (int j = 0; j < n; ++j) {
        const double tau = fit.years[j] - fit.mean_age - t.center;
        fit.kappas(0, j) += t.a + t.b * tau + t.d * tau * tau;
        fit.kappas(1, j) += t.b + 2.0 * t.d * tau;
      }
      for (int i = 0; i < k; ++i) {
        const double xi = fit.mean_age - fit.ages[i];
        fit.alpha(i) += t.d * xi * xi;
      }
      // Center each period index into alpha through its age basis.
      for (int m = 0; m < 3; ++m) {
        const double km = kappa_mean(m);
        fit.kappas.row(m).array() -= km;
        fit.alpha += fit.betas.col(m) * km;
      }
      break;
    }
  }

  fit.fitted_log_rates = gapc_predictor(fit);
  return fit;
}

std::vector<std::pair<std::string, double>> gapc_constraint_residuals(const GapcFit& fit) {
  std::vector<std::pair<std::string, double>> out;
  const GapcConstraintSet& cs = fit.spec.constraints;
  for (int m : cs.kappa_sum_zero)
    out.emplace_back("sum kappa^(" + std::to_string(m + 1) + ")", fit.kappas.row(m).sum());
  for (int m : cs.beta_sum_one)
    out.emplace_back("sum beta^(" + std::to_string(m + 1) + ") - 1",
                     fit.betas.col(m).sum() - 1.0);
  if (cs.beta_cohort_sum_one)
    out.emplace_back("sum beta^(0) - 1", fit.beta_cohort.sum() - 1.0);
  if (cs.gamma_moments >= 0) {
    // Evaluated about the included-cohort mean: equivalent to the raw
    // moments (an invertible triangular map) without the cancellation error
    // that raw cohort years would inject.
    double cm = 0.0;
    int cnt = 0;
    for (std::size_t c = 0; c < fit.cohorts.size(); ++c)
      if (fit.cohort_included[c]) {
        cm += fit.cohorts[c];
        ++cnt;
      }
    if (cnt > 0) cm /= cnt;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < fit.cohorts.size(); ++c) {
      if (!fit.cohort_included[c]) continue;
      const double cv = fit.cohorts[c] - cm;
      const double g = fit.gamma(static_cast<int>(c));
      s0 += g;
      s1 += cv * g;
      s2 += cv * cv * g;
    }
    out.emplace_back("sum gamma", s0);
    if (cs.gamma_moments >= 1) out.emplace_back("sum c*gamma", s1);
    if (cs.gamma_moments >= 2) out.emplace_back("sum c^2*gamma", s2);
  }
  return out;
}

nlohmann::json gapc_fit_to_json(const GapcFit& fit) {
  nlohmann::json j;
  j["spec"] = to_string(fit.spec.model);
  j["ages"] = fit.ages;
  j["years"] = fit.years;
  if (fit.alpha.size() > 0)
    j["alpha"] = std::vector<double>(fit.alpha.begin(), fit.alpha.end());
  else
    j["alpha"] = nullptr;
  std::vector<std::vector<double>> betas, kappas;
  for (int m = 0; m < fit.n_terms(); ++m) {
    betas.emplace_back(fit.betas.col(m).begin(), fit.betas.col(m).end());
    kappas.emplace_back(fit.kappas.row(m).begin(), fit.kappas.row(m).end());
  }
  j["betas"] = betas;
  j["kappas"] = kappas;
  if (fit.spec.cohort != CohortModulation::none) {
    j["gamma"] = std::vector<double>(fit.gamma.begin(), fit.gamma.end());
    j["cohorts"] = fit.cohorts;
  } else {
    j["gamma"] = std::vector<double>{};
  }
  if (std::isfinite(fit.xc))
    j["xc"] = fit.xc;
  else
    j["xc"] = nullptr;
  j["deviance"] = fit.deviance_trace.empty() ? 0.0 : fit.deviance_trace.back();
  j["converged"] = fit.converged;
  return j;
}

}  // namespace mortfc
