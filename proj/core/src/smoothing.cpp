#include "mortfc/smoothing.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mortfc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Pentadiagonal symmetric positive-definite system, LDL^T factored in band
// storage. Bandwidth 2 covers diag(w) + lambda * D'D for the
// second-difference penalty D.
class PentaLdlt {
 public:
  explicit PentaLdlt(const Eigen::VectorXd& diag, const Eigen::VectorXd& off1,
                     const Eigen::VectorXd& off2)
      : n_(static_cast<int>(diag.size())), d_(diag), l1_(off1), l2_(off2) {
    // In-place banded LDL^T: after the loop d_ holds D, l1_/l2_ hold the
    // unit-lower-triangular multipliers.
    for (int i = 0; i < n_; ++i) {
      double di = d_(i);
      if (i >= 1) di -= l1_(i - 1) * l1_(i - 1) * d_(i - 1);
      if (i >= 2) di -= l2_(i - 2) * l2_(i - 2) * d_(i - 2);
      d_(i) = di;
      if (i + 1 < n_) {
        double v = l1_(i);
        if (i >= 1) v -= l1_(i - 1) * l2_(i - 1) * d_(i - 1);
        l1_(i) = v / d_(i);
      }
      if (i + 2 < n_) l2_(i) = l2_(i) / d_(i);
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd x = b;
    for (int i = 0; i < n_; ++i) {
      if (i >= 1) x(i) -= l1_(i - 1) * x(i - 1);
      if (i >= 2) x(i) -= l2_(i - 2) * x(i - 2);
    }
    for (int i = 0; i < n_; ++i) x(i) /= d_(i);
    for (int i = n_ - 1; i >= 0; --i) {
      if (i + 1 < n_) x(i) -= l1_(i) * x(i + 1);
      if (i + 2 < n_) x(i) -= l2_(i) * x(i + 2);
    }
    return x;
  }

  // Diagonal of the inverse via the Takahashi equations, which are exact on
  // the band for a banded factorization.
  Eigen::VectorXd inverse_diagonal() const {
    // z(i, j-i) stores Z_{ij} for j in [i, i+2].
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n_, 3);
    for (int i = n_ - 1; i >= 0; --i) {
      for (int off = 2; off >= 0; --off) {
        const int j = i + off;
        if (j >= n_) continue;
        double v = (off == 0) ? 1.0 / d_(i) : 0.0;
        // Z_ij -= sum_{k>i} L_ki Z_kj, with L nonzero only for k <= i+2.
        for (int k = i + 1; k <= std::min(i + 2, n_ - 1); ++k) {
          const double lki = (k == i + 1) ? l1_(i) : l2_(i);
          const int a = std::min(k, j), b = std::max(k, j);
          if (b - a <= 2) v -= lki * z(a, b - a);
        }
        z(i, off) = v;
      }
    }
    return z.col(0);
  }

 private:
  int n_;
  Eigen::VectorXd d_, l1_, l2_;
};

// Band representation of diag(w) + lambda * D'D for the (n-2) x n second
// difference operator.
void penalty_bands(const Eigen::VectorXd& w, double lambda, int n, Eigen::VectorXd& diag,
                   Eigen::VectorXd& off1, Eigen::VectorXd& off2) {
  diag = w;
  off1 = Eigen::VectorXd::Zero(std::max(0, n - 1));
  off2 = Eigen::VectorXd::Zero(std::max(0, n - 2));
  for (int r = 0; r + 2 < n; ++r) {
    // Row r of D has entries (1, -2, 1) at columns r, r+1, r+2.
    diag(r) += lambda;
    diag(r + 1) += 4.0 * lambda;
    diag(r + 2) += lambda;
    off1(r) += -2.0 * lambda;
    off1(r + 1) += -2.0 * lambda;
    off2(r) += lambda;
  }
}

Eigen::VectorXd interpolate_weighted(const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const int n = static_cast<int>(y.size());
  Eigen::VectorXd g(n);
  int prev = -1;
  for (int i = 0; i < n; ++i) {
    if (w(i) > 0.0) {
      g(i) = y(i);
      if (prev < 0) {
        for (int j = 0; j < i; ++j) g(j) = y(i);
      } else {
        for (int j = prev + 1; j < i; ++j) {
          const double f = static_cast<double>(j - prev) / static_cast<double>(i - prev);
          g(j) = (1.0 - f) * y(prev) + f * y(i);
        }
      }
      prev = i;
    }
  }
  if (prev < 0) throw std::invalid_argument("no weighted cells to interpolate");
  for (int j = prev + 1; j < n; ++j) g(j) = y(prev);
  return g;
}

}  // namespace

namespace detail {

Eigen::VectorXd penalized_fit(const Eigen::VectorXd& y, const Eigen::VectorXd& w, double lambda) {
  const int n = static_cast<int>(y.size());
  if (lambda < 0.0) throw std::invalid_argument("penalized_fit: penalty must be nonnegative");
  if (lambda == 0.0) return interpolate_weighted(y, w);
  Eigen::VectorXd diag, off1, off2;
  penalty_bands(w, lambda, n, diag, off1, off2);
  Eigen::VectorXd rhs(n);
  for (int i = 0; i < n; ++i) rhs(i) = w(i) > 0.0 ? w(i) * y(i) : 0.0;
  const PentaLdlt fact(diag, off1, off2);
  Eigen::VectorXd g = fact.solve(rhs);
  // Iterative refinement against the unabsorbed operator. For very large
  // penalties the assembled bands lose the weight terms to rounding, so the
  // residual is evaluated as W x + lambda * D'(D x) instead.
  auto apply_a = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd ax(n);
    for (int i = 0; i < n; ++i) ax(i) = (w(i) > 0.0 ? w(i) : 0.0) * x(i);
    for (int r = 0; r + 2 < n; ++r) {
      const double u = lambda * (x(r) - 2.0 * x(r + 1) + x(r + 2));
      ax(r) += u;
      ax(r + 1) -= 2.0 * u;
      ax(r + 2) += u;
    }
    return ax;
  };
  for (int pass = 0; pass < 3; ++pass) g += fact.solve(rhs - apply_a(g));
  return g;
}

double smoother_hat_trace(const Eigen::VectorXd& w, double lambda) {
  const int n = static_cast<int>(w.size());
  Eigen::VectorXd diag, off1, off2;
  penalty_bands(w, lambda, n, diag, off1, off2);
  const Eigen::VectorXd zdiag = PentaLdlt(diag, off1, off2).inverse_diagonal();
  double tr = 0.0;
  for (int i = 0; i < n; ++i) tr += zdiag(i) * w(i);
  return tr;
}

double gcv_score(const Eigen::VectorXd& y, const Eigen::VectorXd& w, double lambda) {
  const Eigen::VectorXd g = penalized_fit(y, w, lambda);
  int nw = 0;
  double rss = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    if (w(i) > 0.0) {
      ++nw;
      rss += w(i) * (y(i) - g(i)) * (y(i) - g(i));
    }
  }
  const double tr = smoother_hat_trace(w, lambda);
  const double denom = 1.0 - tr / static_cast<double>(nw);
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return (rss / static_cast<double>(nw)) / (denom * denom);
}

Eigen::VectorXd pav_non_decreasing(const Eigen::VectorXd& y) {
  const int n = static_cast<int>(y.size());
  std::vector<double> level;
  std::vector<int> count;
  level.reserve(n);
  count.reserve(n);
  for (int i = 0; i < n; ++i) {
    level.push_back(y(i));
    count.push_back(1);
    while (level.size() >= 2 && level[level.size() - 2] > level.back()) {
      const double merged = (level[level.size() - 2] * count[count.size() - 2] +
                             level.back() * count.back()) /
                            static_cast<double>(count[count.size() - 2] + count.back());
      count[count.size() - 2] += count.back();
      level[level.size() - 2] = merged;
      level.pop_back();
      count.pop_back();
    }
  }
  Eigen::VectorXd out(n);
  int pos = 0;
  for (std::size_t b = 0; b < level.size(); ++b)
    for (int r = 0; r < count[b]; ++r) out(pos++) = level[b];
  return out;
}

}  // namespace detail

LogRateSurface smooth_log_rates(const MortalityDataset& ds, const SmoothOptions& options,
                                std::vector<std::string>* warnings) {
  if (options.penalty && *options.penalty < 0.0)
    throw std::invalid_argument("smooth_log_rates: penalty must be nonnegative");
  if (ds.n_ages() < 4) throw std::invalid_argument("smooth_log_rates: need at least 4 ages");

  const LogRateSurface raw = log_rate_surface(ds);
  LogRateSurface out = raw;
  out.smoothed = true;

  const int k = ds.n_ages();
  const int n = ds.n_years();
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd y = raw.values.col(j);
    Eigen::VectorXd w(k);
    int nw = 0;
    double wsum = 0.0;
    for (int i = 0; i < k; ++i) {
      w(i) = raw.weights(i, j) > 0.0 ? ds.deaths(i, j) : 0.0;
      if (w(i) > 0.0) {
        ++nw;
        wsum += w(i);
      }
    }
    if (nw < 4) {
      if (warnings)
        warnings->push_back("year " + std::to_string(ds.years[j]) +
                            ": fewer than 4 weighted cells; copied unsmoothed");
      out.values.col(j) = raw.values.col(j);
      out.weights.col(j) = raw.weights.col(j);
      continue;
    }
    // Deaths-proportional weights, normalized to mean one over trusted cells
    // so that penalty values are comparable across years.
    w *= static_cast<double>(nw) / wsum;

    double lam;
    if (options.penalty) {
      lam = *options.penalty;
    } else {
      lam = 1.0;
      double best = std::numeric_limits<double>::infinity();
      for (int e = 0; e <= 12; ++e) {
        const double cand = std::pow(10.0, -2.0 + 0.5 * e);
        const double score = detail::gcv_score(y, w, cand);
        if (score < best) {
          best = score;
          lam = cand;
        }
      }
    }

    Eigen::VectorXd g = detail::penalized_fit(y, w, lam);
    if (options.monotone) g = detail::pav_non_decreasing(g);
    out.values.col(j) = g;
    out.weights.col(j) = Eigen::VectorXd::Ones(k);
  }
  return out;
}

LogRateSurface smooth_log_rates(const MortalityDataset& ds, double penalty, bool monotone,
                                std::vector<std::string>* warnings) {
  SmoothOptions opt;
  opt.penalty = penalty;
  opt.monotone = monotone;
  return smooth_log_rates(ds, opt, warnings);
}

}  // namespace mortfc
