#pragma once

#include <Eigen/Core>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mortfc/dataset.hpp"
#include "mortfc/rng.hpp"

namespace testutil {

/// Poisson draw: inversion for small means, rounded-normal tail otherwise
/// (indistinguishable at the exposures used in these tests).
inline double poisson_draw(mortfc::RngStream& rng, double lambda) {
  if (lambda <= 0.0) return 0.0;
  if (lambda < 30.0) {
    const double limit = std::exp(-lambda);
    double prod = rng.uniform();
    double count = 0.0;
    while (prod > limit) {
      prod *= rng.uniform();
      count += 1.0;
    }
    return count;
  }
  return std::max(0.0, std::round(lambda + std::sqrt(lambda) * rng.normal()));
}

inline std::vector<int> age_range(int lo, int hi) {
  std::vector<int> v;
  for (int a = lo; a <= hi; ++a) v.push_back(a);
  return v;
}

inline mortfc::MortalityDataset dataset_from_log_rates(const std::vector<int>& ages,
                                                       const std::vector<int>& years,
                                                       const Eigen::MatrixXd& log_rates,
                                                       double exposure = 1e5) {
  mortfc::MortalityDataset ds;
  ds.population_label = "synthetic";
  ds.sex = mortfc::Sex::female;
  ds.ages = ages;
  ds.years = years;
  ds.open_age_group = true;
  const int k = static_cast<int>(ages.size());
  const int n = static_cast<int>(years.size());
  ds.rates = log_rates.array().exp();
  ds.exposures = Eigen::MatrixXd::Constant(k, n, exposure);
  ds.deaths = ds.rates * exposure;
  return ds;
}

/// Rank-1 log-rate surface alpha + beta kappa' with sum(beta) = 1 and
/// sum(kappa) = 0; beta strictly positive.
struct Rank1Surface {
  std::vector<int> ages;
  std::vector<int> years;
  Eigen::VectorXd alpha, beta, kappa;
  Eigen::MatrixXd log_rates;
};

inline Rank1Surface make_rank1_surface(int n_ages = 41, int n_years = 31, int first_age = 60,
                                       int first_year = 1975, std::uint64_t seed = 7) {
  Rank1Surface s;
  s.ages = age_range(first_age, first_age + n_ages - 1);
  for (int j = 0; j < n_years; ++j) s.years.push_back(first_year + j);
  s.alpha.resize(n_ages);
  s.beta.resize(n_ages);
  mortfc::RngStream rng(seed);
  for (int i = 0; i < n_ages; ++i) {
    const double x = static_cast<double>(i) / (n_ages - 1);
    s.alpha(i) = -5.5 + 3.5 * x;                      // log rates rise with age
    s.beta(i) = 0.5 + std::cos(2.5 * x) + 1.0 + 0.2 * rng.uniform();
  }
  s.beta /= s.beta.sum();
  s.kappa.resize(n_years);
  for (int j = 0; j < n_years; ++j)
    s.kappa(j) = 12.0 - 24.0 * j / (n_years - 1.0) + 0.8 * rng.normal();
  s.kappa.array() -= s.kappa.mean();
  s.log_rates = s.alpha.replicate(1, n_years) + s.beta * s.kappa.transpose();
  return s;
}

/// Draws Poisson deaths around exp(eta) * exposure.
inline mortfc::MortalityDataset poisson_dataset(const std::vector<int>& ages,
                                                const std::vector<int>& years,
                                                const Eigen::MatrixXd& eta, double exposure,
                                                std::uint64_t seed) {
  mortfc::MortalityDataset ds;
  ds.population_label = "simulated";
  ds.sex = mortfc::Sex::female;
  ds.ages = ages;
  ds.years = years;
  ds.open_age_group = true;
  const int k = static_cast<int>(ages.size());
  const int n = static_cast<int>(years.size());
  ds.deaths.resize(k, n);
  ds.exposures = Eigen::MatrixXd::Constant(k, n, exposure);
  ds.rates.resize(k, n);
  mortfc::RngStream rng(seed);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      ds.deaths(i, j) = poisson_draw(rng, exposure * std::exp(eta(i, j)));
      ds.rates(i, j) = ds.deaths(i, j) / exposure;
    }
  }
  return ds;
}

/// Small random dataset for fitter stress tests (5 ages x 8 years by default).
inline mortfc::MortalityDataset random_small_dataset(std::uint64_t seed, int n_ages = 5,
                                                     int n_years = 8) {
  mortfc::RngStream rng(seed);
  Eigen::MatrixXd eta(n_ages, n_years);
  for (int i = 0; i < n_ages; ++i)
    for (int j = 0; j < n_years; ++j) eta(i, j) = -3.5 + 1.5 * rng.uniform();
  auto ages = age_range(60, 60 + n_ages - 1);
  std::vector<int> years;
  for (int j = 0; j < n_years; ++j) years.push_back(2000 + j);
  const double exposure = 200.0 + 800.0 * rng.uniform();
  return poisson_dataset(ages, years, eta, exposure, seed + 1);
}

/// Unique temporary directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mortfc_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// HMD-format text pair for one synthetic population covering ages 0..110
/// (110+ open) and the given years; returns the two file paths.
inline void write_synthetic_hmd(const std::filesystem::path& deaths_path,
                                const std::filesystem::path& exposures_path, int first_year,
                                int last_year, std::uint64_t seed) {
  mortfc::RngStream rng(seed);
  std::ofstream dout(deaths_path);
  std::ofstream eout(exposures_path);
  dout << "Synthetic population, Deaths (period 1x1)\n\n";
  dout << "Year  Age  Female  Male  Total\n";
  eout << "Synthetic population, Exposure to risk (period 1x1)\n\n";
  eout << "Year  Age  Female  Male  Total\n";
  // Gompertz-like age profile with a slow improvement trend; deterministic
  // noise keeps the surfaces full rank.
  for (int year = first_year; year <= last_year; ++year) {
    const double t = year - first_year;
    for (int age = 0; age <= 110; ++age) {
      const std::string age_tok = age == 110 ? "110+" : std::to_string(age);
      double lm_f = -9.2 + 0.082 * age - 0.012 * t * (1.0 - 0.004 * age);
      if (age < 5) lm_f += 2.2 - 0.8 * age;  // infant hump
      lm_f += 0.015 * rng.normal();
      const double lm_m = lm_f + 0.35 + 0.01 * rng.normal();
      const double exp_f = 40000.0 * std::exp(-0.028 * age) + 500.0;
      const double exp_m = 0.96 * exp_f;
      const double d_f = std::max(1.0, std::round(exp_f * std::exp(std::min(lm_f, -0.05))));
      const double d_m = std::max(1.0, std::round(exp_m * std::exp(std::min(lm_m, -0.05))));
      dout << year << "  " << age_tok << "  " << d_f << "  " << d_m << "  " << (d_f + d_m)
           << "\n";
      eout << year << "  " << age_tok << "  " << exp_f << "  " << exp_m << "  "
           << (exp_f + exp_m) << "\n";
    }
  }
}

}  // namespace testutil
