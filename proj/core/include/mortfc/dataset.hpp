#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

namespace mortfc {

enum class Sex { female, male, total };

std::string to_string(Sex sex);
Sex sex_from_string(const std::string& s);

/// Rectangular deaths/exposures/rates arrays over age x year for one
/// population. Matrices are |ages| x |years|. The last age may be an open
/// group (e.g. 100 meaning 100+). Rates are deaths/exposures cell-wise;
/// cells with non-positive exposure carry NaN rates and are treated as
/// missing downstream.
struct MortalityDataset {
  std::string population_label;
  Sex sex = Sex::total;
  std::vector<int> ages;   // strictly increasing
  std::vector<int> years;  // strictly increasing, unit step
  bool open_age_group = false;
  Eigen::MatrixXd deaths;
  Eigen::MatrixXd exposures;
  Eigen::MatrixXd rates;

  int n_ages() const { return static_cast<int>(ages.size()); }
  int n_years() const { return static_cast<int>(years.size()); }
  int year_index(int year) const;
  int age_index(int age) const;
};

/// Log mortality-rate surface with per-cell trust weights in [0, 1].
/// Cells with zero deaths or non-positive exposure carry weight 0 and a
/// NaN value; weighted cells are always finite.
struct LogRateSurface {
  std::vector<int> ages;
  std::vector<int> years;
  bool open_age_group = false;
  Eigen::MatrixXd values;   // ln m
  Eigen::MatrixXd weights;  // in [0,1]
  bool smoothed = false;

  int n_ages() const { return static_cast<int>(ages.size()); }
  int n_years() const { return static_cast<int>(years.size()); }
};

/// Load an HMD-format period table pair (deaths + exposures) for one sex.
/// Both sources are whitespace- or comma-delimited tables with columns
/// Year, Age, Female, Male, Total; the open age group is written like
/// "110+". The result covers the intersection of the years and ages present
/// in both sources. Cells with non-positive or missing exposure get weight 0
/// semantics (NaN rate) and a warning rather than a failure.
MortalityDataset load_hmd_table(std::istream& deaths_source, std::istream& exposures_source,
                                const std::string& population_label, Sex sex,
                                std::vector<std::string>* warnings = nullptr);

MortalityDataset load_hmd_table(const std::string& deaths_path, const std::string& exposures_path,
                                const std::string& population_label, Sex sex,
                                std::vector<std::string>* warnings = nullptr);

/// Write the dataset back to HMD-like text (deaths and exposures files).
/// The dataset's own sex column is populated; the others are written as
/// missing ("."). Values round-trip bit-for-bit through load_hmd_table.
void write_hmd_table(const MortalityDataset& ds, std::ostream& deaths_out,
                     std::ostream& exposures_out);

/// Restrict to [min_age, max_age], aggregating all rows above max_age into
/// an open group at max_age (summing deaths and exposures, re-deriving the
/// rate) and dropping rows below min_age.
MortalityDataset truncate_ages(const MortalityDataset& ds, int min_age, int max_age);

/// Restrict to the year window [first_year, last_year].
MortalityDataset window_years(const MortalityDataset& ds, int first_year, int last_year);

/// Log-rate surface with the zero-cell policy applied: cells with zero
/// deaths or non-positive exposure get weight 0 and NaN value.
LogRateSurface log_rate_surface(const MortalityDataset& ds);

/// Drop surface rows below min_age.
LogRateSurface truncate_surface(const LogRateSurface& s, int min_age);

LogRateSurface window_surface_years(const LogRateSurface& s, int first_year, int last_year);

/// CSV export with header row `age,year,value`.
void write_surface_csv(const LogRateSurface& s, std::ostream& out);
void write_matrix_csv(const std::vector<int>& ages, const std::vector<int>& years,
                      const Eigen::MatrixXd& values, std::ostream& out);

/// Shortest-round-trip decimal formatting used by all text outputs.
std::string format_double(double v);

}  // namespace mortfc
