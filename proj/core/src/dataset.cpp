#include "mortfc/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mortfc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct HmdCell {
  double female = kNaN;
  double male = kNaN;
  double total = kNaN;
};

struct HmdTable {
  // (year, age) -> values; open_ages marks ages parsed from an "N+" token.
  std::map<std::pair<int, int>, HmdCell> cells;
  std::set<int> years;
  std::set<int> ages;
  std::set<int> open_ages;
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      // Treat runs of delimiters as one; HMD tables are fixed-width.
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool iequals(const std::string& a, const char* b) {
  std::string lb = b;
  if (a.size() != lb.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(a[i])) != lb[i]) return false;
  return true;
}

double parse_value(const std::string& tok, int line_no, const char* what) {
  if (tok == "." || tok == "NA" || tok == "na") return kNaN;
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": non-numeric " +
                             what + " field '" + tok + "'");
  }
  if (pos != tok.size())
    throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": non-numeric " +
                             what + " field '" + tok + "'");
  return v;
}

HmdTable parse_hmd(std::istream& in, const char* source_name) {
  HmdTable table;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  int col_year = -1, col_age = -1, col_f = -1, col_m = -1, col_t = -1;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (!header_seen) {
      // Scan for the header row; HMD files carry a free-text preamble.
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (iequals(fields[i], "year")) col_year = static_cast<int>(i);
        if (iequals(fields[i], "age")) col_age = static_cast<int>(i);
        if (iequals(fields[i], "female")) col_f = static_cast<int>(i);
        if (iequals(fields[i], "male")) col_m = static_cast<int>(i);
        if (iequals(fields[i], "total")) col_t = static_cast<int>(i);
      }
      if (col_year >= 0 && col_age >= 0 && (col_f >= 0 || col_m >= 0 || col_t >= 0))
        header_seen = true;
      continue;
    }
    const std::size_t need = static_cast<std::size_t>(
        std::max({col_year, col_age, col_f, col_m, col_t})) + 1;
    if (fields.size() < need)
      throw std::runtime_error(std::string(source_name) + ": short row at line " +
                               std::to_string(line_no));
    const int year = static_cast<int>(parse_value(fields[col_year], line_no, "Year"));
    std::string age_tok = fields[col_age];
    bool open = false;
    if (!age_tok.empty() && (age_tok.back() == '+')) {
      open = true;
      age_tok.pop_back();
    }
    const int age = static_cast<int>(parse_value(age_tok, line_no, "Age"));
    HmdCell cell;
    if (col_f >= 0) cell.female = parse_value(fields[col_f], line_no, "Female");
    if (col_m >= 0) cell.male = parse_value(fields[col_m], line_no, "Male");
    if (col_t >= 0) cell.total = parse_value(fields[col_t], line_no, "Total");
    table.cells[{year, age}] = cell;
    table.years.insert(year);
    table.ages.insert(age);
    if (open) table.open_ages.insert(age);
  }
  if (!header_seen)
    throw std::runtime_error(std::string(source_name) +
                             ": no header row with Year/Age columns found");
  return table;
}

double pick(const HmdCell& c, Sex sex) {
  switch (sex) {
    case Sex::female: return c.female;
    case Sex::male: return c.male;
    case Sex::total: return c.total;
  }
  return kNaN;
}

}  // namespace

std::string to_string(Sex sex) {
  switch (sex) {
    case Sex::female: return "female";
    case Sex::male: return "male";
    case Sex::total: return "total";
  }
  return "total";
}

Sex sex_from_string(const std::string& s) {
  if (s == "female" || s == "f") return Sex::female;
  if (s == "male" || s == "m") return Sex::male;
  if (s == "total" || s == "t") return Sex::total;
  throw std::invalid_argument("unknown sex '" + s + "'");
}

int MortalityDataset::year_index(int year) const {
  auto it = std::find(years.begin(), years.end(), year);
  if (it == years.end()) throw std::out_of_range("year " + std::to_string(year) + " not in dataset");
  return static_cast<int>(it - years.begin());
}

int MortalityDataset::age_index(int age) const {
  auto it = std::find(ages.begin(), ages.end(), age);
  if (it == ages.end()) throw std::out_of_range("age " + std::to_string(age) + " not in dataset");
  return static_cast<int>(it - ages.begin());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

MortalityDataset load_hmd_table(std::istream& deaths_source, std::istream& exposures_source,
                                const std::string& population_label, Sex sex,
                                std::vector<std::string>* warnings) {
  const HmdTable deaths = parse_hmd(deaths_source, "deaths");
  const HmdTable exposures = parse_hmd(exposures_source, "exposures");

  std::vector<int> years;
  std::set_intersection(deaths.years.begin(), deaths.years.end(), exposures.years.begin(),
                        exposures.years.end(), std::back_inserter(years));
  std::vector<int> ages;
  std::set_intersection(deaths.ages.begin(), deaths.ages.end(), exposures.ages.begin(),
                        exposures.ages.end(), std::back_inserter(ages));
  if (years.empty() || ages.empty())
    throw std::runtime_error("deaths and exposures sources share no year/age coverage");
  for (std::size_t i = 1; i < years.size(); ++i)
    if (years[i] != years[i - 1] + 1)
      throw std::runtime_error("year coverage has a gap between " + std::to_string(years[i - 1]) +
                               " and " + std::to_string(years[i]));

  MortalityDataset ds;
  ds.population_label = population_label;
  ds.sex = sex;
  ds.ages = ages;
  ds.years = years;
  ds.open_age_group = deaths.open_ages.count(ages.back()) > 0 ||
                      exposures.open_ages.count(ages.back()) > 0;
  const int k = ds.n_ages();
  const int n = ds.n_years();
  ds.deaths.resize(k, n);
  ds.exposures.resize(k, n);
  ds.rates.resize(k, n);

  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::pair<int, int> key{years[j], ages[i]};
      auto dit = deaths.cells.find(key);
      auto eit = exposures.cells.find(key);
      if (dit == deaths.cells.end() || eit == exposures.cells.end()) {
        const char* which = dit == deaths.cells.end() ? "deaths" : "exposures";
        throw std::runtime_error("missing cell in " + std::string(which) + " source: year " +
                                 std::to_string(years[j]) + ", age " + std::to_string(ages[i]));
      }
      const double d = pick(dit->second, sex);
      const double e = pick(eit->second, sex);
      ds.deaths(i, j) = d;
      ds.exposures(i, j) = e;
      if (std::isfinite(e) && e > 0.0 && std::isfinite(d)) {
        ds.rates(i, j) = d / e;
      } else {
        ds.rates(i, j) = kNaN;
        if (warnings)
          warnings->push_back("non-positive or missing exposure at year " +
                              std::to_string(years[j]) + ", age " + std::to_string(ages[i]) +
                              "; cell treated as missing");
      }
    }
  }
  return ds;
}

MortalityDataset load_hmd_table(const std::string& deaths_path, const std::string& exposures_path,
                                const std::string& population_label, Sex sex,
                                std::vector<std::string>* warnings) {
  std::ifstream din(deaths_path);
  if (!din) throw std::runtime_error("cannot read " + deaths_path);
  std::ifstream ein(exposures_path);
  if (!ein) throw std::runtime_error("cannot read " + exposures_path);
  return load_hmd_table(din, ein, population_label, sex, warnings);
}

void write_hmd_table(const MortalityDataset& ds, std::ostream& deaths_out,
                     std::ostream& exposures_out) {
  auto write_one = [&](std::ostream& out, const Eigen::MatrixXd& m) {
    out << ds.population_label << ", " << (&m == &ds.deaths ? "Deaths" : "Exposure to risk")
        << " (period 1x1)\n\n";
    out << "Year  Age  Female  Male  Total\n";
    for (int j = 0; j < ds.n_years(); ++j) {
      for (int i = 0; i < ds.n_ages(); ++i) {
        std::string age_tok = std::to_string(ds.ages[i]);
        if (ds.open_age_group && i == ds.n_ages() - 1) age_tok += "+";
        const std::string val = std::isfinite(m(i, j)) ? format_double(m(i, j)) : ".";
        const char* f = ds.sex == Sex::female ? val.c_str() : ".";
        const char* ml = ds.sex == Sex::male ? val.c_str() : ".";
        const char* t = ds.sex == Sex::total ? val.c_str() : ".";
        out << ds.years[j] << "  " << age_tok << "  " << f << "  " << ml << "  " << t << "\n";
      }
    }
  };
  write_one(deaths_out, ds.deaths);
  write_one(exposures_out, ds.exposures);
}

MortalityDataset truncate_ages(const MortalityDataset& ds, int min_age, int max_age) {
  if (min_age >= max_age) throw std::invalid_argument("truncate_ages: min_age must be < max_age");
  std::vector<int> keep;
  for (int i = 0; i < ds.n_ages(); ++i)
    if (ds.ages[i] >= min_age && ds.ages[i] <= max_age) keep.push_back(i);
  if (keep.empty()) throw std::invalid_argument("truncate_ages: empty resulting age range");

  MortalityDataset out;
  out.population_label = ds.population_label;
  out.sex = ds.sex;
  out.years = ds.years;
  const int n = ds.n_years();
  const int k = static_cast<int>(keep.size());
  out.ages.reserve(k);
  for (int i : keep) out.ages.push_back(ds.ages[i]);
  out.deaths.resize(k, n);
  out.exposures.resize(k, n);
  out.rates.resize(k, n);
  for (int r = 0; r < k; ++r) {
    out.deaths.row(r) = ds.deaths.row(keep[r]);
    out.exposures.row(r) = ds.exposures.row(keep[r]);
    out.rates.row(r) = ds.rates.row(keep[r]);
  }

  bool aggregated = false;
  if (out.ages.back() == max_age) {
    for (int i = 0; i < ds.n_ages(); ++i) {
      if (ds.ages[i] > max_age) {
        aggregated = true;
        out.deaths.row(k - 1) += ds.deaths.row(i);
        out.exposures.row(k - 1) += ds.exposures.row(i);
      }
    }
    if (aggregated) {
      for (int j = 0; j < n; ++j) {
        const double e = out.exposures(k - 1, j);
        out.rates(k - 1, j) = e > 0.0 ? out.deaths(k - 1, j) / e : kNaN;
      }
    }
  }
  out.open_age_group = aggregated || (ds.open_age_group && ds.ages.back() <= max_age);
  return out;
}

MortalityDataset window_years(const MortalityDataset& ds, int first_year, int last_year) {
  const int j0 = ds.year_index(first_year);
  const int j1 = ds.year_index(last_year);
  if (j1 < j0) throw std::invalid_argument("window_years: empty window");
  MortalityDataset out;
  out.population_label = ds.population_label;
  out.sex = ds.sex;
  out.ages = ds.ages;
  out.open_age_group = ds.open_age_group;
  out.years.assign(ds.years.begin() + j0, ds.years.begin() + j1 + 1);
  const int n = j1 - j0 + 1;
  out.deaths = ds.deaths.middleCols(j0, n);
  out.exposures = ds.exposures.middleCols(j0, n);
  out.rates = ds.rates.middleCols(j0, n);
  return out;
}

LogRateSurface log_rate_surface(const MortalityDataset& ds) {
  LogRateSurface s;
  s.ages = ds.ages;
  s.years = ds.years;
  s.open_age_group = ds.open_age_group;
  const int k = ds.n_ages();
  const int n = ds.n_years();
  s.values.resize(k, n);
  s.weights.resize(k, n);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      const double d = ds.deaths(i, j);
      const double e = ds.exposures(i, j);
      if (std::isfinite(d) && std::isfinite(e) && e > 0.0 && d > 0.0) {
        s.values(i, j) = std::log(d / e);
        s.weights(i, j) = 1.0;
      } else {
        s.values(i, j) = kNaN;
        s.weights(i, j) = 0.0;
      }
    }
  }
  return s;
}

LogRateSurface truncate_surface(const LogRateSurface& s, int min_age) {
  int first = 0;
  while (first < s.n_ages() && s.ages[first] < min_age) ++first;
  if (first == s.n_ages()) throw std::invalid_argument("truncate_surface: empty age range");
  LogRateSurface out;
  out.ages.assign(s.ages.begin() + first, s.ages.end());
  out.years = s.years;
  out.open_age_group = s.open_age_group;
  out.smoothed = s.smoothed;
  const int k = s.n_ages() - first;
  out.values = s.values.bottomRows(k);
  out.weights = s.weights.bottomRows(k);
  return out;
}

LogRateSurface window_surface_years(const LogRateSurface& s, int first_year, int last_year) {
  auto it0 = std::find(s.years.begin(), s.years.end(), first_year);
  auto it1 = std::find(s.years.begin(), s.years.end(), last_year);
  if (it0 == s.years.end() || it1 == s.years.end() || it1 < it0)
    throw std::invalid_argument("window_surface_years: bad window");
  const int j0 = static_cast<int>(it0 - s.years.begin());
  const int n = static_cast<int>(it1 - it0) + 1;
  LogRateSurface out;
  out.ages = s.ages;
  out.open_age_group = s.open_age_group;
  out.smoothed = s.smoothed;
  out.years.assign(it0, it1 + 1);
  out.values = s.values.middleCols(j0, n);
  out.weights = s.weights.middleCols(j0, n);
  return out;
}

void write_matrix_csv(const std::vector<int>& ages, const std::vector<int>& years,
                      const Eigen::MatrixXd& values, std::ostream& out) {
  out << "age,year,value\n";
  for (std::size_t i = 0; i < ages.size(); ++i)
    for (std::size_t j = 0; j < years.size(); ++j)
      out << ages[i] << ',' << years[j] << ','
          << format_double(values(static_cast<int>(i), static_cast<int>(j))) << '\n';
}

void write_surface_csv(const LogRateSurface& s, std::ostream& out) {
  write_matrix_csv(s.ages, s.years, s.values, out);
}

}  // namespace mortfc
