#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mortfc::pipeline {

enum class Stage { evaluate, mcs, forecast, all };
enum class PopulationFilter { female, male, both };

Stage stage_from_string(const std::string& s);
PopulationFilter filter_from_string(const std::string& s);

/// Key = value text configuration for the whole run.
struct PipelineConfig {
  // National data (HMD-format deaths/exposures pairs).
  std::string female_deaths;
  std::string female_exposures;
  std::string male_deaths;
  std::string male_exposures;
  std::string population_label = "Japan";
  // Optional directory of sub-national units, one subdirectory per
  // population holding female_deaths.txt / female_exposures.txt /
  // male_deaths.txt / male_exposures.txt.
  std::optional<std::string> populations_dir;

  int age_min = 60;
  int age_max = 100;
  int train_end = 1995;
  int validation_end = 2005;
  int test_end = 2015;
  std::vector<int> models;  // catalogue labels 1..17
  double alpha = 0.2;
  double confidence = 0.90;
  int n_bootstrap = 5000;
  std::optional<int> block_length;
  int n_sim = 1000;
  std::uint64_t seed = 1;
  int fpca_K = 6;
  std::optional<double> smooth_penalty;
  std::string output_dir = "out";
};

PipelineConfig parse_config_file(const std::string& path);
PipelineConfig parse_config(std::istream& in);

/// Exit status: 0 success, 2 unreadable input path, 3 missing upstream
/// stage output, 1 any other failure. Partial outputs of a failing stage
/// are removed.
int run_pipeline(const PipelineConfig& config, Stage stage, PopulationFilter filter,
                 std::ostream& log);

}  // namespace mortfc::pipeline
