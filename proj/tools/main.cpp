#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mortfc: stochastic mortality model evaluation, model confidence sets, and "
               "forecast combination"};

  std::string config_path;
  std::string stage = "all";
  std::string population = "both";
  std::optional<std::uint64_t> seed;

  app.add_option("--config", config_path, "key = value configuration file")->required();
  app.add_option("--stage", stage, "evaluate | mcs | forecast | all")
      ->check(CLI::IsMember({"evaluate", "mcs", "forecast", "all"}));
  app.add_option("--population", population, "female | male | both")
      ->check(CLI::IsMember({"female", "male", "both"}));
  app.add_option("--seed", seed, "override the config seed");

  CLI11_PARSE(app, argc, argv);

  try {
    mortfc::pipeline::PipelineConfig cfg = mortfc::pipeline::parse_config_file(config_path);
    if (seed) cfg.seed = *seed;
    return mortfc::pipeline::run_pipeline(cfg, mortfc::pipeline::stage_from_string(stage),
                                          mortfc::pipeline::filter_from_string(population),
                                          std::cout);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    const std::string what = ex.what();
    return what.find("cannot read") != std::string::npos ? 2 : 1;
  }
}
