#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "mortfc/combination.hpp"
#include "mortfc/dataset.hpp"
#include "mortfc/evaluation.hpp"
#include "mortfc/mcs.hpp"
#include "mortfc/rng.hpp"

namespace fs = std::filesystem;

namespace mortfc::pipeline {

namespace {

struct UnreadablePath : std::runtime_error {
  explicit UnreadablePath(const std::string& p) : std::runtime_error("cannot read " + p) {}
};
struct MissingStageOutput : std::runtime_error {
  explicit MissingStageOutput(const std::string& p)
      : std::runtime_error("missing upstream output " + p) {}
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ' ' || c == '/' || c == '\\') c = '_';
  return s;
}

// Removes everything a failing stage wrote.
class StageOutputs {
 public:
  std::ofstream open(const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    written_.push_back(p);
    return out;
  }
  void rollback() {
    for (const auto& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  void commit() { written_.clear(); }

 private:
  std::vector<fs::path> written_;
};

struct GeoUnit {
  std::string name;
  PopulationData data;
};

MortalityDataset load_sex(const std::string& deaths, const std::string& exposures,
                          const std::string& label, Sex sex) {
  if (!fs::exists(deaths)) throw UnreadablePath(deaths);
  if (!fs::exists(exposures)) throw UnreadablePath(exposures);
  std::vector<std::string> warnings;
  return load_hmd_table(deaths, exposures, label, sex, &warnings);
}

PopulationData make_population(const std::string& label, const std::string& fd,
                               const std::string& fe, const std::string& md,
                               const std::string& me, int age_min, int age_max) {
  PopulationData pop;
  pop.label = label;
  MortalityDataset female_raw = load_sex(fd, fe, label, Sex::female);
  MortalityDataset male_raw = load_sex(md, me, label, Sex::male);
  pop.female = truncate_ages(female_raw, age_min, age_max);
  pop.male = truncate_ages(male_raw, age_min, age_max);
  if (female_raw.ages.front() < age_min) {
    // Keep the wider range (capped at the open group) for smooth-then-truncate.
    pop.female_full = truncate_ages(female_raw, female_raw.ages.front(), age_max);
    pop.male_full = truncate_ages(male_raw, male_raw.ages.front(), age_max);
  }
  return pop;
}

std::vector<GeoUnit> load_units(const PipelineConfig& cfg, std::ostream& log) {
  std::vector<GeoUnit> units;
  units.push_back({sanitize(cfg.population_label),
                   make_population(cfg.population_label, cfg.female_deaths, cfg.female_exposures,
                                   cfg.male_deaths, cfg.male_exposures, cfg.age_min,
                                   cfg.age_max)});
  if (cfg.populations_dir) {
    if (!fs::is_directory(*cfg.populations_dir)) throw UnreadablePath(*cfg.populations_dir);
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(*cfg.populations_dir))
      if (entry.is_directory()) subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& dir : subdirs) {
      const std::string name = dir.filename().string();
      units.push_back({sanitize(name),
                       make_population(name, (dir / "female_deaths.txt").string(),
                                       (dir / "female_exposures.txt").string(),
                                       (dir / "male_deaths.txt").string(),
                                       (dir / "male_exposures.txt").string(), cfg.age_min,
                                       cfg.age_max)});
    }
    log << "loaded " << units.size() - 1 << " sub-national populations\n";
  }
  return units;
}

std::vector<Sex> sexes_of(PopulationFilter f) {
  switch (f) {
    case PopulationFilter::female: return {Sex::female};
    case PopulationFilter::male: return {Sex::male};
    case PopulationFilter::both: return {Sex::female, Sex::male};
  }
  return {};
}

std::string panel_path(const PipelineConfig& cfg, const std::string& kind,
                       const std::string& unit, Sex sex) {
  return (fs::path(cfg.output_dir) /
          ("losses_" + kind + "_" + unit + "_" + to_string(sex) + ".csv"))
      .string();
}

std::string mcs_path(const PipelineConfig& cfg, const std::string& kind, McsStatistic stat,
                     const std::string& unit, Sex sex, const char* ext) {
  const std::string stat_tag = stat == McsStatistic::t_max ? "tmax" : "tr";
  return (fs::path(cfg.output_dir) /
          ("mcs_" + kind + "_" + stat_tag + "_" + unit + "_" + to_string(sex) + ext))
      .string();
}

EvalOptions eval_options(const PipelineConfig& cfg, int train_end, int eval_end,
                         std::uint64_t unit_index) {
  EvalOptions opts;
  opts.train_end = train_end;
  opts.eval_end = eval_end;
  opts.horizon = 1;
  opts.alpha = cfg.alpha;
  opts.n_sim = cfg.n_sim;
  opts.seed = derive_seed(cfg.seed, 0xEAA1u, unit_index);
  opts.fpca_K = cfg.fpca_K;
  opts.smooth_penalty = cfg.smooth_penalty;
  return opts;
}

void cmd_evaluate(const PipelineConfig& cfg, const std::vector<GeoUnit>& units,
                  PopulationFilter filter, std::ostream& log, StageOutputs& outputs) {
  for (std::size_t u = 0; u < units.size(); ++u) {
    const GeoUnit& unit = units[u];
    const EvalOptions opts = eval_options(cfg, cfg.train_end, cfg.validation_end, u);
    const SexWindowForecasts wf = run_expanding_window(unit.data, cfg.models, opts);
    for (Sex sex : sexes_of(filter)) {
      const WindowForecasts& one = sex == Sex::male ? wf.male : wf.female;
      for (const std::string& w : one.warnings) log << unit.name << ": " << w << "\n";
      auto point = loss_panel(one, LossKind::rmsfe);
      auto interval = loss_panel(one, LossKind::mean_interval_score);
      {
        auto out = outputs.open(panel_path(cfg, "point", unit.name, sex));
        write_loss_panel_csv(point, out);
      }
      {
        auto out = outputs.open(panel_path(cfg, "interval", unit.name, sex));
        write_loss_panel_csv(interval, out);
      }
      log << "evaluate: " << unit.name << " " << to_string(sex) << ": "
          << point.n_models() << " models x " << point.n_origins() << " origins\n";
    }
  }
}

LossPanel load_panel(const PipelineConfig& cfg, const std::string& kind, const std::string& unit,
                     Sex sex) {
  const std::string path = panel_path(cfg, kind, unit, sex);
  std::ifstream in(path);
  if (!in) throw MissingStageOutput(path);
  return read_loss_panel_csv(in, kind == "point" ? LossKind::rmsfe
                                                 : LossKind::mean_interval_score);
}

void cmd_mcs(const PipelineConfig& cfg, const std::vector<GeoUnit>& units,
             PopulationFilter filter, std::ostream& log, StageOutputs& outputs) {
  for (const std::string kind : {"point", "interval"}) {
    for (McsStatistic stat : {McsStatistic::t_max, McsStatistic::t_r}) {
      // Table rows: one population per line, superior sets per sex.
      const std::string stat_tag = stat == McsStatistic::t_max ? "tmax" : "tr";
      auto table = outputs.open(fs::path(cfg.output_dir) /
                                ("superior_sets_" + kind + "_" + stat_tag + ".csv"));
      table << "population,female,male\n";
      for (std::size_t u = 0; u < units.size(); ++u) {
        const GeoUnit& unit = units[u];
        std::map<Sex, std::string> formatted;
        for (Sex sex : sexes_of(filter)) {
          const LossPanel panel = load_panel(cfg, kind, unit.name, sex);
          McsConfig mcfg;
          mcfg.statistic = stat;
          mcfg.confidence = cfg.confidence;
          mcfg.n_bootstrap = cfg.n_bootstrap;
          mcfg.block_length = cfg.block_length;
          mcfg.seed = derive_seed(cfg.seed, 0x3C5u, u, static_cast<std::uint64_t>(sex));
          const McsResult res = run_mcs(panel, mcfg);
          {
            auto out = outputs.open(mcs_path(cfg, kind, stat, unit.name, sex, ".json"));
            out << mcs_result_to_json(res).dump(2) << "\n";
          }
          {
            auto out = outputs.open(mcs_path(cfg, kind, stat, unit.name, sex, "_pvalues.csv"));
            write_mcs_pvalues_csv(res, out);
          }
          std::string joined;
          for (std::size_t i = 0; i < res.superior_set.size(); ++i)
            joined += (i ? " " : "") + std::to_string(res.superior_set[i]);
          formatted[sex] = joined;
          log << "mcs: " << kind << " " << to_string(stat) << " " << unit.name << " "
              << to_string(sex) << ": {" << joined << "}\n";
        }
        table << unit.data.label << ',' << formatted[Sex::female] << ','
              << formatted[Sex::male] << '\n';
      }
    }
  }
}

struct TestScores {
  // Per model label: mean test loss by kind (x100 applied at output time).
  std::map<int, double> point;
  std::map<int, double> interval;
};

McsResult load_mcs(const PipelineConfig& cfg, const std::string& kind, McsStatistic stat,
                   const std::string& unit, Sex sex) {
  const std::string path = mcs_path(cfg, kind, stat, unit, sex, ".json");
  std::ifstream in(path);
  if (!in) throw MissingStageOutput(path);
  nlohmann::json j;
  in >> j;
  return mcs_result_from_json(j);
}

TestScores forecast_one_sex(const PipelineConfig& cfg, const GeoUnit& unit, Sex sex,
                            const SexWindowForecasts& wf, std::ostream& log,
                            StageOutputs& outputs) {
  const WindowForecasts& one = sex == Sex::male ? wf.male : wf.female;
  TestScores scores;

  const LossPanel point_panel = loss_panel(one, LossKind::rmsfe);
  const LossPanel interval_panel = loss_panel(one, LossKind::mean_interval_score);
  for (int r = 0; r < point_panel.n_models(); ++r)
    scores.point[point_panel.model_labels[r]] = point_panel.losses.row(r).mean();
  for (int r = 0; r < interval_panel.n_models(); ++r)
    scores.interval[interval_panel.model_labels[r]] = interval_panel.losses.row(r).mean();

  // Validation panels drive both the superior sets and the inverse-error
  // baseline weights.
  nlohmann::json weights_doc;
  std::map<int, std::vector<ForecastResult>> combined_by_label;  // label -> per-origin
  for (const std::string kind : {"point", "interval"}) {
    const LossKind lk = kind == "point" ? LossKind::rmsfe : LossKind::mean_interval_score;
    const LossPanel validation = load_panel(cfg, kind, unit.name, sex);

    for (McsStatistic stat : {McsStatistic::t_max, McsStatistic::t_r}) {
      const int label = stat == McsStatistic::t_max ? 18 : 19;
      const McsResult mcs = load_mcs(cfg, kind, stat, unit.name, sex);
      const CombinationWeights w = equal_weights(mcs.superior_set);
      weights_doc[kind][to_string(stat)] = combination_weights_to_json(w);

      std::vector<double> losses;
      std::vector<ForecastResult> per_origin;
      for (std::size_t o = 0; o < one.origins.size(); ++o) {
        std::vector<ForecastResult> members;
        for (int lbl : mcs.superior_set) {
          const auto it = std::find(one.model_labels.begin(), one.model_labels.end(), lbl);
          if (it == one.model_labels.end() || !one.model_ok[it - one.model_labels.begin()])
            throw std::runtime_error("forecast: superior-set model " + std::to_string(lbl) +
                                     " unavailable in the test window");
          members.push_back(one.forecasts[it - one.model_labels.begin()][o]);
        }
        ForecastResult comb = combine_forecasts(members, w, label);
        std::vector<double> actual, point, lower, upper;
        const Eigen::VectorXd& realized = one.realized[o];
        for (int i = 0; i < realized.size(); ++i) {
          if (!std::isfinite(realized(i))) continue;
          actual.push_back(realized(i));
          point.push_back(comb.point(i, comb.h - 1));
          lower.push_back(comb.lower(i, comb.h - 1));
          upper.push_back(comb.upper(i, comb.h - 1));
        }
        losses.push_back(lk == LossKind::rmsfe
                             ? rmsfe(actual, point)
                             : mean_interval_score(lower, upper, actual, cfg.alpha));
        per_origin.push_back(std::move(comb));
      }
      double mean_loss = 0.0;
      for (double l : losses) mean_loss += l;
      mean_loss /= static_cast<double>(losses.size());
      (lk == LossKind::rmsfe ? scores.point : scores.interval)[label] = mean_loss;
      if (kind == "point") combined_by_label[label] = std::move(per_origin);
    }

    // Inverse-validation-error baseline over the whole pool.
    std::vector<double> val_means;
    for (int r = 0; r < validation.n_models(); ++r)
      val_means.push_back(validation.losses.row(r).mean());
    std::vector<std::string> warn;
    const CombinationWeights iw =
        inverse_error_weights(validation.model_labels, val_means, &warn);
    for (const auto& wmsg : warn) log << unit.name << ": " << wmsg << "\n";
    weights_doc[kind]["inverse_error"] = combination_weights_to_json(iw);

    std::vector<double> losses;
    for (std::size_t o = 0; o < one.origins.size(); ++o) {
      std::vector<ForecastResult> members;
      for (int lbl : validation.model_labels) {
        const auto it = std::find(one.model_labels.begin(), one.model_labels.end(), lbl);
        if (it == one.model_labels.end() || !one.model_ok[it - one.model_labels.begin()])
          throw std::runtime_error("forecast: baseline model " + std::to_string(lbl) +
                                   " unavailable in the test window");
        members.push_back(one.forecasts[it - one.model_labels.begin()][o]);
      }
      const ForecastResult comb = combine_forecasts(members, iw, 0);
      std::vector<double> actual, point, lower, upper;
      const Eigen::VectorXd& realized = one.realized[o];
      for (int i = 0; i < realized.size(); ++i) {
        if (!std::isfinite(realized(i))) continue;
        actual.push_back(realized(i));
        point.push_back(comb.point(i, comb.h - 1));
        lower.push_back(comb.lower(i, comb.h - 1));
        upper.push_back(comb.upper(i, comb.h - 1));
      }
      losses.push_back(lk == LossKind::rmsfe
                           ? rmsfe(actual, point)
                           : mean_interval_score(lower, upper, actual, cfg.alpha));
    }
    nlohmann::json byyear;
    double mean_loss = 0.0;
    for (std::size_t o = 0; o < losses.size(); ++o) {
      byyear[std::to_string(one.origins[o] + 1)] = losses[o] * 100.0;
      mean_loss += losses[o];
    }
    mean_loss /= static_cast<double>(losses.size());
    weights_doc[kind]["inverse_error_mean_test_loss_x100"] = mean_loss * 100.0;
    weights_doc[kind]["inverse_error_test_loss_x100_by_year"] = byyear;
  }

  {
    auto out = outputs.open(fs::path(cfg.output_dir) /
                            ("combination_weights_" + unit.name + "_" + to_string(sex) +
                             ".json"));
    out << weights_doc.dump(2) << "\n";
  }

  // Per-target-year forecast files: models 1..17 plus the two combinations.
  for (std::size_t o = 0; o < one.origins.size(); ++o) {
    std::vector<ForecastResult> rows;
    for (std::size_t mi = 0; mi < one.model_labels.size(); ++mi)
      if (one.model_ok[mi]) rows.push_back(one.forecasts[mi][o]);
    for (int label : {18, 19})
      if (combined_by_label.count(label)) rows.push_back(combined_by_label[label][o]);
    auto out = outputs.open(fs::path(cfg.output_dir) /
                            ("forecasts_" + unit.name + "_" + to_string(sex) + "_" +
                             std::to_string(one.origins[o] + 1) + ".csv"));
    write_forecast_csv(out, rows);
  }
  return scores;
}

void cmd_forecast(const PipelineConfig& cfg, const std::vector<GeoUnit>& units,
                  PopulationFilter filter, std::ostream& log, StageOutputs& outputs) {
  std::map<Sex, TestScores> national_scores;
  std::map<Sex, std::map<int, double>> sub_point_sum, sub_interval_sum;
  std::map<Sex, int> sub_count;

  for (std::size_t u = 0; u < units.size(); ++u) {
    const GeoUnit& unit = units[u];
    EvalOptions opts = eval_options(cfg, cfg.validation_end, cfg.test_end, u);
    opts.seed = derive_seed(cfg.seed, 0xF0C5u, u);
    const SexWindowForecasts wf = run_expanding_window(unit.data, cfg.models, opts);
    for (Sex sex : sexes_of(filter)) {
      const TestScores scores = forecast_one_sex(cfg, unit, sex, wf, log, outputs);
      if (u == 0) {
        national_scores[sex] = scores;
      } else {
        for (const auto& [label, v] : scores.point) sub_point_sum[sex][label] += v;
        for (const auto& [label, v] : scores.interval) sub_interval_sum[sex][label] += v;
        ++sub_count[sex];
      }
    }
  }
  const bool has_sub = units.size() > 1;

  auto out = outputs.open(fs::path(cfg.output_dir) / "forecast_summary.csv");
  out << "series,model,rmsfe_national,rmsfe_subnational,mis_national,mis_subnational\n";
  for (Sex sex : sexes_of(filter)) {
    const TestScores& nat = national_scores[sex];
    std::vector<int> labels;
    for (const auto& [label, v] : nat.point) labels.push_back(label);
    for (int label : labels) {
      out << to_string(sex) << ',' << label << ','
          << format_double(nat.point.at(label) * 100.0) << ',';
      if (has_sub && sub_point_sum[sex].count(label))
        out << format_double(sub_point_sum[sex][label] / sub_count[sex] * 100.0);
      out << ',' << format_double(nat.interval.at(label) * 100.0) << ',';
      if (has_sub && sub_interval_sum[sex].count(label))
        out << format_double(sub_interval_sum[sex][label] / sub_count[sex] * 100.0);
      out << '\n';
    }
  }
  log << "forecast: summary written (errors x100)\n";
}

}  // namespace

Stage stage_from_string(const std::string& s) {
  if (s == "evaluate") return Stage::evaluate;
  if (s == "mcs") return Stage::mcs;
  if (s == "forecast") return Stage::forecast;
  if (s == "all") return Stage::all;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

PopulationFilter filter_from_string(const std::string& s) {
  if (s == "female") return PopulationFilter::female;
  if (s == "male") return PopulationFilter::male;
  if (s == "both") return PopulationFilter::both;
  throw std::invalid_argument("unknown population filter '" + s + "'");
}

PipelineConfig parse_config(std::istream& in) {
  PipelineConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) continue;
    if (key == "female_deaths") cfg.female_deaths = value;
    else if (key == "female_exposures") cfg.female_exposures = value;
    else if (key == "male_deaths") cfg.male_deaths = value;
    else if (key == "male_exposures") cfg.male_exposures = value;
    else if (key == "population_label") cfg.population_label = value;
    else if (key == "populations_dir") cfg.populations_dir = value;
    else if (key == "age_min") cfg.age_min = std::stoi(value);
    else if (key == "age_max") cfg.age_max = std::stoi(value);
    else if (key == "train_end") cfg.train_end = std::stoi(value);
    else if (key == "validation_end") cfg.validation_end = std::stoi(value);
    else if (key == "test_end") cfg.test_end = std::stoi(value);
    else if (key == "alpha") cfg.alpha = std::stod(value);
    else if (key == "confidence") cfg.confidence = std::stod(value);
    else if (key == "n_bootstrap") cfg.n_bootstrap = std::stoi(value);
    else if (key == "block_length") cfg.block_length = std::stoi(value);
    else if (key == "n_sim") cfg.n_sim = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "fpca_K") cfg.fpca_K = std::stoi(value);
    else if (key == "smooth_penalty") cfg.smooth_penalty = std::stod(value);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "models") {
      if (value == "all") {
        for (int i = 1; i <= 17; ++i) cfg.models.push_back(i);
      } else {
        std::stringstream ss(value);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          tok = trim(tok);
          if (!tok.empty()) cfg.models.push_back(std::stoi(tok));
        }
      }
    } else {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": unknown key '" +
                               key + "'");
    }
  }
  if (cfg.models.empty())
    for (int i = 1; i <= 17; ++i) cfg.models.push_back(i);
  if (!(cfg.train_end < cfg.validation_end && cfg.validation_end < cfg.test_end))
    throw std::runtime_error("config: need train_end < validation_end < test_end");
  return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UnreadablePath(path);
  return parse_config(in);
}

int run_pipeline(const PipelineConfig& config, Stage stage, PopulationFilter filter,
                 std::ostream& log) {
  const char* stage_name = "setup";
  StageOutputs outputs;
  try {
    fs::create_directories(config.output_dir);
    const std::vector<GeoUnit> units = load_units(config, log);
    if (stage == Stage::evaluate || stage == Stage::all) {
      stage_name = "evaluate";
      cmd_evaluate(config, units, filter, log, outputs);
      outputs.commit();
    }
    if (stage == Stage::mcs || stage == Stage::all) {
      stage_name = "mcs";
      cmd_mcs(config, units, filter, log, outputs);
      outputs.commit();
    }
    if (stage == Stage::forecast || stage == Stage::all) {
      stage_name = "forecast";
      cmd_forecast(config, units, filter, log, outputs);
      outputs.commit();
    }
    return 0;
  } catch (const UnreadablePath& ex) {
    outputs.rollback();
    log << "error in stage " << stage_name << ": " << ex.what() << "\n";
    return 2;
  } catch (const MissingStageOutput& ex) {
    outputs.rollback();
    log << "error in stage " << stage_name << ": " << ex.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    outputs.rollback();
    log << "error in stage " << stage_name << ": " << ex.what() << "\n";
    return 1;
  }
}

}  // namespace mortfc::pipeline
