#include "mortfc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mortfc/rng.hpp"
#include "mortfc/smoothing.hpp"

namespace mortfc {

std::string to_string(LossKind k) {
  return k == LossKind::rmsfe ? "rmsfe" : "mean_interval_score";
}

double rmsfe(std::span<const double> actual, std::span<const double> forecast) {
  if (actual.size() != forecast.size() || actual.empty())
    throw std::invalid_argument("rmsfe: length mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = actual[i] - forecast[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(actual.size()));
}

double interval_score(double l, double u, double y, double alpha) {
  if (l > u) throw std::invalid_argument("interval_score: lower bound exceeds upper bound");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("interval_score: alpha must be in (0,1)");
  double s = u - l;
  if (y < l) s += (2.0 / alpha) * (l - y);
  if (y > u) s += (2.0 / alpha) * (y - u);
  return s;
}

double mean_interval_score(std::span<const double> lower, std::span<const double> upper,
                           std::span<const double> actual, double alpha) {
  if (lower.size() != upper.size() || lower.size() != actual.size() || lower.empty())
    throw std::invalid_argument("mean_interval_score: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < lower.size(); ++i)
    s += interval_score(lower[i], upper[i], actual[i], alpha);
  return s / static_cast<double>(lower.size());
}

int LossPanel::row_of(int label) const {
  auto it = std::find(model_labels.begin(), model_labels.end(), label);
  if (it == model_labels.end())
    throw std::out_of_range("model " + std::to_string(label) + " not in panel");
  return static_cast<int>(it - model_labels.begin());
}

void write_loss_panel_csv(const LossPanel& panel, std::ostream& out) {
  out << "model,origin_year,loss\n";
  for (int m = 0; m < panel.n_models(); ++m)
    for (int o = 0; o < panel.n_origins(); ++o)
      out << panel.model_labels[m] << ',' << panel.origin_years[o] << ','
          << format_double(panel.losses(m, o)) << '\n';
}

LossPanel read_loss_panel_csv(std::istream& in, LossKind kind) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("loss panel: empty file");
  std::map<int, std::map<int, double>> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    const int model = std::stoi(tok);
    std::getline(ss, tok, ',');
    const int origin = std::stoi(tok);
    std::getline(ss, tok, ',');
    cells[model][origin] = std::stod(tok);
  }
  LossPanel panel;
  panel.loss_kind = kind;
  for (const auto& [model, row] : cells) panel.model_labels.push_back(model);
  if (cells.empty()) throw std::runtime_error("loss panel: no rows");
  for (const auto& [origin, v] : cells.begin()->second) panel.origin_years.push_back(origin);
  panel.losses.resize(panel.n_models(), panel.n_origins());
  for (int m = 0; m < panel.n_models(); ++m) {
    const auto& row = cells.at(panel.model_labels[m]);
    if (static_cast<int>(row.size()) != panel.n_origins())
      throw std::runtime_error("loss panel: ragged origins");
    for (int o = 0; o < panel.n_origins(); ++o)
      panel.losses(m, o) = row.at(panel.origin_years[o]);
  }
  return panel;
}

const MortalityDataset& PopulationData::modeling(Sex sex) const {
  return sex == Sex::male ? male : female;
}

const MortalityDataset* PopulationData::full_range(Sex sex) const {
  const auto& opt = sex == Sex::male ? male_full : female_full;
  return opt ? &*opt : nullptr;
}

namespace {

LogRateSurface model_surface(const PopulationData& pop, Sex sex, int train_end,
                             const EvalOptions& opts) {
  const MortalityDataset& modeling = pop.modeling(sex);
  const MortalityDataset* full = pop.full_range(sex);
  const MortalityDataset& base = full ? *full : modeling;
  const MortalityDataset win = window_years(base, base.years.front(), train_end);
  SmoothOptions sm;
  sm.penalty = opts.smooth_penalty;
  // The monotone projection only makes sense once infant/accident ages are
  // out of the picture.
  sm.monotone = base.ages.front() >= 60;
  LogRateSurface surf = smooth_log_rates(win, sm);
  if (full) surf = truncate_surface(surf, modeling.ages.front());
  return surf;
}

}  // namespace

OriginContext make_origin_context(const PopulationData& pop, int train_end,
                                  const EvalOptions& opts) {
  OriginContext ctx;
  ctx.train_end = train_end;
  ctx.female_win = window_years(pop.female, pop.female.years.front(), train_end);
  ctx.male_win = window_years(pop.male, pop.male.years.front(), train_end);
  ctx.female_surf = model_surface(pop, Sex::female, train_end, opts);
  ctx.male_surf = model_surface(pop, Sex::male, train_end, opts);
  return ctx;
}

SexForecasts run_model(int label, const OriginContext& ctx, const EvalOptions& opts,
                       std::uint64_t seed) {
  const int h = opts.horizon;
  const double alpha = opts.alpha;
  SexForecasts out;

  auto per_sex = [&](Sex sex) -> ForecastResult {
    const MortalityDataset& ds = sex == Sex::male ? ctx.male_win : ctx.female_win;
    const LogRateSurface& surf = sex == Sex::male ? ctx.male_surf : ctx.female_surf;
    const std::uint64_t sseed = derive_seed(seed, static_cast<std::uint64_t>(sex));
    if (label >= 1 && label <= 8) {
      static const GapcModel models[] = {GapcModel::lc_poisson, GapcModel::rh, GapcModel::apc,
                                         GapcModel::cbd, GapcModel::m6, GapcModel::m7,
                                         GapcModel::m8, GapcModel::plat};
      const GapcFit fit =
          fit_gapc(gapc_spec(models[label - 1]), ds, opts.gapc_tol, opts.gapc_max_iter);
      return forecast_gapc(fit, h, alpha, opts.n_sim, sseed, label);
    }
    if (label >= 9 && label <= 12) {
      static const LcAdjustment adj[] = {LcAdjustment::refit_total_deaths,
                                         LcAdjustment::fit_death_distribution,
                                         LcAdjustment::fit_e0, LcAdjustment::none};
      const LcFit fit = fit_lc(ds, adj[label - 9]);
      return forecast_lc(fit, h, alpha, label);
    }
    if (label == 13) return forecast_fts(fpca(surf, opts.fpca_K), h, alpha, 13);
    if (label == 14)
      return forecast_fts(robust_fpca(surf, opts.fpca_K, opts.robust_chi_level), h, alpha, 14);
    throw std::invalid_argument("run_model: unknown single-population label " +
                                std::to_string(label));
  };

  switch (label) {
    case 15: {
      const CoherentFit fit = product_ratio_fit(ctx.female_surf, ctx.male_surf, opts.fpca_K);
      return forecast_product_ratio(fit, h, alpha, 15);
    }
    case 16: {
      const MultivariateFtsFit fit =
          multivariate_fts_fit({ctx.female_surf, ctx.male_surf}, opts.fpca_K);
      auto rs = forecast_multivariate(fit, h, alpha, 16);
      out.female = rs[0];
      out.male = rs[1];
      return out;
    }
    case 17: {
      const MultilevelFtsFit fit =
          multilevel_fts_fit({ctx.female_surf, ctx.male_surf}, opts.K_common, opts.K_specific);
      auto rs = forecast_multilevel(fit, h, alpha, 17);
      out.female = rs[0];
      out.male = rs[1];
      return out;
    }
    default:
      out.female = per_sex(Sex::female);
      out.male = per_sex(Sex::male);
      return out;
  }
}

SexWindowForecasts run_expanding_window(const PopulationData& pop,
                                        const std::vector<int>& model_labels,
                                        const EvalOptions& opts) {
  if (opts.horizon < 1) throw std::invalid_argument("expanding window: horizon must be >= 1");
  if (!(opts.train_end < opts.eval_end))
    throw std::invalid_argument("expanding window: train_end must precede eval_end");
  if (opts.eval_end > pop.female.years.back() || opts.eval_end > pop.male.years.back())
    throw std::invalid_argument("expanding window: eval_end beyond the data");

  SexWindowForecasts out;
  for (WindowForecasts* wf : {&out.female, &out.male}) {
    wf->model_labels = model_labels;
    wf->model_ok.assign(model_labels.size(), 1);
    wf->forecasts.resize(model_labels.size());
  }
  out.female.ages = pop.female.ages;
  out.male.ages = pop.male.ages;

  for (int T = opts.train_end; T + opts.horizon <= opts.eval_end; ++T) {
    out.female.origins.push_back(T);
    out.male.origins.push_back(T);
    const OriginContext ctx = make_origin_context(pop, T, opts);

    for (Sex sex : {Sex::female, Sex::male}) {
      WindowForecasts& wf = sex == Sex::male ? out.male : out.female;
      const MortalityDataset& ds = pop.modeling(sex);
      const int target = T + opts.horizon;
      const int j = ds.year_index(target);
      Eigen::VectorXd realized(ds.n_ages());
      for (int i = 0; i < ds.n_ages(); ++i) {
        const double m = ds.rates(i, j);
        realized(i) = (std::isfinite(m) && m > 0.0)
                          ? std::log(m)
                          : std::numeric_limits<double>::quiet_NaN();
      }
      wf.realized.push_back(realized);
    }

    for (std::size_t mi = 0; mi < model_labels.size(); ++mi) {
      const int label = model_labels[mi];
      const std::uint64_t seed = derive_seed(opts.seed, static_cast<std::uint64_t>(label),
                                             static_cast<std::uint64_t>(T));
      try {
        const SexForecasts fc = run_model(label, ctx, opts, seed);
        out.female.forecasts[mi].push_back(fc.female);
        out.male.forecasts[mi].push_back(fc.male);
      } catch (const std::exception& ex) {
        for (WindowForecasts* wf : {&out.female, &out.male}) {
          wf->model_ok[mi] = 0;
          wf->warnings.push_back("model " + std::to_string(label) + " failed at origin " +
                                 std::to_string(T) + ": " + ex.what() +
                                 "; dropped from the panel");
          wf->forecasts[mi].push_back(ForecastResult{});
        }
      }
    }
  }
  return out;
}

LossPanel loss_panel(const WindowForecasts& wf, LossKind kind) {
  LossPanel panel;
  panel.loss_kind = kind;
  panel.origin_years = wf.origins;
  std::vector<int> rows;
  for (std::size_t mi = 0; mi < wf.model_labels.size(); ++mi) {
    if (wf.model_ok[mi]) {
      panel.model_labels.push_back(wf.model_labels[mi]);
      rows.push_back(static_cast<int>(mi));
    }
  }
  panel.losses.resize(panel.n_models(), panel.n_origins());
  for (int r = 0; r < panel.n_models(); ++r) {
    const int mi = rows[r];
    for (int o = 0; o < panel.n_origins(); ++o) {
      const ForecastResult& fc = wf.forecasts[mi][o];
      const Eigen::VectorXd& realized = wf.realized[o];
      const int hcol = fc.h - 1;
      std::vector<double> actual, point, lower, upper;
      for (int i = 0; i < realized.size(); ++i) {
        if (!std::isfinite(realized(i))) continue;  // unobserved cells drop out
        actual.push_back(realized(i));
        point.push_back(fc.point(i, hcol));
        lower.push_back(fc.lower(i, hcol));
        upper.push_back(fc.upper(i, hcol));
      }
      panel.losses(r, o) = kind == LossKind::rmsfe
                               ? rmsfe(actual, point)
                               : mean_interval_score(lower, upper, actual, fc.alpha);
    }
  }
  return panel;
}

LossPanel expanding_window(const PopulationData& pop, Sex sex,
                           const std::vector<int>& model_labels, int train_end, int eval_end,
                           int horizon, double alpha, LossKind kind,
                           const EvalOptions& base_opts) {
  EvalOptions opts = base_opts;
  opts.train_end = train_end;
  opts.eval_end = eval_end;
  opts.horizon = horizon;
  opts.alpha = alpha;
  const SexWindowForecasts wf = run_expanding_window(pop, model_labels, opts);
  return loss_panel(sex == Sex::male ? wf.male : wf.female, kind);
}

}  // namespace mortfc
