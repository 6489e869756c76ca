#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mortfc/dataset.hpp"
#include "mortfc/forecast.hpp"

namespace mortfc {

enum class LossKind { rmsfe, mean_interval_score };

std::string to_string(LossKind k);

/// Root mean squared error across ages at one forecast origin.
double rmsfe(std::span<const double> actual, std::span<const double> forecast);

/// Interval score: width plus 2/alpha-scaled penalties outside [l, u].
double interval_score(double l, double u, double y, double alpha);

/// Mean of interval_score across ages.
double mean_interval_score(std::span<const double> lower, std::span<const double> upper,
                           std::span<const double> actual, double alpha);

/// Per-model, per-origin out-of-sample losses.
struct LossPanel {
  std::vector<int> model_labels;
  std::vector<int> origin_years;
  Eigen::MatrixXd losses;  // models x origins
  LossKind loss_kind = LossKind::rmsfe;

  int n_models() const { return static_cast<int>(model_labels.size()); }
  int n_origins() const { return static_cast<int>(origin_years.size()); }
  int row_of(int label) const;
};

void write_loss_panel_csv(const LossPanel& panel, std::ostream& out);
LossPanel read_loss_panel_csv(std::istream& in, LossKind kind);

/// One population's paired female/male data: the modeling age range plus the
/// optional wider-range originals used for smooth-then-truncate.
struct PopulationData {
  std::string label;
  MortalityDataset female;
  MortalityDataset male;
  std::optional<MortalityDataset> female_full;
  std::optional<MortalityDataset> male_full;

  const MortalityDataset& modeling(Sex sex) const;
  const MortalityDataset* full_range(Sex sex) const;
};

struct EvalOptions {
  int train_end = 1995;
  int eval_end = 2005;
  int horizon = 1;
  double alpha = 0.2;
  int n_sim = 1000;
  std::uint64_t seed = 1u;
  int fpca_K = 6;
  int K_common = 2;
  int K_specific = 2;
  double robust_chi_level = 0.99;
  std::optional<double> smooth_penalty;  // unset: per-year GCV
  double gapc_tol = 1e-6;
  int gapc_max_iter = 500;
};

/// Everything fitted at one forecast origin, shared across the models run
/// there.
struct OriginContext {
  int train_end = 0;
  MortalityDataset female_win;
  MortalityDataset male_win;
  LogRateSurface female_surf;  // smoothed, modeling ages
  LogRateSurface male_surf;
};

OriginContext make_origin_context(const PopulationData& pop, int train_end,
                                  const EvalOptions& opts);

/// Forecasts of one catalogue model (labels 1..17) for both sexes from the
/// window [t1, train_end].
SexForecasts run_model(int label, const OriginContext& ctx, const EvalOptions& opts,
                       std::uint64_t seed);

/// Single-sex expanding-window forecasts with realized curves per origin.
struct WindowForecasts {
  std::vector<int> model_labels;
  std::vector<int> origins;  // forecast origins T; loss is at T + horizon
  std::vector<int> ages;
  std::vector<std::vector<ForecastResult>> forecasts;  // [model][origin]
  std::vector<Eigen::VectorXd> realized;               // per origin, NaN when unobserved
  std::vector<std::uint8_t> model_ok;
  std::vector<std::string> warnings;
};

struct SexWindowForecasts {
  WindowForecasts female;
  WindowForecasts male;
};

/// Refit every model on [t1, T] for each origin T in
/// [train_end, eval_end - horizon] and forecast T + horizon.
SexWindowForecasts run_expanding_window(const PopulationData& pop,
                                        const std::vector<int>& model_labels,
                                        const EvalOptions& opts);

/// Score a window of forecasts; models that failed at any origin are dropped
/// from the panel (with a warning already recorded on the window).
LossPanel loss_panel(const WindowForecasts& wf, LossKind kind);

/// Convenience wrapper matching the single-panel operation shape.
LossPanel expanding_window(const PopulationData& pop, Sex sex,
                           const std::vector<int>& model_labels, int train_end, int eval_end,
                           int horizon, double alpha, LossKind kind,
                           const EvalOptions& base_opts = {});

}  // namespace mortfc
