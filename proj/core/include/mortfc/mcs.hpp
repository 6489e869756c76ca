#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mortfc/evaluation.hpp"

namespace mortfc {

/// T_max uses the relative-loss statistics t_rho.; T_R the pairwise |t_rho,xi|.
enum class McsStatistic { t_max, t_r };

std::string to_string(McsStatistic s);

struct McsConfig {
  McsStatistic statistic = McsStatistic::t_max;
  double confidence = 0.90;
  int n_bootstrap = 5000;
  std::optional<int> block_length;  // auto from AR fits when unset
  std::uint64_t seed = 0;
  int n_threads = 1;  // bootstrap resamples use per-resample streams, so the
                      // result is invariant to the worker count
};

struct McsStep {
  int eliminated_label = 0;
  double statistic = 0.0;          // T_max or T_R at this step
  double elimination_value = 0.0;  // the removed model's own rule value
  double p_value = 0.0;
};

struct McsResult {
  std::vector<int> superior_set;
  std::vector<McsStep> trace;
  std::vector<std::pair<int, double>> mcs_p_values;  // (label, p), by label
  McsConfig config;
  int block_length_used = 1;

  double p_value_of(int label) const;
};

/// Pairwise loss differentials d_{rho xi, l} = l_rho,l - l_xi,l and the
/// relative differentials d_{rho., l} = (1/m) sum_xi d_{rho xi, l}.
struct LossDifferentials {
  std::vector<int> members;
  std::vector<Eigen::MatrixXd> pairwise;  // [rho](xi, l), antisymmetric in (rho, xi)
  Eigen::MatrixXd relative;               // rho x l
};

LossDifferentials loss_differentials(const LossPanel& panel, std::span<const int> members);

/// Automatic block length: for every pairwise differential series, the
/// longest run of lags 1..j whose single-lag least-squares autoregressions
/// are all significant at 5% (|t| > 1.96), capped at min(10, N/3); the
/// maximum over pairs, floored at 1.
int auto_block_length(const LossPanel& panel, std::span<const int> members);

/// Sequential EPA testing with a moving-blocks bootstrap (wrap-around); the
/// worst model is removed until the equal-predictive-ability hypothesis is
/// accepted at the configured confidence.
McsResult run_mcs(const LossPanel& panel, const McsConfig& config);

nlohmann::json mcs_result_to_json(const McsResult& result);
McsResult mcs_result_from_json(const nlohmann::json& j);
void write_mcs_pvalues_csv(const McsResult& result, std::ostream& out);

}  // namespace mortfc
