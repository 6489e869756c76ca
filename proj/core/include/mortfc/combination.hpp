#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mortfc/forecast.hpp"

namespace mortfc {

enum class WeightProvenance { mcs_equal, inverse_error };

std::string to_string(WeightProvenance p);

struct CombinationWeights {
  std::vector<int> model_labels;
  Eigen::VectorXd weights;  // nonnegative, sums to 1
  WeightProvenance provenance = WeightProvenance::mcs_equal;
};

/// Weight 1/|set| on every member of the superior set.
CombinationWeights equal_weights(std::span<const int> superior_set);

/// w_rho proportional to the inverse of the model's mean validation loss.
/// A zero loss takes weight 1 (the limit of the rule), with a warning.
CombinationWeights inverse_error_weights(std::span<const int> model_labels,
                                         std::span<const double> mean_losses,
                                         std::vector<std::string>* warnings = nullptr);

/// Weighted mean of points and of both interval bounds; all inputs must
/// share ages, horizons, and alpha.
ForecastResult combine_forecasts(std::span<const ForecastResult> results,
                                 const CombinationWeights& weights, int combined_label);

nlohmann::json combination_weights_to_json(const CombinationWeights& w);

}  // namespace mortfc
