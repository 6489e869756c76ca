#include "mortfc/combination.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mortfc {

std::string to_string(WeightProvenance p) {
  return p == WeightProvenance::mcs_equal ? "mcs_equal" : "inverse_error";
}

CombinationWeights equal_weights(std::span<const int> superior_set) {
  if (superior_set.empty()) throw std::invalid_argument("equal_weights: empty superior set");
  CombinationWeights w;
  w.model_labels.assign(superior_set.begin(), superior_set.end());
  w.weights = Eigen::VectorXd::Constant(static_cast<int>(superior_set.size()),
                                        1.0 / static_cast<double>(superior_set.size()));
  w.provenance = WeightProvenance::mcs_equal;
  return w;
}

CombinationWeights inverse_error_weights(std::span<const int> model_labels,
                                         std::span<const double> mean_losses,
                                         std::vector<std::string>* warnings) {
  if (model_labels.size() != mean_losses.size() || model_labels.empty())
    throw std::invalid_argument("inverse_error_weights: label/loss length mismatch");
  CombinationWeights w;
  w.model_labels.assign(model_labels.begin(), model_labels.end());
  w.provenance = WeightProvenance::inverse_error;
  const int n = static_cast<int>(model_labels.size());
  w.weights = Eigen::VectorXd::Zero(n);

  for (int i = 0; i < n; ++i) {
    if (mean_losses[i] < 0.0)
      throw std::invalid_argument("inverse_error_weights: negative mean loss");
    if (mean_losses[i] == 0.0) {
      if (warnings)
        warnings->push_back("inverse_error_weights: zero loss for model " +
                            std::to_string(model_labels[i]) + "; it takes the full weight");
      w.weights(i) = 1.0;
      return w;
    }
  }
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += 1.0 / mean_losses[i];
  for (int i = 0; i < n; ++i) w.weights(i) = (1.0 / mean_losses[i]) / denom;
  return w;
}

ForecastResult combine_forecasts(std::span<const ForecastResult> results,
                                 const CombinationWeights& weights, int combined_label) {
  if (results.empty()) throw std::invalid_argument("combine_forecasts: no inputs");
  if (static_cast<int>(results.size()) != weights.weights.size())
    throw std::invalid_argument("combine_forecasts: result/weight count mismatch");
  const ForecastResult& first = results[0];
  for (const auto& r : results) {
    if (r.ages != first.ages || r.h != first.h || r.alpha != first.alpha)
      throw std::invalid_argument("combine_forecasts: grid mismatch across inputs");
  }
  // Inputs are matched to weights by label.
  std::vector<int> order(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto it = std::find(weights.model_labels.begin(), weights.model_labels.end(),
                        results[i].model_label);
    if (it == weights.model_labels.end())
      throw std::invalid_argument("combine_forecasts: forecast for model " +
                                  std::to_string(results[i].model_label) +
                                  " has no matching weight");
    order[i] = static_cast<int>(it - weights.model_labels.begin());
  }

  ForecastResult out;
  out.model_label = combined_label;
  out.ages = first.ages;
  out.h = first.h;
  out.alpha = first.alpha;
  out.point = Eigen::MatrixXd::Zero(first.point.rows(), first.point.cols());
  out.lower = out.point;
  out.upper = out.point;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const double wv = weights.weights(order[i]);
    out.point += wv * results[i].point;
    out.lower += wv * results[i].lower;
    out.upper += wv * results[i].upper;
  }
  out.metadata.push_back("combination: " + to_string(weights.provenance));
  return out;
}

nlohmann::json combination_weights_to_json(const CombinationWeights& w) {
  nlohmann::json j;
  j["provenance"] = to_string(w.provenance);
  for (std::size_t i = 0; i < w.model_labels.size(); ++i)
    j["weights"].push_back(
        {{"model", w.model_labels[i]}, {"weight", w.weights(static_cast<int>(i))}});
  return j;
}

}  // namespace mortfc
