#include <doctest.h>

#include <algorithm>

#include "mortfc/combination.hpp"
#include "mortfc/rng.hpp"
#include "test_util.hpp"

using namespace mortfc;

namespace {

ForecastResult flat_result(int label, double point, double half_width, int k = 3, int h = 2) {
  ForecastResult r;
  r.model_label = label;
  r.ages = testutil::age_range(60, 60 + k - 1);
  r.h = h;
  r.alpha = 0.2;
  r.point = Eigen::MatrixXd::Constant(k, h, point);
  r.lower = Eigen::MatrixXd::Constant(k, h, point - half_width);
  r.upper = Eigen::MatrixXd::Constant(k, h, point + half_width);
  return r;
}

}  // namespace

TEST_CASE("equal weights") {
  const std::vector<int> single = {8};
  const CombinationWeights w1 = equal_weights(single);
  CHECK(w1.weights(0) == doctest::Approx(1.0));

  const std::vector<int> triple = {13, 14, 15};
  const CombinationWeights w3 = equal_weights(triple);
  for (int i = 0; i < 3; ++i) CHECK(w3.weights(i) == doctest::Approx(1.0 / 3));
  CHECK(w3.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(equal_weights(std::vector<int>{}));
}

TEST_CASE("inverse error weights") {
  const std::vector<int> labels = {1, 2};
  const std::vector<double> losses = {1.0, 3.0};
  const CombinationWeights w = inverse_error_weights(labels, losses);
  CHECK(w.weights(0) == doctest::Approx(0.75));
  CHECK(w.weights(1) == doctest::Approx(0.25));

  const std::vector<double> equal_losses = {2.0, 2.0};
  const CombinationWeights we = inverse_error_weights(labels, equal_losses);
  CHECK(we.weights(0) == doctest::Approx(0.5));
  CHECK(we.weights(1) == doctest::Approx(0.5));

  const std::vector<int> four = {1, 2, 3, 4};
  const std::vector<double> same = {2.0, 2.0, 2.0, 2.0};
  const CombinationWeights w4 = inverse_error_weights(four, same);
  for (int i = 0; i < 4; ++i) CHECK(w4.weights(i) == doctest::Approx(0.25));

  SUBCASE("zero loss takes the whole weight with a warning") {
    std::vector<std::string> warnings;
    const std::vector<double> with_zero = {0.0, 3.0};
    const CombinationWeights wz = inverse_error_weights(labels, with_zero, &warnings);
    CHECK(wz.weights(0) == 1.0);
    CHECK(wz.weights(1) == 0.0);
    CHECK(warnings.size() == 1);
  }
}

TEST_CASE("combining a single model is the identity") {
  const ForecastResult r = flat_result(7, -4.0, 0.5);
  const std::vector<int> labels = {7};
  const std::vector<ForecastResult> inputs = {r};
  const ForecastResult out = combine_forecasts(inputs, equal_weights(labels), 18);
  CHECK((out.point - r.point).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.lower - r.lower).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.upper - r.upper).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.model_label == 18);
}

TEST_CASE("equal-weight combination averages points and bounds") {
  const std::vector<ForecastResult> inputs = {flat_result(1, -4.0, 0.2),
                                              flat_result(2, -3.0, 0.6)};
  const std::vector<int> labels = {1, 2};
  const ForecastResult out = combine_forecasts(inputs, equal_weights(labels), 18);
  CHECK(out.point(0, 0) == doctest::Approx(-3.5));
  CHECK(out.lower(0, 0) == doctest::Approx((-4.2 - 3.6) / 2));
  CHECK(out.upper(0, 0) == doctest::Approx((-3.8 - 2.4) / 2));
  for (int i = 0; i < out.point.rows(); ++i)
    for (int j = 0; j < out.point.cols(); ++j) {
      CHECK(out.lower(i, j) <= out.point(i, j));
      CHECK(out.point(i, j) <= out.upper(i, j));
    }
}

TEST_CASE("combination is permutation invariant") {
  std::vector<ForecastResult> inputs = {flat_result(1, -4.0, 0.2), flat_result(2, -3.0, 0.6),
                                        flat_result(3, -2.0, 0.1)};
  const std::vector<int> labels = {1, 2, 3};
  const std::vector<double> losses = {1.0, 2.0, 4.0};
  const CombinationWeights w = inverse_error_weights(labels, losses);
  const ForecastResult a = combine_forecasts(inputs, w, 20);
  std::swap(inputs[0], inputs[2]);
  const ForecastResult b = combine_forecasts(inputs, w, 20);
  CHECK((a.point - b.point).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((a.lower - b.lower).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("combined point stays in the element-wise convex hull") {
  RngStream rng(6);
  std::vector<ForecastResult> inputs;
  std::vector<int> labels;
  for (int m = 0; m < 4; ++m) {
    inputs.push_back(flat_result(m + 1, -4.0 + rng.normal(), 0.3 + 0.2 * rng.uniform()));
    labels.push_back(m + 1);
  }
  const ForecastResult out = combine_forecasts(inputs, equal_weights(labels), 18);
  for (int i = 0; i < out.point.rows(); ++i) {
    for (int j = 0; j < out.point.cols(); ++j) {
      double lo = 1e300, hi = -1e300;
      for (const auto& r : inputs) {
        lo = std::min(lo, r.point(i, j));
        hi = std::max(hi, r.point(i, j));
      }
      CHECK(out.point(i, j) >= lo - 1e-12);
      CHECK(out.point(i, j) <= hi + 1e-12);
    }
  }
}

TEST_CASE("identical inputs combine to themselves") {
  const ForecastResult r = flat_result(1, -3.3, 0.4);
  std::vector<ForecastResult> inputs = {r, r, r};
  inputs[1].model_label = 2;
  inputs[2].model_label = 3;
  const std::vector<int> labels = {1, 2, 3};
  const ForecastResult out = combine_forecasts(inputs, equal_weights(labels), 19);
  CHECK((out.point - r.point).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((out.lower - r.lower).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("mismatched grids are rejected") {
  const ForecastResult a = flat_result(1, -4.0, 0.2, 3, 2);
  const ForecastResult b = flat_result(2, -4.0, 0.2, 4, 2);
  const std::vector<int> labels = {1, 2};
  const std::vector<ForecastResult> inputs = {a, b};
  CHECK_THROWS(combine_forecasts(inputs, equal_weights(labels), 18));
}
