#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "calbound/bounds.hpp"
#include "calbound/error.hpp"
#include "calbound/linalg.hpp"
#include "calbound/rng.hpp"
#include "calbound/synthdata.hpp"
#include "oracles.hpp"

using calbound::DenseMatrix;
using calbound::Rng;
namespace bounds = calbound::bounds;
namespace cal = calbound::calibration;
namespace synthdata = calbound::synthdata;

namespace {

// Affine hypothesis scaled into [0,1] over the reference sample; stays in the
// additive (coordinate-wise) class exactly.
bounds::Predictor make_unit_range_linear(const std::vector<double>& w, double scale,
                                         const std::vector<double>& center) {
  return [w, scale, center](const DenseMatrix& x) {
    std::vector<double> out(x.rows(), 0.5);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double dot = 0.0;
      const double* row = x.row_ptr(i);
      for (std::size_t j = 0; j < w.size(); ++j) dot += w[j] * (row[j] - center[j]);
      out[i] = 0.5 + dot / scale;
    }
    return out;
  };
}

// Scale chosen so every prediction over both feature sets lands in [0,1].
bounds::Predictor random_bounded_linear(const DenseMatrix& id_features,
                                        const DenseMatrix& ood_features, Rng& rng) {
  const std::size_t d = id_features.cols();
  std::vector<double> w(d), center(d, 0.0);
  for (double& v : w) v = rng.normal();
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < id_features.rows(); ++i) s += id_features(i, j);
    center[j] = s / static_cast<double>(id_features.rows());
  }
  double max_abs = 1e-12;
  for (const DenseMatrix* m : {&id_features, &ood_features}) {
    for (std::size_t i = 0; i < m->rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += w[j] * ((*m)(i, j) - center[j]);
      max_abs = std::max(max_abs, std::fabs(dot));
    }
  }
  return make_unit_range_linear(w, 2.0 * max_abs, center);
}

bounds::RepresentationFn identity_representation() {
  return [](const DenseMatrix& x) { return x; };
}

}  // namespace

TEST_CASE("sigma_min of iid standardized gaussians is near one") {
  Rng rng(1);
  DenseMatrix x(100000, 10);
  for (double& v : x.data()) v = rng.normal();
  const auto sm = bounds::representation_sigma_min(x);
  CHECK_FALSE(sm.zero_variance);
  CHECK(std::fabs(sm.value - 1.0) < 0.05);

  // Cross-check against the independent eigen-oracle on the correlation matrix.
  const DenseMatrix cov = calbound::linalg::normalized_covariance(x);
  const auto eig = oracle::symmetric_eigenvalues(cov);
  CHECK(sm.value == doctest::Approx(eig.back()).epsilon(1e-8));
}

TEST_CASE("duplicated coordinate collapses sigma_min to zero") {
  Rng rng(2);
  DenseMatrix x(500, 4);
  for (std::size_t i = 0; i < 500; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    x(i, 2) = rng.normal();
    x(i, 3) = x(i, 0);  // exact collinearity
  }
  const auto sm = bounds::representation_sigma_min(x);
  CHECK_FALSE(sm.zero_variance);
  CHECK(sm.value == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("constant representation column sets the zero-variance flag") {
  Rng rng(3);
  DenseMatrix x(100, 3);
  for (std::size_t i = 0; i < 100; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = 2.5;
    x(i, 2) = rng.normal();
  }
  const auto sm = bounds::representation_sigma_min(x);
  CHECK(sm.zero_variance);
  CHECK(sm.value == 0.0);
}

TEST_CASE("calibration error proxy on hand cases") {
  // Constant predictor equals the base rate within its single group.
  const std::vector<double> h(8, 0.5);
  const std::vector<int> y = {1, 0, 1, 0, 1, 0, 1, 0};
  CHECK(bounds::calibration_error_proxy(h, y, cal::Grouping::exact()) ==
        doctest::Approx(0.0).epsilon(1e-15));

  // Deterministic wrong-confidence predictor: h = 0.9 on a 50%-accurate group.
  const std::vector<double> h9(10, 0.9);
  const std::vector<int> y5 = {1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  CHECK(bounds::calibration_error_proxy(h9, y5, cal::Grouping::exact()) ==
        doctest::Approx(0.16).epsilon(1e-12));
}

TEST_CASE("calibration error proxy of the calibrated construction is small") {
  Rng rng(4);
  const std::size_t n = 100000;
  std::vector<double> h(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    h[i] = rng.uniform(0.05, 0.95);
    y[i] = rng.bernoulli(h[i]) ? 1 : 0;
  }
  CHECK(bounds::calibration_error_proxy(h, y, cal::Grouping::binned(15)) < 0.005);
}

TEST_CASE("bound sides for the constant-half predictor") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(11);
  const auto data = synthdata::generate(spec);
  bounds::ModelEval eval;
  eval.predict = [](const DenseMatrix& x) { return std::vector<double>(x.rows(), 0.5); };
  eval.representation = identity_representation();
  const auto report = bounds::evaluate_bound_sides(eval, data, 15);

  CHECK(std::fabs(report.ood_mse - 0.25) < 0.01);  // E[(0.5 - y)^2] = 0.25
  CHECK(report.id_cal_proxy < 0.01);               // single group, c = base rate
  CHECK(report.lhs_cls ==
        doctest::Approx(report.ood_mse + report.ood_sharpness - 1.0).epsilon(1e-15));
  CHECK(report.representation_dim == spec.total_dims);
  CHECK(report.sigma_min > 0.0);
  CHECK(report.inv_sigma_term ==
        doctest::Approx(static_cast<double>(spec.total_dims) / report.sigma_min));
}

TEST_CASE("identical ID/OOD process: lhs_cal matches id_cal_proxy within 3 se over seeds") {
  std::vector<double> diffs;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(seed);
    spec.ood_mean_shift = 0.0;
    spec.ood_scale = 1.0;
    const auto data = synthdata::generate(spec);

    // A fixed linear probe playing the role of a model.
    Rng rng(seed * 17 + 1);
    const auto h = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
    bounds::ModelEval eval;
    eval.predict = h;
    eval.representation = identity_representation();
    const auto report = bounds::evaluate_bound_sides(eval, data, 15);
    diffs.push_back(report.lhs_cal - report.id_cal_proxy);
  }
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(diffs.size());
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= static_cast<double>(diffs.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(diffs.size()));
  CHECK(std::fabs(mean) <= 3.0 * std::max(se, 1e-6));
}

TEST_CASE("disagreement estimate is zero for identical models or identical domains") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(21);
  const auto data = synthdata::generate(spec);
  Rng rng(5);
  const auto h = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);

  const std::vector<bounds::Predictor> identical_pool = {h, h, h};
  const auto est =
      bounds::estimate_sd_disagreement(identical_pool, data.id_test.features,
                                       data.ood_test.features);
  CHECK(est.value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(est.pairs_sampled == 3);

  const auto h2 = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
  const std::vector<bounds::Predictor> pool = {h, h2};
  const auto same_domain =
      bounds::estimate_sd_disagreement(pool, data.id_test.features, data.id_test.features);
  CHECK(same_domain.value == doctest::Approx(0.0).epsilon(1e-14));

  CHECK_THROWS_AS(
      bounds::estimate_sd_disagreement({h}, data.id_test.features, data.ood_test.features),
      calbound::InsufficientPool);
}

TEST_CASE("disagreement estimate obeys the d/sigma_min ceiling on 50 random pools") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(100 + trial);
    spec.sizes = {400, 400, 400};
    const auto data = synthdata::generate(spec);

    std::vector<bounds::Predictor> pool;
    const std::size_t pool_size = 2 + rng.next_u64() % 3;
    for (std::size_t k = 0; k < pool_size; ++k)
      pool.push_back(random_bounded_linear(data.id_test.features, data.ood_test.features, rng));

    const auto est =
        bounds::estimate_sd_disagreement(pool, data.id_test.features, data.ood_test.features);
    const auto sm = bounds::representation_sigma_min(data.id_test.features);
    REQUIRE(sm.value > bounds::kSigmaFloor);
    const double ceiling = static_cast<double>(spec.total_dims) / sm.value;
    CHECK(est.value <= ceiling);
  }
}

TEST_CASE("discrepancy ratio check degenerate cases") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(31);
  const auto data = synthdata::generate(spec);
  Rng rng(7);
  const auto h = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
  CHECK_THROWS_AS(bounds::discrepancy_ratio_check(h, h, data.id_test.features,
                                                  data.ood_test.features,
                                                  identity_representation()),
                  calbound::DegenerateDenominator);

  const auto h2 = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
  const auto same = bounds::discrepancy_ratio_check(h, h2, data.id_test.features,
                                                    data.id_test.features,
                                                    identity_representation());
  CHECK(same.ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.bound >= 1.0);
  CHECK(same.ratio <= same.bound);
}

TEST_CASE("ratio stays below d/sigma_min in 100 of 100 additive-linear trials") {
  Rng rng(8);
  std::size_t trials_run = 0;
  std::size_t within = 0;
  for (int t = 0; t < 100; ++t) {
    synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(500 + t);
    spec.sizes = {400, 300, 300};
    const auto data = synthdata::generate(spec);
    const auto h = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
    const auto h2 = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
    try {
      const auto check = bounds::discrepancy_ratio_check(
          h, h2, data.id_test.features, data.ood_test.features, identity_representation());
      ++trials_run;
      if (check.ratio <= check.bound) ++within;
    } catch (const calbound::DegenerateDenominator&) {
      // A duplicate hypothesis draw; the precondition excludes it.
    }
  }
  CHECK(trials_run >= 95);
  CHECK(within == trials_run);
}

TEST_CASE("rhs raw-sum fallback rises when the representation is closer to collinear") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(41);
  const auto data = synthdata::generate(spec);
  Rng rng(9);
  const auto h = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);

  bounds::ModelEval well;
  well.predict = h;
  well.representation = identity_representation();

  // Mixing columns toward a common direction lowers sigma_min; predictions
  // (hence id_ece) are untouched.
  bounds::ModelEval narrow;
  narrow.predict = h;
  narrow.representation = [](const DenseMatrix& x) {
    DenseMatrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 1; j < x.cols(); ++j)
        out(i, j) = 0.9 * x(i, 0) + 0.1 * x(i, j);
    }
    return out;
  };

  const auto a = bounds::evaluate_bound_sides(well, data, 15);
  const auto b = bounds::evaluate_bound_sides(narrow, data, 15);
  CHECK(b.sigma_min < a.sigma_min);
  CHECK(a.id_ece == doctest::Approx(b.id_ece).epsilon(1e-15));
  CHECK(b.rhs_proxy > a.rhs_proxy);
}

TEST_CASE("evaluate_bound_sides is deterministic") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(51);
  const auto data = synthdata::generate(spec);
  Rng rng(10);
  const auto h = random_bounded_linear(data.id_test.features, data.ood_test.features, rng);
  bounds::ModelEval eval;
  eval.predict = h;
  eval.representation = identity_representation();
  const auto a = bounds::evaluate_bound_sides(eval, data, 15);
  const auto b = bounds::evaluate_bound_sides(eval, data, 15);
  CHECK(a.sigma_min == b.sigma_min);
  CHECK(a.ood_ece == b.ood_ece);
  CHECK(a.lhs_cal == b.lhs_cal);
  CHECK(a.rhs_proxy == b.rhs_proxy);
}
