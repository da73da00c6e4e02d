#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "calbound/error.hpp"
#include "calbound/rng.hpp"
#include "calbound/synthdata.hpp"

using calbound::DenseMatrix;
using calbound::Rng;
namespace synthdata = calbound::synthdata;

namespace {

double column_mean(const DenseMatrix& m, std::size_t j) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, j);
  return s / static_cast<double>(m.rows());
}

double column_var(const DenseMatrix& m, std::size_t j) {
  const double mu = column_mean(m, j);
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += (m(i, j) - mu) * (m(i, j) - mu);
  return s / static_cast<double>(m.rows());
}

}  // namespace

TEST_CASE("spec invariants are enforced") {
  synthdata::ShiftSpec spec;
  spec.block1_dims = 500;  // breaks the block sum
  CHECK_THROWS_AS(spec.validate(), calbound::InvalidSpec);

  synthdata::ShiftSpec flip;
  flip.label_flip_rate = 0.5;
  CHECK_THROWS_AS(flip.validate(), calbound::InvalidSpec);

  synthdata::ShiftSpec scale;
  scale.ood_scale = 0.0;
  CHECK_THROWS_AS(scale.validate(), calbound::InvalidSpec);
}

TEST_CASE("default layout: 1000 columns in 400/400/200 blocks") {
  synthdata::ShiftSpec spec;
  spec.sizes = {200, 100, 100};
  spec.seed = 5;
  const auto data = synthdata::generate(spec);
  CHECK(data.id_train.features.cols() == 1000);
  CHECK(data.id_test.features.cols() == 1000);
  CHECK(data.ood_test.features.cols() == 1000);
  CHECK(spec.block1_dims + spec.block2_dims + spec.noise_dims == spec.total_dims);
  CHECK(data.id_train.features.rows() == 200);
  CHECK(data.id_train.labels.size() == 200);
}

TEST_CASE("zero flip rate leaves block means aligned with observed labels") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(9);
  spec.label_flip_rate = 0.0;
  spec.class_separation = 3.0;  // strong signal so the sign test is decisive
  const auto data = synthdata::generate(spec);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < data.id_train.features.rows(); ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < spec.block1_dims; ++j) m += data.id_train.features(i, j);
    if ((m > 0.0) == (data.id_train.labels[i] == 1)) ++matches;
  }
  CHECK(matches == data.id_train.features.rows());
}

TEST_CASE("determinism: generate twice gives bit-identical datasets") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(1234);
  const auto a = synthdata::generate(spec);
  const auto b = synthdata::generate(spec);
  CHECK(a.id_train.features.data() == b.id_train.features.data());
  CHECK(a.id_test.features.data() == b.id_test.features.data());
  CHECK(a.ood_test.features.data() == b.ood_test.features.data());
  CHECK(a.id_train.labels == b.id_train.labels);
  CHECK(a.ood_test.labels == b.ood_test.labels);
}

TEST_CASE("no shift means OOD test is distributionally identical to ID test") {
  // Per-column mean agreement within 4 standard errors, pooled over 20 seeds.
  synthdata::ShiftSpec base = synthdata::ShiftSpec::small_profile(0);
  base.ood_mean_shift = 0.0;
  base.ood_scale = 1.0;
  std::size_t mean_violations = 0;
  std::size_t checks = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    synthdata::ShiftSpec spec = base;
    spec.seed = seed;
    const auto data = synthdata::generate(spec);
    const double n_id = static_cast<double>(data.id_test.features.rows());
    const double n_ood = static_cast<double>(data.ood_test.features.rows());
    for (std::size_t j = 0; j < spec.total_dims; j += 7) {
      const double se = std::sqrt(column_var(data.id_test.features, j) / n_id +
                                  column_var(data.ood_test.features, j) / n_ood);
      const double gap = std::fabs(column_mean(data.id_test.features, j) -
                                   column_mean(data.ood_test.features, j));
      if (gap > 4.0 * se) ++mean_violations;
      ++checks;
    }
  }
  // 4 SE two-sided: expected violation rate ~6e-5; tolerate a few outliers.
  CHECK(mean_violations <= checks / 100);
}

TEST_CASE("shift locality: means move only in block 1, variance only in block 2") {
  synthdata::ShiftSpec spec;
  spec.sizes = {4000, 4000, 4000};
  spec.seed = 77;
  const auto data = synthdata::generate(spec);
  const double n = 4000.0;

  std::size_t block1_mean_hits = 0;
  std::size_t elsewhere_mean_hits = 0;
  std::size_t block2_var_hits = 0;
  std::size_t elsewhere_var_hits = 0;
  for (std::size_t j = 0; j < spec.total_dims; ++j) {
    const double var_id = column_var(data.id_test.features, j);
    const double var_ood = column_var(data.ood_test.features, j);
    const double se = std::sqrt(var_id / n + var_ood / n);
    const bool mean_shifted = std::fabs(column_mean(data.ood_test.features, j) -
                                        column_mean(data.id_test.features, j)) > 5.0 * se;
    const bool var_shifted = var_ood / var_id < 0.5 || var_ood / var_id > 1.5;
    const bool in_block1 = j < spec.block1_dims;
    const bool in_block2 = j >= spec.block1_dims && j < spec.block1_dims + spec.block2_dims;
    if (mean_shifted && in_block1) ++block1_mean_hits;
    if (mean_shifted && !in_block1) ++elsewhere_mean_hits;
    if (var_shifted && in_block2) ++block2_var_hits;
    if (var_shifted && !in_block2) ++elsewhere_var_hits;
  }
  // The 0.1 default shift sits near 4.2 se at this sample size, so ask for
  // a solid majority of block-1 columns rather than all of them.
  CHECK(block1_mean_hits > spec.block1_dims / 4);
  CHECK(elsewhere_mean_hits == 0);
  CHECK(block2_var_hits == spec.block2_dims);
  CHECK(elsewhere_var_hits == 0);
}

TEST_CASE("empirical flip rate sits within 3 standard errors of the spec") {
  // The flip draw consumes one uniform whether or not it flips, so the same
  // seed with flip rate 0 produces the clean-label counterfactual.
  synthdata::ShiftSpec spec;
  spec.sizes = {4000, 2000, 2000};
  spec.seed = 8;
  synthdata::ShiftSpec clean_spec = spec;
  clean_spec.label_flip_rate = 0.0;
  const auto noisy = synthdata::generate(spec);
  const auto clean = synthdata::generate(clean_spec);

  const std::pair<const std::vector<int>*, const std::vector<int>*> splits[] = {
      {&noisy.id_train.labels, &clean.id_train.labels},
      {&noisy.id_test.labels, &clean.id_test.labels},
      {&noisy.ood_test.labels, &clean.ood_test.labels}};
  for (const auto& [flipped, reference] : splits) {
    REQUIRE(flipped->size() == reference->size());
    std::size_t flips = 0;
    for (std::size_t i = 0; i < flipped->size(); ++i)
      if ((*flipped)[i] != (*reference)[i]) ++flips;
    const double n = static_cast<double>(flipped->size());
    const double rate = static_cast<double>(flips) / n;
    const double se = std::sqrt(0.15 * 0.85 / n);
    CHECK(std::fabs(rate - 0.15) <= 3.0 * se);
  }
}

TEST_CASE("class balance within 3 standard errors per split") {
  synthdata::ShiftSpec spec;
  spec.sizes = {4000, 2000, 2000};
  spec.seed = 3;
  const auto data = synthdata::generate(spec);
  for (const auto* split : {&data.id_train, &data.id_test, &data.ood_test}) {
    double mean = 0.0;
    for (int y : split->labels) mean += y;
    mean /= static_cast<double>(split->labels.size());
    CHECK(std::fabs(mean - 0.5) <
          3.0 * std::sqrt(0.25 / static_cast<double>(split->labels.size())));
  }
}

TEST_CASE("bayes error limits") {
  synthdata::ShiftSpec spec;
  spec.class_separation = 1e9;
  CHECK(synthdata::bayes_error(spec) == doctest::Approx(0.15).epsilon(1e-9));
  spec.class_separation = 0.0;
  CHECK(synthdata::bayes_error(spec) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("bayes error matches Monte-Carlo classification with the optimal rule") {
  synthdata::ShiftSpec spec;  // defaults: separation 0.05, flip 0.15
  const double predicted = synthdata::bayes_error(spec);

  // The optimal statistic (sum over signal coordinates) is Gaussian
  // N(sign * s * D, D); draw it directly, a million times.
  Rng rng(99);
  const std::size_t trials = 1000000;
  const auto signal = static_cast<double>(spec.block1_dims + spec.block2_dims);
  std::size_t errors = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const int clean = rng.bernoulli(0.5) ? 1 : 0;
    const double sign = clean ? 1.0 : -1.0;
    const double stat = sign * spec.class_separation * signal + std::sqrt(signal) * rng.normal();
    const int pred = stat > 0.0 ? 1 : 0;
    const int observed = rng.bernoulli(spec.label_flip_rate) ? 1 - clean : clean;
    if (pred != observed) ++errors;
  }
  const double mc = static_cast<double>(errors) / static_cast<double>(trials);
  CHECK(std::fabs(mc - predicted) < 0.005);
}

TEST_CASE("paired views split the blocks") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(4);
  const auto data = synthdata::generate(spec);
  const auto views = synthdata::make_paired_views(data.id_train.features, spec);
  CHECK(views.view_v.cols() == spec.block1_dims + spec.noise_dims);
  CHECK(views.view_l.cols() == spec.block2_dims);
  CHECK(views.view_v(0, 0) == data.id_train.features(0, 0));
  CHECK(views.view_l(0, 0) == data.id_train.features(0, spec.block1_dims));
  CHECK(views.view_v(0, spec.block1_dims) ==
        data.id_train.features(0, spec.block1_dims + spec.block2_dims));
}

TEST_CASE("dataset save/load round trip") {
  synthdata::ShiftSpec spec = synthdata::ShiftSpec::small_profile(21);
  spec.sizes = {50, 30, 30};
  const auto data = synthdata::generate(spec);
  const auto dir = std::filesystem::temp_directory_path() / "calbound_synthdata_test";
  std::filesystem::remove_all(dir);
  synthdata::save_dataset(data, spec, dir);
  const auto [loaded, loaded_spec] = synthdata::load_dataset(dir);
  CHECK(loaded_spec.seed == spec.seed);
  CHECK(loaded.id_train.features.rows() == 50);
  CHECK(loaded.id_train.labels == data.id_train.labels);
  bool exact = true;
  for (std::size_t k = 0; k < data.ood_test.features.size(); ++k) {
    if (loaded.ood_test.features.data()[k] != data.ood_test.features.data()[k]) exact = false;
  }
  CHECK(exact);  // 17 significant digits round-trip doubles exactly
  std::filesystem::remove_all(dir);
}
