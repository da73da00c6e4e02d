#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "calbound/matrix.hpp"

namespace calbound::synthdata {

struct SplitSizes {
  std::size_t id_train = 4000;
  std::size_t id_test = 2000;
  std::size_t ood_test = 2000;
};

// Layout and shift parameters of the synthetic binary-classification
// benchmark. Features come in three column blocks: two label-correlated
// Gaussian blocks and a pure-noise block. The OOD split is an independent
// draw of the ID test process with block 1 mean-shifted and block 2 rescaled;
// the noise block is left intact.
struct ShiftSpec {
  std::size_t total_dims = 1000;
  std::size_t block1_dims = 400;
  std::size_t block2_dims = 400;
  std::size_t noise_dims = 200;
  double label_flip_rate = 0.15;
  double ood_mean_shift = 0.1;  // additive, per block-1 dimension
  double ood_scale = 0.5;       // multiplicative, block-2 dimensions
  double class_separation = 0.05;
  SplitSizes sizes;
  std::uint64_t seed = 0;

  // Throws InvalidSpec naming the violated invariant.
  void validate() const;

  // 10x smaller layout (40/40/20 dims, 1000/500/500 samples) for quick runs.
  static ShiftSpec small_profile(std::uint64_t seed);
};

struct LabeledSplit {
  DenseMatrix features;     // samples x total_dims
  std::vector<int> labels;  // {0,1}
};

struct ShiftedDataset {
  LabeledSplit id_train;
  LabeledSplit id_test;
  LabeledSplit ood_test;
};

// Deterministic function of the spec (each split on an independent derived
// SplitMix64 stream).
ShiftedDataset generate(const ShiftSpec& spec);

// Misclassification probability of the optimal linear rule separating two
// spherical Gaussians whose means differ by 2*separation in each of
// signal_dims coordinates: Phi(-separation * sqrt(signal_dims)).
double gaussian_misclass(double separation, std::size_t signal_dims);

// Error floor of any classifier on the generated task:
// flip + (1 - 2*flip) * gaussian_misclass(separation, block1+block2 dims).
double bayes_error(const ShiftSpec& spec);

// Standard normal CDF.
double normal_cdf(double x);

// Pseudo image/text views for the two-tower track: view_v = block-1 + noise
// columns, view_l = block-2 columns.
struct PairedSplit {
  DenseMatrix view_v;
  DenseMatrix view_l;
};
PairedSplit make_paired_views(const DenseMatrix& features, const ShiftSpec& spec);

// CSV pair per split (features, labels) plus spec.json sidecar.
void save_dataset(const ShiftedDataset& data, const ShiftSpec& spec,
                  const std::filesystem::path& dir);
std::pair<ShiftedDataset, ShiftSpec> load_dataset(const std::filesystem::path& dir);

std::string spec_to_json_string(const ShiftSpec& spec);
ShiftSpec spec_from_json_string(const std::string& text);

}  // namespace calbound::synthdata
