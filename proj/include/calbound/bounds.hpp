#pragma once

#include <functional>
#include <vector>

#include "calbound/calibration.hpp"
#include "calbound/matrix.hpp"
#include "calbound/model.hpp"
#include "calbound/synthdata.hpp"

namespace calbound::bounds {

// Below this floor the reciprocal term is reported as +inf and the run is
// flagged for exclusion from correlation analyses.
inline constexpr double kSigmaFloor = 1e-10;

using Predictor = std::function<std::vector<double>(const DenseMatrix&)>;
using RepresentationFn = std::function<DenseMatrix(const DenseMatrix&)>;

struct SigmaMinResult {
  double value = 0.0;
  bool zero_variance = false;  // a representation column was constant
};

// Smallest singular value of the per-dimension standardized covariance of a
// representation sample matrix. A constant column is reported as value 0 with
// the flag set rather than an error.
SigmaMinResult representation_sigma_min(const DenseMatrix& representation);

// Same on the centered (unscaled) covariance.
double raw_covariance_sigma_min(const DenseMatrix& representation);

// E[(h(x) - c_hat(x))^2] with c_hat from the given grouping.
double calibration_error_proxy(const std::vector<double>& probs, const std::vector<int>& labels,
                               const calibration::Grouping& grouping);

// Per-model record of every empirically estimable quantity in the two bounds.
struct BoundReport {
  double sigma_min = 0.0;      // standardized representation covariance, ID test
  double sigma_min_raw = 0.0;  // centered covariance, same representation
  bool sigma_floor_flagged = false;
  double inv_sigma_term = 0.0;  // d / sigma_min (+inf when flagged)
  std::size_t representation_dim = 0;

  double id_cal_proxy = 0.0;  // empirical ID calibration error (binned squared)
  double id_ece = 0.0;
  double id_accuracy = 0.0;

  double ood_mse = 0.0;  // E[(h - y)^2] on OOD test
  double ood_ece = 0.0;
  double ood_accuracy = 0.0;
  double ood_sharpness = 0.0;  // E[c^2] on OOD, binned c
  double ood_base_rate = 0.0;  // E[y] on OOD (the exact-identity constant)

  double lhs_cal = 0.0;    // OOD calibration error proxy
  double lhs_cls = 0.0;    // ood_mse + ood_sharpness - 1
  double rhs_proxy = 0.0;  // raw sum here; sweeps overwrite with their aggregator
};

struct ModelEval {
  Predictor predict;
  RepresentationFn representation;
};

ModelEval make_mlp_eval(const model::MlpParams& params);
// Representation for the two-tower side is the projected (pre-normalization)
// image view.
ModelEval make_two_tower_eval(const model::TwoTowerParams& params,
                              const synthdata::ShiftSpec& spec);

BoundReport evaluate_bound_sides(const ModelEval& model_eval,
                                 const synthdata::ShiftedDataset& dataset, std::size_t n_bins);

struct DisagreementEstimate {
  double value = 0.0;
  std::size_t pairs_sampled = 0;
};

// max over sampled hypothesis pairs of
// |E_OOD[(h-h')^2] - E_ID[(h-h')^2]|; a lower bound on the supremum.
DisagreementEstimate estimate_sd_disagreement(const std::vector<Predictor>& pool,
                                              const DenseMatrix& id_features,
                                              const DenseMatrix& ood_features);

struct RatioCheck {
  double ratio = 0.0;  // E_OOD[(h-h')^2] / E_ID[(h-h')^2]
  double bound = 0.0;  // d / sigma_min of the ID representation covariance
};

RatioCheck discrepancy_ratio_check(const Predictor& h, const Predictor& h_prime,
                                   const DenseMatrix& id_features,
                                   const DenseMatrix& ood_features,
                                   const RepresentationFn& representation);

}  // namespace calbound::bounds
