#include "calbound/bounds.hpp"

#include <cmath>
#include <limits>

#include "calbound/error.hpp"
#include "calbound/linalg.hpp"

namespace calbound::bounds {

SigmaMinResult representation_sigma_min(const DenseMatrix& representation) {
  if (representation.rows() < 2) throw EmptyInput("sigma_min needs >= 2 samples");
  try {
    const DenseMatrix cov = linalg::normalized_covariance(representation);
    return {linalg::smallest_singular_value(cov), false};
  } catch (const ZeroVarianceColumn&) {
    return {0.0, true};
  }
}

double raw_covariance_sigma_min(const DenseMatrix& representation) {
  const DenseMatrix cov = linalg::centered_covariance(representation);
  return linalg::smallest_singular_value(cov);
}

double calibration_error_proxy(const std::vector<double>& probs, const std::vector<int>& labels,
                               const calibration::Grouping& grouping) {
  const std::vector<double> c = calibration::group_calibrated_values(probs, labels, grouping);
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) sum += (probs[i] - c[i]) * (probs[i] - c[i]);
  return sum / static_cast<double>(probs.size());
}

ModelEval make_mlp_eval(const model::MlpParams& params) {
  ModelEval e;
  e.predict = [params](const DenseMatrix& x) { return model::mlp_forward(params, x); };
  e.representation = [params](const DenseMatrix& x) { return model::mlp_penultimate(params, x); };
  return e;
}

ModelEval make_two_tower_eval(const model::TwoTowerParams& params,
                              const synthdata::ShiftSpec& spec) {
  ModelEval e;
  // The two-tower pair has no scalar label head; prediction probability is the
  // logistic of the diagonal similarity against the paired text view. Only the
  // representation matters for bound evaluation of this track.
  e.predict = [params, spec](const DenseMatrix& x) {
    const synthdata::PairedSplit views = synthdata::make_paired_views(x, spec);
    const DenseMatrix sim = model::two_tower_similarity(params, views.view_v, views.view_l);
    std::vector<double> probs(sim.rows());
    for (std::size_t i = 0; i < sim.rows(); ++i) probs[i] = 1.0 / (1.0 + std::exp(-sim(i, i)));
    return probs;
  };
  e.representation = [params, spec](const DenseMatrix& x) {
    const synthdata::PairedSplit views = synthdata::make_paired_views(x, spec);
    return matmul(views.view_v, params.w_v);
  };
  return e;
}

BoundReport evaluate_bound_sides(const ModelEval& model_eval,
                                 const synthdata::ShiftedDataset& dataset, std::size_t n_bins) {
  BoundReport report;
  const calibration::Grouping grouping = calibration::Grouping::binned(n_bins);

  const DenseMatrix rep = model_eval.representation(dataset.id_test.features);
  report.representation_dim = rep.cols();
  const SigmaMinResult sm = representation_sigma_min(rep);
  report.sigma_min = sm.value;
  report.sigma_min_raw = raw_covariance_sigma_min(rep);
  report.sigma_floor_flagged = sm.zero_variance || sm.value <= kSigmaFloor;
  report.inv_sigma_term = report.sigma_floor_flagged
                              ? std::numeric_limits<double>::infinity()
                              : static_cast<double>(rep.cols()) / report.sigma_min;

  const std::vector<double> id_probs = model_eval.predict(dataset.id_test.features);
  const std::vector<double> ood_probs = model_eval.predict(dataset.ood_test.features);

  report.id_cal_proxy = calibration_error_proxy(id_probs, dataset.id_test.labels, grouping);
  {
    std::vector<double> conf;
    std::vector<int> correct;
    calibration::confidence_correctness(id_probs, dataset.id_test.labels, conf, correct);
    const calibration::CalibrationReport cal = calibration::ece_report(conf, correct, n_bins);
    report.id_ece = cal.ece;
    report.id_accuracy = cal.accuracy;
  }

  const calibration::BrierDecomposition ood_brier =
      calibration::brier_decomposition(ood_probs, dataset.ood_test.labels, grouping);
  report.ood_mse = ood_brier.classification_error;
  report.ood_sharpness = ood_brier.sharpness;
  report.ood_base_rate = ood_brier.base_rate;
  {
    std::vector<double> conf;
    std::vector<int> correct;
    calibration::confidence_correctness(ood_probs, dataset.ood_test.labels, conf, correct);
    const calibration::CalibrationReport cal = calibration::ece_report(conf, correct, n_bins);
    report.ood_ece = cal.ece;
    report.ood_accuracy = cal.accuracy;
  }

  report.lhs_cal = calibration_error_proxy(ood_probs, dataset.ood_test.labels, grouping);
  report.lhs_cls = report.ood_mse + report.ood_sharpness - 1.0;
  report.rhs_proxy = report.inv_sigma_term + report.id_ece;  // raw-sum fallback
  return report;
}

namespace {

double mean_squared_disagreement(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

}  // namespace

DisagreementEstimate estimate_sd_disagreement(const std::vector<Predictor>& pool,
                                              const DenseMatrix& id_features,
                                              const DenseMatrix& ood_features) {
  if (pool.size() < 2) throw InsufficientPool("need >= 2 hypotheses");

  std::vector<std::vector<double>> id_preds(pool.size());
  std::vector<std::vector<double>> ood_preds(pool.size());
  for (std::size_t k = 0; k < pool.size(); ++k) {
    id_preds[k] = pool[k](id_features);
    ood_preds[k] = pool[k](ood_features);
  }

  DisagreementEstimate est;
  for (std::size_t a = 0; a < pool.size(); ++a) {
    for (std::size_t b = a + 1; b < pool.size(); ++b) {
      const double gap = std::fabs(mean_squared_disagreement(ood_preds[a], ood_preds[b]) -
                                   mean_squared_disagreement(id_preds[a], id_preds[b]));
      est.value = std::max(est.value, gap);
      est.pairs_sampled += 1;
    }
  }
  return est;
}

RatioCheck discrepancy_ratio_check(const Predictor& h, const Predictor& h_prime,
                                   const DenseMatrix& id_features,
                                   const DenseMatrix& ood_features,
                                   const RepresentationFn& representation) {
  const double denom = mean_squared_disagreement(h(id_features), h_prime(id_features));
  if (denom <= 1e-12) throw DegenerateDenominator("ID disagreement below 1e-12");
  const double numer = mean_squared_disagreement(h(ood_features), h_prime(ood_features));

  const DenseMatrix rep = representation(id_features);
  const SigmaMinResult sm = representation_sigma_min(rep);
  RatioCheck out;
  out.ratio = numer / denom;
  out.bound = sm.value <= kSigmaFloor ? std::numeric_limits<double>::infinity()
                                      : static_cast<double>(rep.cols()) / sm.value;
  return out;
}

}  // namespace calbound::bounds
