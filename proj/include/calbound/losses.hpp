#pragma once

#include <map>
#include <string>
#include <vector>

#include "calbound/matrix.hpp"
#include "calbound/model.hpp"

namespace calbound::losses {

// Floor applied symmetrically inside every log.
inline constexpr double kLogFloor = 1e-12;

enum class BaseLoss { bce, mse };

struct ScalarVecLoss {
  double value = 0.0;
  std::vector<double> dlogits;  // gradient w.r.t. pre-sigmoid logits
};

// Mean binary cross-entropy; targets may be soft (label-smoothed).
// d value / d logit_i = (p_i - y_i) / N.
ScalarVecLoss bce_loss(const std::vector<double>& probs, const std::vector<double>& targets);
ScalarVecLoss bce_loss(const std::vector<double>& probs, const std::vector<int>& labels);

// Mean squared error on probabilities, chained through the sigmoid.
ScalarVecLoss mse_loss(const std::vector<double>& probs, const std::vector<int>& labels);

struct MatrixLoss {
  double value = 0.0;
  DenseMatrix grad;
};

// Symmetric cross-entropy over rows and columns of an N x N similarity matrix:
// (1/2N) * sum_i [-log softmax_row_i(i) - log softmax_col_i(i)].
MatrixLoss mcl_loss(const DenseMatrix& similarity);

// ‖WᵀW − I‖_F² with gradient; thin wrapper over linalg::orthogonality_penalty.
MatrixLoss oc_loss(const DenseMatrix& w);

struct DiversityLoss {
  double value = 0.0;
  DenseMatrix grad_v, grad_l;
};

// (rho/2) ‖W_v W_lᵀ‖_F².
DiversityLoss diversity_regularizer(const DenseMatrix& w_v, const DenseMatrix& w_l, double rho);

// (1/N) * sum_i [KL(teacher_row_i ‖ student_row_i) + KL(teacher_col_i ‖ student_col_i)]
// over softmaxed rows/columns; gradient flows to the student similarity only.
MatrixLoss ema_sd_loss(const DenseMatrix& student_similarity, const DenseMatrix& teacher_similarity);

struct BanSdLoss {
  double value = 0.0;
  std::vector<double> dprobs;   // w.r.t. student probabilities
  std::vector<double> dlogits;  // w.r.t. student logits: (s - t) / N
};

// Mean Bernoulli KL(teacher ‖ student); teacher is a constant.
BanSdLoss ban_sd_loss(const std::vector<double>& student_probs,
                      const std::vector<double>& teacher_probs);

// y -> y*(1-eps) + eps/2.
std::vector<double> label_smooth(const std::vector<int>& labels, double epsilon);

struct ObjectiveWeights {
  double lambda_oc = 0.0;
  double lambda_sd = 0.0;
};

// Combined training objective for the MLP track: base loss (bce or mse, with
// optional label smoothing) + lambda_oc * orthogonality penalty on the
// projection into the penultimate representation (w2) + lambda_sd * Bernoulli
// KL from a frozen/EMA teacher. `components` holds the raw sub-loss values;
// value is their lambda-weighted sum.
struct MlpObjective {
  double value = 0.0;
  std::map<std::string, double> components;  // "base", "oc", "sd"
  model::MlpGrads grads;
};

MlpObjective mlp_objective(const model::MlpParams& params, const DenseMatrix& x,
                           const std::vector<int>& labels, const ObjectiveWeights& weights,
                           BaseLoss base = BaseLoss::bce,
                           const std::vector<double>* teacher_probs = nullptr,
                           double label_smoothing = 0.0);

// Combined objective for the two-tower track: contrastive loss + lambda_oc *
// orthogonality penalty on w_v + lambda_sd * EMA self-distillation.
struct TwoTowerObjective {
  double value = 0.0;
  std::map<std::string, double> components;  // "mcl", "oc", "sd"
  model::TwoTowerGrads grads;
};

TwoTowerObjective two_tower_objective(const model::TwoTowerParams& student,
                                      const DenseMatrix& x_v, const DenseMatrix& x_l,
                                      const ObjectiveWeights& weights,
                                      const model::TwoTowerParams* teacher = nullptr);

}  // namespace calbound::losses
