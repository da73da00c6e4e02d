#include "calbound/losses.hpp"

#include <algorithm>
#include <cmath>

#include "calbound/error.hpp"
#include "calbound/linalg.hpp"

namespace calbound::losses {

namespace {

double safe_log(double x) { return std::log(std::max(x, kLogFloor)); }

// Row softmax with max subtraction.
void softmax_row(const double* src, double* dst, std::size_t n) {
  double m = src[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, src[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    dst[j] = std::exp(src[j] - m);
    sum += dst[j];
  }
  for (std::size_t j = 0; j < n; ++j) dst[j] /= sum;
}

DenseMatrix row_softmax(const DenseMatrix& s) {
  DenseMatrix p(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) softmax_row(s.row_ptr(i), p.row_ptr(i), s.cols());
  return p;
}

DenseMatrix col_softmax(const DenseMatrix& s) {
  return row_softmax(s.transposed()).transposed();
}

}  // namespace

ScalarVecLoss bce_loss(const std::vector<double>& probs, const std::vector<double>& targets) {
  if (probs.size() != targets.size()) throw ShapeMismatch("bce probs/targets length");
  if (probs.empty()) throw EmptyInput("bce over empty batch");
  const double n = static_cast<double>(probs.size());
  ScalarVecLoss out;
  out.dlogits.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double y = targets[i];
    out.value += -(y * safe_log(p) + (1.0 - y) * safe_log(1.0 - p));
    out.dlogits[i] = (p - y) / n;
  }
  out.value /= n;
  return out;
}

ScalarVecLoss bce_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  std::vector<double> targets(labels.begin(), labels.end());
  return bce_loss(probs, targets);
}

ScalarVecLoss mse_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw ShapeMismatch("mse probs/labels length");
  if (probs.empty()) throw EmptyInput("mse over empty batch");
  const double n = static_cast<double>(probs.size());
  ScalarVecLoss out;
  out.dlogits.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double y = static_cast<double>(labels[i]);
    out.value += (p - y) * (p - y);
    out.dlogits[i] = 2.0 * (p - y) * p * (1.0 - p) / n;
  }
  out.value /= n;
  return out;
}

MatrixLoss mcl_loss(const DenseMatrix& similarity) {
  const std::size_t n = similarity.rows();
  if (n == 0) throw EmptyInput("mcl over empty similarity");
  if (similarity.cols() != n) throw ShapeMismatch("mcl needs a square similarity matrix");

  const DenseMatrix p_row = row_softmax(similarity);
  const DenseMatrix p_col = col_softmax(similarity);

  MatrixLoss out;
  out.grad = DenseMatrix(n, n);
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out.value += -safe_log(p_row(i, i)) - safe_log(p_col(i, i));
    for (std::size_t j = 0; j < n; ++j) {
      double g = p_row(i, j) + p_col(i, j);
      if (i == j) g -= 2.0;
      out.grad(i, j) = g * inv;
    }
  }
  out.value *= inv;
  return out;
}

MatrixLoss oc_loss(const DenseMatrix& w) {
  linalg::OrthogonalityPenalty pen = linalg::orthogonality_penalty(w);
  return {pen.value, std::move(pen.gradient)};
}

DiversityLoss diversity_regularizer(const DenseMatrix& w_v, const DenseMatrix& w_l, double rho) {
  if (w_v.cols() != w_l.cols()) throw ShapeMismatch("diversity projections must share rank");
  DenseMatrix cross = matmul_a_bt(w_v, w_l);  // d_v x d_l
  DiversityLoss out;
  for (double c : cross.data()) out.value += c * c;
  out.value *= 0.5 * rho;
  out.grad_v = matmul(cross, w_l);
  out.grad_v.scale(rho);
  out.grad_l = matmul_at_b(cross, w_v);
  out.grad_l.scale(rho);
  return out;
}

MatrixLoss ema_sd_loss(const DenseMatrix& student_similarity,
                       const DenseMatrix& teacher_similarity) {
  if (!student_similarity.same_shape(teacher_similarity))
    throw ShapeMismatch("student/teacher similarity shapes");
  const std::size_t n = student_similarity.rows();
  if (n == 0) throw EmptyInput("ema_sd over empty similarity");
  if (student_similarity.cols() != n) throw ShapeMismatch("ema_sd needs square similarity");

  const DenseMatrix qs_row = row_softmax(student_similarity);
  const DenseMatrix qs_col = col_softmax(student_similarity);
  const DenseMatrix qt_row = row_softmax(teacher_similarity);
  const DenseMatrix qt_col = col_softmax(teacher_similarity);

  MatrixLoss out;
  out.grad = DenseMatrix(n, n);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double tr = qt_row(i, j);
      const double tc = qt_col(i, j);
      out.value += tr * (safe_log(tr) - safe_log(qs_row(i, j)));
      out.value += tc * (safe_log(tc) - safe_log(qs_col(i, j)));
      out.grad(i, j) = ((qs_row(i, j) - tr) + (qs_col(i, j) - tc)) * inv;
    }
  }
  out.value *= inv;
  return out;
}

BanSdLoss ban_sd_loss(const std::vector<double>& student_probs,
                      const std::vector<double>& teacher_probs) {
  if (student_probs.size() != teacher_probs.size())
    throw ShapeMismatch("ban_sd student/teacher lengths");
  if (student_probs.empty()) throw EmptyInput("ban_sd over empty batch");
  const double n = static_cast<double>(student_probs.size());
  BanSdLoss out;
  out.dprobs.resize(student_probs.size());
  out.dlogits.resize(student_probs.size());
  for (std::size_t i = 0; i < student_probs.size(); ++i) {
    const double s = student_probs[i];
    const double t = teacher_probs[i];
    out.value += t * (safe_log(t) - safe_log(s)) +
                 (1.0 - t) * (safe_log(1.0 - t) - safe_log(1.0 - s));
    out.dprobs[i] = (-t / std::max(s, kLogFloor) +
                     (1.0 - t) / std::max(1.0 - s, kLogFloor)) / n;
    out.dlogits[i] = (s - t) / n;
  }
  out.value /= n;
  return out;
}

std::vector<double> label_smooth(const std::vector<int>& labels, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw InvalidSpec("label smoothing epsilon in [0,1)");
  std::vector<double> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    targets[i] = static_cast<double>(labels[i]) * (1.0 - epsilon) + epsilon / 2.0;
  return targets;
}

MlpObjective mlp_objective(const model::MlpParams& params, const DenseMatrix& x,
                           const std::vector<int>& labels, const ObjectiveWeights& weights,
                           BaseLoss base, const std::vector<double>* teacher_probs,
                           double label_smoothing) {
  model::MlpCache cache;
  const std::vector<double> probs = model::mlp_forward(params, x, &cache);

  ScalarVecLoss base_loss;
  if (base == BaseLoss::bce) {
    base_loss = label_smoothing > 0.0 ? bce_loss(probs, label_smooth(labels, label_smoothing))
                                      : bce_loss(probs, labels);
  } else {
    base_loss = mse_loss(probs, labels);
  }

  // Orthogonality constraint on the projection feeding the measured
  // penultimate representation.
  MatrixLoss oc = oc_loss(params.w2);

  BanSdLoss sd;
  double sd_value = 0.0;
  std::vector<double> dlogits = base_loss.dlogits;
  if (teacher_probs != nullptr && weights.lambda_sd != 0.0) {
    sd = ban_sd_loss(probs, *teacher_probs);
    sd_value = sd.value;
    for (std::size_t i = 0; i < dlogits.size(); ++i)
      dlogits[i] += weights.lambda_sd * sd.dlogits[i];
  }

  MlpObjective out;
  out.components["base"] = base_loss.value;
  out.components["oc"] = oc.value;
  out.components["sd"] = sd_value;
  out.value = base_loss.value + weights.lambda_oc * oc.value + weights.lambda_sd * sd_value;
  out.grads = model::mlp_backward(params, x, cache, dlogits);
  if (weights.lambda_oc != 0.0) out.grads.w2.add_scaled(oc.grad, weights.lambda_oc);
  return out;
}

TwoTowerObjective two_tower_objective(const model::TwoTowerParams& student,
                                      const DenseMatrix& x_v, const DenseMatrix& x_l,
                                      const ObjectiveWeights& weights,
                                      const model::TwoTowerParams* teacher) {
  model::TwoTowerCache cache;
  const DenseMatrix sim = model::two_tower_similarity(student, x_v, x_l, &cache);

  MatrixLoss mcl = mcl_loss(sim);
  MatrixLoss oc = oc_loss(student.w_v);

  double sd_value = 0.0;
  DenseMatrix dsim = mcl.grad;
  if (teacher != nullptr && weights.lambda_sd != 0.0) {
    const DenseMatrix teacher_sim = model::two_tower_similarity(*teacher, x_v, x_l);
    MatrixLoss sd = ema_sd_loss(sim, teacher_sim);
    sd_value = sd.value;
    dsim.add_scaled(sd.grad, weights.lambda_sd);
  }

  TwoTowerObjective out;
  out.components["mcl"] = mcl.value;
  out.components["oc"] = oc.value;
  out.components["sd"] = sd_value;
  out.value = mcl.value + weights.lambda_oc * oc.value + weights.lambda_sd * sd_value;
  out.grads = model::two_tower_backward(student, x_v, x_l, cache, dsim);
  if (weights.lambda_oc != 0.0) out.grads.w_v.add_scaled(oc.grad, weights.lambda_oc);
  return out;
}

}  // namespace calbound::losses
