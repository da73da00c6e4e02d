#include "calbound/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "calbound/bounds.hpp"
#include "calbound/calibration.hpp"
#include "calbound/error.hpp"
#include "calbound/linalg.hpp"
#include "calbound/rng.hpp"

namespace calbound::trainer {

namespace {

constexpr std::uint64_t kShuffleStream = 0x53485546ULL;  // "SHUF"
constexpr std::uint64_t kBanStreamBase = 0x42414E00ULL;  // "BAN" + generation

DenseMatrix gather_rows(const DenseMatrix& src, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end) {
  DenseMatrix out(end - begin, src.cols());
  for (std::size_t i = begin; i < end; ++i) {
    const double* s = src.row_ptr(idx[i]);
    double* d = out.row_ptr(i - begin);
    for (std::size_t j = 0; j < src.cols(); ++j) d[j] = s[j];
  }
  return out;
}

template <typename Vec>
Vec gather(const Vec& src, const std::vector<std::size_t>& idx, std::size_t begin,
           std::size_t end) {
  Vec out(end - begin);
  for (std::size_t i = begin; i < end; ++i) out[i - begin] = src[idx[i]];
  return out;
}

struct SgdState {
  model::MlpGrads velocity;
  bool initialized = false;
};

void sgd_step(model::MlpParams& p, const model::MlpGrads& g, const TrainConfig& cfg,
              SgdState& state) {
  const model::MlpGrads* step = &g;
  if (cfg.optimizer == Optimizer::sgd_momentum) {
    if (!state.initialized) {
      state.velocity = model::MlpGrads::zeros(p.shape());
      state.initialized = true;
    }
    state.velocity.w1.scale(cfg.momentum);
    state.velocity.w2.scale(cfg.momentum);
    state.velocity.w3.scale(cfg.momentum);
    for (double& v : state.velocity.b1) v *= cfg.momentum;
    for (double& v : state.velocity.b2) v *= cfg.momentum;
    state.velocity.b3 *= cfg.momentum;
    state.velocity.add_scaled(g, 1.0);
    step = &state.velocity;
  }
  const double lr = cfg.learning_rate;
  const double wd = cfg.weight_decay;
  if (wd != 0.0) {
    p.w1.scale(1.0 - lr * wd);
    p.w2.scale(1.0 - lr * wd);
    p.w3.scale(1.0 - lr * wd);
  }
  p.w1.add_scaled(step->w1, -lr);
  p.w2.add_scaled(step->w2, -lr);
  p.w3.add_scaled(step->w3, -lr);
  for (std::size_t j = 0; j < p.b1.size(); ++j) p.b1[j] -= lr * step->b1[j];
  for (std::size_t j = 0; j < p.b2.size(); ++j) p.b2[j] -= lr * step->b2[j];
  p.b3 -= lr * step->b3;
}

double classifier_ece(const model::MlpParams& params, const DenseMatrix& x,
                      const std::vector<int>& labels, std::size_t n_bins, double* accuracy) {
  const std::vector<double> probs = model::mlp_forward(params, x);
  std::vector<double> conf;
  std::vector<int> correct;
  calibration::confidence_correctness(probs, labels, conf, correct);
  const calibration::CalibrationReport rep = calibration::ece_report(conf, correct, n_bins);
  if (accuracy) *accuracy = rep.accuracy;
  return rep.ece;
}

}  // namespace

void EmaConfig::validate() const {
  if (!(alpha_start >= 0.0 && alpha_start <= 1.0) ||
      !(alpha_target >= 0.0 && alpha_target <= 1.0))
    throw InvalidSpec("ema momentum must lie in [0,1]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
    throw InvalidSpec("ema warmup_fraction must lie in [0,1]");
  if (update_every < 1) throw InvalidSpec("ema update_every must be >= 1");
}

void TrainConfig::validate() const {
  ema.validate();
  if (!(learning_rate >= 0.0)) throw InvalidSpec("learning_rate must be >= 0");
  if (epochs == 0) throw InvalidSpec("epochs must be >= 1");
  if (batch_size == 0) throw InvalidSpec("batch_size must be >= 1");
  if (lambda_oc < 0.0 || lambda_sd < 0.0 || lambda_svd < 0.0)
    throw InvalidSpec("regularization coefficients must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw InvalidSpec("label_smoothing must lie in [0,1)");
}

model::MlpParams ema_update(const model::MlpParams& teacher, const model::MlpParams& student,
                            double alpha) {
  if (!teacher.w1.same_shape(student.w1) || !teacher.w2.same_shape(student.w2) ||
      !teacher.w3.same_shape(student.w3))
    throw ShapeMismatch("ema_update parameter shapes");
  model::MlpParams out = teacher;
  auto blend_matrix = [alpha](DenseMatrix& t, const DenseMatrix& s) {
    for (std::size_t k = 0; k < t.size(); ++k)
      t.data()[k] = alpha * t.data()[k] + (1.0 - alpha) * s.data()[k];
  };
  blend_matrix(out.w1, student.w1);
  blend_matrix(out.w2, student.w2);
  blend_matrix(out.w3, student.w3);
  for (std::size_t j = 0; j < out.b1.size(); ++j)
    out.b1[j] = alpha * out.b1[j] + (1.0 - alpha) * student.b1[j];
  for (std::size_t j = 0; j < out.b2.size(); ++j)
    out.b2[j] = alpha * out.b2[j] + (1.0 - alpha) * student.b2[j];
  out.b3 = alpha * out.b3 + (1.0 - alpha) * student.b3;
  return out;
}

model::TwoTowerParams ema_update(const model::TwoTowerParams& teacher,
                                 const model::TwoTowerParams& student, double alpha) {
  if (!teacher.w_v.same_shape(student.w_v) || !teacher.w_l.same_shape(student.w_l))
    throw ShapeMismatch("ema_update parameter shapes");
  model::TwoTowerParams out = teacher;
  for (std::size_t k = 0; k < out.w_v.size(); ++k)
    out.w_v.data()[k] = alpha * out.w_v.data()[k] + (1.0 - alpha) * student.w_v.data()[k];
  for (std::size_t k = 0; k < out.w_l.size(); ++k)
    out.w_l.data()[k] = alpha * out.w_l.data()[k] + (1.0 - alpha) * student.w_l.data()[k];
  out.log_scale = alpha * out.log_scale + (1.0 - alpha) * student.log_scale;
  return out;
}

double ema_schedule(std::size_t step, std::size_t total_steps, const EmaConfig& config) {
  config.validate();
  if (step > total_steps) throw InvalidSpec("step beyond total_steps");
  const double warmup_steps = config.warmup_fraction * static_cast<double>(total_steps);
  if (warmup_steps <= 0.0 || static_cast<double>(step) >= warmup_steps)
    return config.alpha_target;
  const double t = static_cast<double>(step) / warmup_steps;
  return config.alpha_start + (config.alpha_target - config.alpha_start) * t;
}

model::MlpParams wise_interpolate(const model::MlpParams& a, const model::MlpParams& b,
                                  double coeff) {
  if (!(coeff >= 0.0 && coeff <= 1.0)) throw InvalidSpec("interpolation coeff in [0,1]");
  // (1-c)*a + c*b equals ema_update(a, b, 1-c).
  return ema_update(a, b, 1.0 - coeff);
}

MlpTrainResult train_mlp(const TrainConfig& config, const synthdata::ShiftedDataset& dataset,
                         const model::MlpShape& shape, const model::MlpParams* ban_teacher) {
  config.validate();
  if (dataset.id_train.features.cols() != shape.inputs)
    throw ShapeMismatch("dataset feature dim vs model inputs");
  const bool use_sd = config.lambda_sd > 0.0;
  if (use_sd && config.sd_mode == SdMode::ban && ban_teacher == nullptr)
    throw InvalidSpec("ban self-distillation needs a teacher");

  model::MlpParams params = model::MlpParams::init(shape, config.seed);
  model::MlpParams ema_teacher = params;  // teacher starts equal to the student

  // Frozen BAN teacher probabilities are precomputed once over the train set.
  std::vector<double> ban_probs;
  if (use_sd && config.sd_mode == SdMode::ban)
    ban_probs = model::mlp_forward(*ban_teacher, dataset.id_train.features);

  const std::size_t n = dataset.id_train.features.rows();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  losses::ObjectiveWeights weights{config.lambda_oc, config.lambda_sd};
  SgdState sgd_state;
  TrainHistory history;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::map<std::string, double> comp_sum;

    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, n);
      const DenseMatrix bx = gather_rows(dataset.id_train.features, order, begin, end);
      const std::vector<int> by = gather(dataset.id_train.labels, order, begin, end);

      std::vector<double> teacher_probs;
      const std::vector<double>* teacher_ptr = nullptr;
      if (use_sd) {
        if (config.sd_mode == SdMode::ban) {
          teacher_probs.resize(end - begin);
          for (std::size_t i = begin; i < end; ++i)
            teacher_probs[i - begin] = ban_probs[order[i]];
        } else {
          teacher_probs = model::mlp_forward(ema_teacher, bx);
        }
        teacher_ptr = &teacher_probs;
      }

      losses::MlpObjective obj = losses::mlp_objective(
          params, bx, by, weights, config.base_loss, teacher_ptr, config.label_smoothing);
      if (!std::isfinite(obj.value)) throw DivergenceDetected(step);

      sgd_step(params, obj.grads, config, sgd_state);
      ++step;

      if (use_sd && config.sd_mode == SdMode::ema && step % config.ema.update_every == 0) {
        const double alpha = ema_schedule(step, total_steps, config.ema);
        ema_teacher = ema_update(ema_teacher, params, alpha);
      }

      loss_sum += obj.value;
      for (const auto& [k, v] : obj.components) comp_sum[k] += v;
    }

    EpochStats stats;
    const double nb = static_cast<double>(steps_per_epoch);
    stats.loss = loss_sum / nb;
    for (const auto& [k, v] : comp_sum) stats.components[k] = v / nb;
    stats.id_train_ece = classifier_ece(params, dataset.id_train.features,
                                        dataset.id_train.labels, 15, nullptr);
    stats.id_test_ece = classifier_ece(params, dataset.id_test.features, dataset.id_test.labels,
                                       15, &stats.id_test_accuracy);
    stats.sigma_min =
        bounds::representation_sigma_min(model::mlp_penultimate(params, dataset.id_test.features))
            .value;
    history.epochs.push_back(std::move(stats));
  }

  MlpTrainResult result;
  result.params = std::move(params);
  result.teacher = (use_sd && config.sd_mode == SdMode::ban) ? *ban_teacher
                                                             : std::move(ema_teacher);
  result.history = std::move(history);
  return result;
}

std::uint64_t ban_generation_seed(std::uint64_t base_seed, std::size_t generation) {
  return derive_seed(base_seed, kBanStreamBase + generation);
}

MlpTrainResult ban_generation(const TrainConfig& config,
                              const synthdata::ShiftedDataset& dataset,
                              const model::MlpShape& shape,
                              const model::MlpParams* previous_generation,
                              std::size_t generation) {
  TrainConfig cfg = config;
  cfg.seed = ban_generation_seed(config.seed, generation);
  cfg.sd_mode = SdMode::ban;
  if (previous_generation == nullptr) cfg.lambda_sd = 0.0;
  return train_mlp(cfg, dataset, shape, previous_generation);
}

PairedData make_paired_data(const synthdata::ShiftedDataset& dataset,
                            const synthdata::ShiftSpec& spec) {
  PairedData out;
  out.train = synthdata::make_paired_views(dataset.id_train.features, spec);
  out.id_test = synthdata::make_paired_views(dataset.id_test.features, spec);
  out.ood_test = synthdata::make_paired_views(dataset.ood_test.features, spec);
  out.train_labels = dataset.id_train.labels;
  out.id_test_labels = dataset.id_test.labels;
  out.ood_test_labels = dataset.ood_test.labels;
  return out;
}

// Gradient of the smallest singular value of the standardized batch covariance
// w.r.t. the raw projection Z:
//   dZ(i,j) = 2/(N*s_j) * u_j * ((Z̃u)_i - sigma * Z̃(i,j) * u_j)
// with u the smallest singular pair's vector. A small floor inside the
// standard deviation keeps the penalty defined if a direction collapses.
SigmaPenalty sigma_min_penalty(const DenseMatrix& proj) {
  const std::size_t n = proj.rows();
  const std::size_t r = proj.cols();
  SigmaPenalty out;

  std::vector<double> mean, var;
  linalg::column_moments(proj, mean, var);
  std::vector<double> sd(r);
  for (std::size_t j = 0; j < r; ++j) sd[j] = std::sqrt(var[j] + 1e-12);

  DenseMatrix standardized(n, r);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = proj.row_ptr(i);
    double* dst = standardized.row_ptr(i);
    for (std::size_t j = 0; j < r; ++j) dst[j] = (src[j] - mean[j]) / sd[j];
  }
  DenseMatrix cov = matmul_at_b(standardized, standardized);
  cov.scale(1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + 1; j < r; ++j) cov(j, i) = cov(i, j);

  linalg::SvdResult dec;
  try {
    dec = linalg::svd(cov);
  } catch (const NoConvergence&) {
    out.converged = false;
    return out;
  }
  out.sigma = dec.singular_values.back();
  std::vector<double> u(r);
  for (std::size_t j = 0; j < r; ++j) u[j] = dec.right_vectors(j, r - 1);

  const std::vector<double> zu = matvec(standardized, u);
  out.dproj = DenseMatrix(n, r);
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* zt = standardized.row_ptr(i);
    double* d = out.dproj.row_ptr(i);
    for (std::size_t j = 0; j < r; ++j)
      d[j] = scale / sd[j] * u[j] * (zu[i] - out.sigma * zt[j] * u[j]);
  }
  return out;
}

TwoTowerTrainResult train_two_tower(const TrainConfig& config, const PairedData& data,
                                    std::size_t projection_rank) {
  config.validate();
  const std::size_t n = data.train.view_v.rows();
  const std::size_t d_v = data.train.view_v.cols();
  const std::size_t d_l = data.train.view_l.cols();

  model::TwoTowerParams params = model::TwoTowerParams::init(d_v, d_l, projection_rank,
                                                             config.seed);
  model::TwoTowerParams teacher = params;
  const bool use_sd = config.lambda_sd > 0.0;

  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  losses::ObjectiveWeights weights{config.lambda_oc, config.lambda_sd};
  TwoTowerTrainResult result;
  DenseMatrix prev_penalty_grad;  // reused on a rare non-converged covariance SVD
  model::TwoTowerGrads velocity;
  bool velocity_init = false;
  std::size_t step = 0;
  double total_ms = 0.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::map<std::string, double> comp_sum;

    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end = std::min(begin + config.batch_size, n);
      const DenseMatrix bv = gather_rows(data.train.view_v, order, begin, end);
      const DenseMatrix bl = gather_rows(data.train.view_l, order, begin, end);

      losses::TwoTowerObjective obj = losses::two_tower_objective(
          params, bv, bl, weights, use_sd ? &teacher : nullptr);

      if (config.lambda_svd > 0.0) {
        const DenseMatrix proj = matmul(bv, params.w_v);
        SigmaPenalty pen = sigma_min_penalty(proj);
        if (pen.converged) {
          obj.value += config.lambda_svd * (-pen.sigma);
          obj.components["svd"] = -pen.sigma;
          DenseMatrix dwv = matmul_at_b(bv, pen.dproj);
          dwv.scale(-config.lambda_svd);
          prev_penalty_grad = dwv;
          obj.grads.w_v.add_scaled(dwv, 1.0);
        } else {
          result.svd_fallback_steps += 1;
          if (!prev_penalty_grad.empty()) obj.grads.w_v.add_scaled(prev_penalty_grad, 1.0);
        }
      }

      if (!std::isfinite(obj.value)) throw DivergenceDetected(step);

      const model::TwoTowerGrads* g = &obj.grads;
      if (config.optimizer == Optimizer::sgd_momentum) {
        if (!velocity_init) {
          velocity.w_v = DenseMatrix(d_v, projection_rank);
          velocity.w_l = DenseMatrix(d_l, projection_rank);
          velocity.log_scale = 0.0;
          velocity_init = true;
        }
        velocity.w_v.scale(config.momentum);
        velocity.w_l.scale(config.momentum);
        velocity.log_scale *= config.momentum;
        velocity.add_scaled(obj.grads, 1.0);
        g = &velocity;
      }
      const double lr = config.learning_rate;
      if (config.weight_decay != 0.0) {
        params.w_v.scale(1.0 - lr * config.weight_decay);
        params.w_l.scale(1.0 - lr * config.weight_decay);
      }
      params.w_v.add_scaled(g->w_v, -lr);
      params.w_l.add_scaled(g->w_l, -lr);
      if (params.train_log_scale) params.log_scale -= lr * g->log_scale;
      ++step;

      if (use_sd && step % config.ema.update_every == 0) {
        const double alpha = ema_schedule(step, total_steps, config.ema);
        teacher = ema_update(teacher, params, alpha);
      }

      loss_sum += obj.value;
      for (const auto& [k, v] : obj.components) comp_sum[k] += v;
      total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    }

    EpochStats stats;
    const double nb = static_cast<double>(steps_per_epoch);
    stats.loss = loss_sum / nb;
    for (const auto& [k, v] : comp_sum) stats.components[k] = v / nb;
    const RetrievalMetrics train_m = two_tower_retrieval_metrics(
        params, data.train.view_v, data.train.view_l, config.batch_size, 15);
    const RetrievalMetrics test_m = two_tower_retrieval_metrics(
        params, data.id_test.view_v, data.id_test.view_l, config.batch_size, 15);
    stats.id_train_ece = train_m.ece;
    stats.id_test_ece = test_m.ece;
    stats.id_test_accuracy = test_m.accuracy;
    stats.sigma_min = bounds::representation_sigma_min(matmul(data.id_test.view_v, params.w_v))
                          .value;
    result.history.epochs.push_back(std::move(stats));
  }

  result.params = std::move(params);
  result.teacher = std::move(teacher);
  result.mean_step_ms = total_ms / static_cast<double>(step);
  return result;
}

RetrievalMetrics two_tower_retrieval_metrics(const model::TwoTowerParams& params,
                                             const DenseMatrix& x_v, const DenseMatrix& x_l,
                                             std::size_t block, std::size_t n_bins) {
  const std::size_t n = x_v.rows();
  std::vector<double> conf;
  std::vector<int> correct;
  conf.reserve(n);
  correct.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += block) {
    const std::size_t end = std::min(begin + block, n);
    if (end - begin < 2) break;
    DenseMatrix bv(end - begin, x_v.cols());
    DenseMatrix bl(end - begin, x_l.cols());
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < x_v.cols(); ++j) bv(i - begin, j) = x_v(i, j);
      for (std::size_t j = 0; j < x_l.cols(); ++j) bl(i - begin, j) = x_l(i, j);
    }
    const DenseMatrix sim = model::two_tower_similarity(params, bv, bl);
    const std::size_t m = sim.rows();
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = sim.row_ptr(i);
      double mx = row[0];
      std::size_t arg = 0;
      for (std::size_t j = 1; j < m; ++j) {
        if (row[j] > mx) {
          mx = row[j];
          arg = j;
        }
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j) denom += std::exp(row[j] - mx);
      conf.push_back(1.0 / denom);
      correct.push_back(arg == i ? 1 : 0);
    }
  }
  const calibration::CalibrationReport rep = calibration::ece_report(conf, correct, n_bins);
  return {rep.accuracy, rep.ece};
}

}  // namespace calbound::trainer
