#include "calbound/model.hpp"

#include <cmath>

#include <json.hpp>

#include "calbound/error.hpp"
#include "calbound/rng.hpp"

namespace calbound::model {

namespace {

// Clamped into the open interval so saturated logits cannot round to 0 or 1.
double logistic(double z) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  if (p < 1e-12) return 1e-12;
  if (p > 1.0 - 1e-12) return 1.0 - 1e-12;
  return p;
}

DenseMatrix uniform_fan_in(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix w(rows, cols);
  const double limit = std::sqrt(3.0 / static_cast<double>(rows));
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

void add_row_bias(DenseMatrix& m, const std::vector<double>& b) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* row = m.row_ptr(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] += b[j];
  }
}

DenseMatrix relu(const DenseMatrix& z) {
  DenseMatrix a = z;
  for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
  return a;
}

// Exact subgradient 0 at the kink.
void apply_relu_mask(DenseMatrix& grad, const DenseMatrix& z) {
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (z.data()[k] <= 0.0) grad.data()[k] = 0.0;
  }
}

std::vector<double> column_sums(const DenseMatrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = m.row_ptr(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
  }
  return out;
}

}  // namespace

MlpParams MlpParams::init(const MlpShape& shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x494E4954ULL));  // "INIT"
  MlpParams p;
  p.w1 = uniform_fan_in(shape.inputs, shape.hidden1, rng);
  p.w2 = uniform_fan_in(shape.hidden1, shape.hidden2, rng);
  p.w3 = uniform_fan_in(shape.hidden2, 1, rng);
  p.b1.assign(shape.hidden1, 0.0);
  p.b2.assign(shape.hidden2, 0.0);
  p.b3 = 0.0;
  return p;
}

MlpParams MlpParams::zeros(const MlpShape& shape) {
  MlpParams p;
  p.w1 = DenseMatrix(shape.inputs, shape.hidden1);
  p.w2 = DenseMatrix(shape.hidden1, shape.hidden2);
  p.w3 = DenseMatrix(shape.hidden2, 1);
  p.b1.assign(shape.hidden1, 0.0);
  p.b2.assign(shape.hidden2, 0.0);
  p.b3 = 0.0;
  return p;
}

std::vector<double> mlp_forward(const MlpParams& params, const DenseMatrix& x, MlpCache* cache) {
  if (x.cols() != params.w1.rows()) throw ShapeMismatch("mlp_forward input columns");
  const std::size_t n = x.rows();

  DenseMatrix z1 = matmul(x, params.w1);
  add_row_bias(z1, params.b1);
  DenseMatrix a1 = relu(z1);

  DenseMatrix z2 = matmul(a1, params.w2);
  add_row_bias(z2, params.b2);
  DenseMatrix a2 = relu(z2);

  std::vector<double> logits(n);
  const std::size_t h2 = a2.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = a2.row_ptr(i);
    double z = params.b3;
    for (std::size_t j = 0; j < h2; ++j) z += row[j] * params.w3(j, 0);
    logits[i] = z;
  }
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) probs[i] = logistic(logits[i]);

  if (cache) {
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
    cache->a2 = std::move(a2);
    cache->logits = logits;
    cache->probs = probs;
  }
  return probs;
}

DenseMatrix mlp_penultimate(const MlpParams& params, const DenseMatrix& x) {
  MlpCache cache;
  mlp_forward(params, x, &cache);
  return std::move(cache.a2);
}

std::vector<double> mlp_logits(const MlpParams& params, const DenseMatrix& x) {
  MlpCache cache;
  mlp_forward(params, x, &cache);
  return std::move(cache.logits);
}

MlpGrads MlpGrads::zeros(const MlpShape& shape) {
  MlpGrads g;
  g.w1 = DenseMatrix(shape.inputs, shape.hidden1);
  g.w2 = DenseMatrix(shape.hidden1, shape.hidden2);
  g.w3 = DenseMatrix(shape.hidden2, 1);
  g.b1.assign(shape.hidden1, 0.0);
  g.b2.assign(shape.hidden2, 0.0);
  g.b3 = 0.0;
  return g;
}

void MlpGrads::add_scaled(const MlpGrads& other, double s) {
  w1.add_scaled(other.w1, s);
  w2.add_scaled(other.w2, s);
  w3.add_scaled(other.w3, s);
  for (std::size_t j = 0; j < b1.size(); ++j) b1[j] += s * other.b1[j];
  for (std::size_t j = 0; j < b2.size(); ++j) b2[j] += s * other.b2[j];
  b3 += s * other.b3;
}

namespace {

// Shared tail of the two backward variants: from dz2 (gradient at the second
// pre-activation) down to the inputs.
void backward_tail(const MlpParams& params, const DenseMatrix& x, const MlpCache& cache,
                   DenseMatrix dz2, MlpGrads& g) {
  g.w2 = matmul_at_b(cache.a1, dz2);
  g.b2 = column_sums(dz2);
  DenseMatrix dz1 = matmul_a_bt(dz2, params.w2);
  apply_relu_mask(dz1, cache.z1);
  g.w1 = matmul_at_b(x, dz1);
  g.b1 = column_sums(dz1);
}

}  // namespace

MlpGrads mlp_backward(const MlpParams& params, const DenseMatrix& x, const MlpCache& cache,
                      const std::vector<double>& dlogits) {
  const std::size_t n = x.rows();
  if (dlogits.size() != n) throw ShapeMismatch("mlp_backward dlogits length");
  if (cache.a2.rows() != n) throw ShapeMismatch("mlp_backward cache/batch mismatch");
  const std::size_t h2 = params.w3.rows();

  MlpGrads g;
  g.w3 = DenseMatrix(h2, 1);
  g.b3 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dlogits[i];
    g.b3 += d;
    const double* a2row = cache.a2.row_ptr(i);
    for (std::size_t j = 0; j < h2; ++j) g.w3(j, 0) += d * a2row[j];
  }

  DenseMatrix dz2(n, h2);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dlogits[i];
    double* row = dz2.row_ptr(i);
    for (std::size_t j = 0; j < h2; ++j) row[j] = d * params.w3(j, 0);
  }
  apply_relu_mask(dz2, cache.z2);
  backward_tail(params, x, cache, std::move(dz2), g);
  return g;
}

MlpGrads mlp_backward_from_representation(const MlpParams& params, const DenseMatrix& x,
                                          const MlpCache& cache, const DenseMatrix& drep) {
  if (!drep.same_shape(cache.a2)) throw ShapeMismatch("drep vs penultimate shape");
  MlpGrads g;
  g.w3 = DenseMatrix(params.w3.rows(), 1);
  g.b3 = 0.0;
  DenseMatrix dz2 = drep;
  apply_relu_mask(dz2, cache.z2);
  backward_tail(params, x, cache, std::move(dz2), g);
  return g;
}

TwoTowerParams TwoTowerParams::init(std::size_t d_v, std::size_t d_l, std::size_t r,
                                    std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x54544E49ULL));
  TwoTowerParams p;
  p.w_v = uniform_fan_in(d_v, r, rng);
  p.w_l = uniform_fan_in(d_l, r, rng);
  p.log_scale = 0.0;
  p.train_log_scale = false;
  return p;
}

namespace {

void normalize_rows(const DenseMatrix& proj, DenseMatrix& unit, std::vector<double>& norms) {
  const std::size_t n = proj.rows();
  const std::size_t r = proj.cols();
  unit = DenseMatrix(n, r);
  norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = proj.row_ptr(i);
    double sum = 0.0;
    for (std::size_t j = 0; j < r; ++j) sum += src[j] * src[j];
    const double norm = std::sqrt(sum);
    if (norm < 1e-12) throw ZeroNormRow(i);
    norms[i] = norm;
    double* dst = unit.row_ptr(i);
    for (std::size_t j = 0; j < r; ++j) dst[j] = src[j] / norm;
  }
}

}  // namespace

DenseMatrix two_tower_similarity(const TwoTowerParams& params, const DenseMatrix& x_v,
                                 const DenseMatrix& x_l, TwoTowerCache* cache) {
  if (x_v.rows() != x_l.rows()) throw ShapeMismatch("two_tower batch sizes");
  TwoTowerCache local;
  TwoTowerCache& c = cache ? *cache : local;
  c.proj_v = matmul(x_v, params.w_v);
  c.proj_l = matmul(x_l, params.w_l);
  normalize_rows(c.proj_v, c.unit_v, c.norm_v);
  normalize_rows(c.proj_l, c.unit_l, c.norm_l);
  DenseMatrix sim = matmul_a_bt(c.unit_v, c.unit_l);
  sim.scale(std::exp(params.log_scale));
  return sim;
}

TwoTowerGrads two_tower_backward(const TwoTowerParams& params, const DenseMatrix& x_v,
                                 const DenseMatrix& x_l, const TwoTowerCache& cache,
                                 const DenseMatrix& dsim) {
  const std::size_t n = cache.unit_v.rows();
  const std::size_t r = cache.unit_v.cols();
  if (dsim.rows() != n || dsim.cols() != n) throw ShapeMismatch("dsim shape");
  const double scale = std::exp(params.log_scale);

  // d/d unit_v = scale * dsim * unit_l ; d/d unit_l = scale * dsimᵀ * unit_v.
  DenseMatrix dunit_v = matmul(dsim, cache.unit_l);
  dunit_v.scale(scale);
  DenseMatrix dunit_l = matmul_at_b(dsim, cache.unit_v);
  dunit_l.scale(scale);

  auto unnormalize = [&](const DenseMatrix& dunit, const DenseMatrix& unit,
                         const std::vector<double>& norms) {
    DenseMatrix dproj(n, r);
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = dunit.row_ptr(i);
      const double* u = unit.row_ptr(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < r; ++j) dot += g[j] * u[j];
      double* out = dproj.row_ptr(i);
      const double inv = 1.0 / norms[i];
      for (std::size_t j = 0; j < r; ++j) out[j] = (g[j] - dot * u[j]) * inv;
    }
    return dproj;
  };

  TwoTowerGrads grads;
  grads.w_v = matmul_at_b(x_v, unnormalize(dunit_v, cache.unit_v, cache.norm_v));
  grads.w_l = matmul_at_b(x_l, unnormalize(dunit_l, cache.unit_l, cache.norm_l));
  grads.log_scale = 0.0;
  if (params.train_log_scale) {
    // dsim/dlog_scale = sim, and sim = scale * unit_v unit_lᵀ.
    DenseMatrix sim = matmul_a_bt(cache.unit_v, cache.unit_l);
    for (std::size_t k = 0; k < sim.size(); ++k)
      grads.log_scale += dsim.data()[k] * sim.data()[k] * scale;
  }
  return grads;
}

void TwoTowerGrads::add_scaled(const TwoTowerGrads& other, double s) {
  w_v.add_scaled(other.w_v, s);
  w_l.add_scaled(other.w_l, s);
  log_scale += s * other.log_scale;
}

namespace {

nlohmann::json matrix_to_json(const DenseMatrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = m.data();
  return j;
}

DenseMatrix matrix_from_json(const nlohmann::json& j) {
  return DenseMatrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                     j.at("data").get<std::vector<double>>());
}

void check_schema(const nlohmann::json& j, const char* kind) {
  if (!j.contains("schema") || j.at("schema").get<std::string>() != kCheckpointSchema)
    throw SchemaMismatch("missing or unknown checkpoint schema tag");
  if (j.at("kind").get<std::string>() != kind)
    throw SchemaMismatch(std::string("expected checkpoint kind ") + kind);
}

}  // namespace

std::string mlp_to_json(const MlpParams& params) {
  nlohmann::json j;
  j["schema"] = kCheckpointSchema;
  j["kind"] = "mlp";
  j["w1"] = matrix_to_json(params.w1);
  j["w2"] = matrix_to_json(params.w2);
  j["w3"] = matrix_to_json(params.w3);
  j["b1"] = params.b1;
  j["b2"] = params.b2;
  j["b3"] = params.b3;
  return j.dump(2) + "\n";
}

MlpParams mlp_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check_schema(j, "mlp");
  MlpParams p;
  p.w1 = matrix_from_json(j.at("w1"));
  p.w2 = matrix_from_json(j.at("w2"));
  p.w3 = matrix_from_json(j.at("w3"));
  p.b1 = j.at("b1").get<std::vector<double>>();
  p.b2 = j.at("b2").get<std::vector<double>>();
  p.b3 = j.at("b3").get<double>();
  if (p.w1.cols() != p.w2.rows() || p.w2.cols() != p.w3.rows() || p.w3.cols() != 1 ||
      p.b1.size() != p.w1.cols() || p.b2.size() != p.w2.cols())
    throw SchemaMismatch("mlp checkpoint shapes do not chain");
  return p;
}

std::string two_tower_to_json(const TwoTowerParams& params) {
  nlohmann::json j;
  j["schema"] = kCheckpointSchema;
  j["kind"] = "two_tower";
  j["w_v"] = matrix_to_json(params.w_v);
  j["w_l"] = matrix_to_json(params.w_l);
  j["log_scale"] = params.log_scale;
  j["train_log_scale"] = params.train_log_scale;
  return j.dump(2) + "\n";
}

TwoTowerParams two_tower_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check_schema(j, "two_tower");
  TwoTowerParams p;
  p.w_v = matrix_from_json(j.at("w_v"));
  p.w_l = matrix_from_json(j.at("w_l"));
  p.log_scale = j.at("log_scale").get<double>();
  p.train_log_scale = j.at("train_log_scale").get<bool>();
  if (p.w_v.cols() != p.w_l.cols()) throw SchemaMismatch("two_tower projection ranks differ");
  return p;
}

}  // namespace calbound::model
