#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calbound/matrix.hpp"

namespace calbound::model {

struct MlpShape {
  std::size_t inputs = 0;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
};

// Three weight layers with rectifier hidden activations and a logistic output.
// Parameter records are immutable values: training produces new records.
struct MlpParams {
  DenseMatrix w1;  // inputs x hidden1
  DenseMatrix w2;  // hidden1 x hidden2
  DenseMatrix w3;  // hidden2 x 1
  std::vector<double> b1;
  std::vector<double> b2;
  double b3 = 0.0;

  MlpShape shape() const { return {w1.rows(), w1.cols(), w2.cols()}; }

  // Fan-in scaled uniform init, U(-sqrt(3/fan_in), +sqrt(3/fan_in)), from a
  // seeded stream; biases zero.
  static MlpParams init(const MlpShape& shape, std::uint64_t seed);
  static MlpParams zeros(const MlpShape& shape);
};

struct MlpCache {
  DenseMatrix z1, a1;  // pre/post activation, N x h1
  DenseMatrix z2, a2;  // a2 is the penultimate representation, N x h2
  std::vector<double> logits;  // N
  std::vector<double> probs;   // N, strictly inside (0,1)
};

// Batch forward pass; fills `cache` (when given) with everything backward needs.
std::vector<double> mlp_forward(const MlpParams& params, const DenseMatrix& x,
                                MlpCache* cache = nullptr);

// Penultimate (h2-dim) representation only.
DenseMatrix mlp_penultimate(const MlpParams& params, const DenseMatrix& x);

// Pre-sigmoid output logits.
std::vector<double> mlp_logits(const MlpParams& params, const DenseMatrix& x);

struct MlpGrads {
  DenseMatrix w1, w2, w3;
  std::vector<double> b1, b2;
  double b3 = 0.0;

  static MlpGrads zeros(const MlpShape& shape);
  void add_scaled(const MlpGrads& other, double s);
};

// Exact gradient of a scalar loss given its gradient w.r.t. the output logits.
MlpGrads mlp_backward(const MlpParams& params, const DenseMatrix& x, const MlpCache& cache,
                      const std::vector<double>& dlogits);

// Variant with the upstream gradient applied at the penultimate representation
// (used by regularizers defined on the representation itself). Only w1, b1,
// w2, b2 receive gradient.
MlpGrads mlp_backward_from_representation(const MlpParams& params, const DenseMatrix& x,
                                          const MlpCache& cache, const DenseMatrix& drep);

// Linear two-tower encoder pair; rows are L2-normalized before similarity.
struct TwoTowerParams {
  DenseMatrix w_v;  // d_v x r
  DenseMatrix w_l;  // d_l x r
  double log_scale = 0.0;
  bool train_log_scale = false;

  static TwoTowerParams init(std::size_t d_v, std::size_t d_l, std::size_t r,
                             std::uint64_t seed);
};

struct TwoTowerCache {
  DenseMatrix proj_v, proj_l;  // N x r, pre-normalization
  DenseMatrix unit_v, unit_l;  // N x r, row-normalized
  std::vector<double> norm_v, norm_l;
};

// similarity(i, j) = exp(log_scale) * <unit_v_i, unit_l_j>. Throws ZeroNormRow
// when a projected row has norm < 1e-12.
DenseMatrix two_tower_similarity(const TwoTowerParams& params, const DenseMatrix& x_v,
                                 const DenseMatrix& x_l, TwoTowerCache* cache = nullptr);

struct TwoTowerGrads {
  DenseMatrix w_v, w_l;
  double log_scale = 0.0;

  void add_scaled(const TwoTowerGrads& other, double s);
};

TwoTowerGrads two_tower_backward(const TwoTowerParams& params, const DenseMatrix& x_v,
                                 const DenseMatrix& x_l, const TwoTowerCache& cache,
                                 const DenseMatrix& dsim);

// Checkpoints: JSON object of named flat arrays plus shape metadata.
inline constexpr const char* kCheckpointSchema = "calbound-checkpoint-v1";

std::string mlp_to_json(const MlpParams& params);
MlpParams mlp_from_json(const std::string& text);
std::string two_tower_to_json(const TwoTowerParams& params);
TwoTowerParams two_tower_from_json(const std::string& text);

}  // namespace calbound::model
