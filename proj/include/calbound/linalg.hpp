#pragma once

#include <cstddef>
#include <vector>

#include "calbound/matrix.hpp"

namespace calbound::linalg {

// Columns with variance at or below this floor make per-dimension
// standardization (and the singular-value terms built on it) undefined.
inline constexpr double kVarianceFloor = 1e-12;

struct SvdOptions {
  std::size_t max_sweeps = 100;
  double off_diag_tol = 1e-12;  // relative column-pair orthogonality tolerance
};

struct SvdResult {
  std::vector<double> singular_values;  // descending, all >= 0
  DenseMatrix left_vectors;             // m x k, orthonormal columns
  DenseMatrix right_vectors;            // n x k, orthonormal columns
};

// Thin SVD via one-sided Jacobi rotations. Throws NoConvergence if the sweep
// cap is exceeded before all column pairs are orthogonal within tolerance.
SvdResult svd(const DenseMatrix& m, const SvdOptions& opts = {});

// Per-column standardized covariance (1/N) X̃ᵀX̃ of an N x d sample matrix;
// the diagonal is 1 by construction. Throws ZeroVarianceColumn when a column's
// population variance is at or below the floor, EmptyInput when N < 2.
DenseMatrix normalized_covariance(const DenseMatrix& samples,
                                  double variance_floor = kVarianceFloor);

// Centered (not variance-scaled) covariance (1/N) XcᵀXc.
DenseMatrix centered_covariance(const DenseMatrix& samples);

// Column means and population variances of a sample matrix.
void column_moments(const DenseMatrix& samples, std::vector<double>& means,
                    std::vector<double>& variances);

// Smallest singular value of a square symmetric matrix (validated to 1e-10).
double smallest_singular_value(const DenseMatrix& sym, const SvdOptions& opts = {});

struct OrthogonalityPenalty {
  double value;         // ‖WᵀW − I‖_F²
  DenseMatrix gradient; // 4·W·(WᵀW − I)
};

// Soft orthonormal-columns constraint; requires cols <= rows.
OrthogonalityPenalty orthogonality_penalty(const DenseMatrix& w);

// Number of singular values above threshold * max value; input sorted descending.
std::size_t effective_rank(const std::vector<double>& singular_values, double threshold);

// Throws DegenerateInput when a sequence is constant, EmptyInput on length < 3.
double pearson_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace calbound::linalg
