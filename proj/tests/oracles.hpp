// Test-only oracles, independent of the library's implementation paths:
// a two-sided Jacobi symmetric eigensolver, central finite differences, and
// plain-loop reference computations.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "calbound/matrix.hpp"
#include "calbound/rng.hpp"

namespace oracle {

using calbound::DenseMatrix;

// Classical cyclic two-sided Jacobi eigenvalue iteration for a symmetric
// matrix; returns eigenvalues sorted descending.
inline std::vector<double> symmetric_eigenvalues(const DenseMatrix& m) {
  const std::size_t n = m.rows();
  DenseMatrix a = m;
  for (std::size_t sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

// Singular values of any matrix via eigenvalues of MᵀM (or MMᵀ), descending.
inline std::vector<double> singular_values_via_gram(const DenseMatrix& m) {
  const DenseMatrix gram = m.rows() >= m.cols() ? calbound::matmul_at_b(m, m)
                                                : calbound::matmul_a_bt(m, m);
  std::vector<double> eig = symmetric_eigenvalues(gram);
  for (double& e : eig) e = std::sqrt(std::max(e, 0.0));
  return eig;
}

// Central finite difference of a scalar function at x.
inline double central_difference(const std::function<double(double)>& f, double x,
                                 double eps = 1e-5) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

// Componentwise finite-difference gradient check against an analytic gradient.
// Returns the worst relative error max(|analytic - fd| / max(|fd|, floor)).
inline double matrix_grad_rel_error(const std::function<double(const DenseMatrix&)>& f,
                                    DenseMatrix w, const DenseMatrix& analytic,
                                    double eps = 1e-5, double floor_ = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double saved = w.data()[k];
    w.data()[k] = saved + eps;
    const double up = f(w);
    w.data()[k] = saved - eps;
    const double dn = f(w);
    w.data()[k] = saved;
    const double fd = (up - dn) / (2.0 * eps);
    const double scale = std::max({std::fabs(fd), std::fabs(analytic.data()[k]), floor_});
    worst = std::max(worst, std::fabs(analytic.data()[k] - fd) / scale);
  }
  return worst;
}

inline double vector_grad_rel_error(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x, const std::vector<double>& analytic,
                                    double eps = 1e-5, double floor_ = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + eps;
    const double up = f(x);
    x[k] = saved - eps;
    const double dn = f(x);
    x[k] = saved;
    const double fd = (up - dn) / (2.0 * eps);
    const double scale = std::max({std::fabs(fd), std::fabs(analytic[k]), floor_});
    worst = std::max(worst, std::fabs(analytic[k] - fd) / scale);
  }
  return worst;
}

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, calbound::Rng& rng,
                                 double scale = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal() * scale;
  return m;
}

// Gram-Schmidt orthonormalization of the columns (assumes full column rank).
inline DenseMatrix orthonormalized_columns(const DenseMatrix& w) {
  DenseMatrix q = w;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < q.rows(); ++i) dot += q(i, j) * q(i, prev);
      for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) -= dot * q(i, prev);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) /= norm;
  }
  return q;
}

}  // namespace oracle
