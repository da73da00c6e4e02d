#include "calbound/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "calbound/error.hpp"

namespace calbound::linalg {

namespace {

// One-sided Jacobi on a tall matrix (rows >= cols): rotate column pairs of the
// working copy until mutually orthogonal, accumulating rotations in V. The
// column norms are then the singular values.
SvdResult svd_tall(const DenseMatrix& m, const SvdOptions& opts) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  DenseMatrix a = m;
  DenseMatrix v = DenseMatrix::identity(cols);

  // Columns whose norm falls below this floor are numerically zero: they are
  // excluded from rotations (their content is roundoff junk, which would
  // otherwise keep the relative orthogonality criterion from ever holding)
  // and their singular values are reported as exact zeros.
  const double zero_floor = 1e-13 * m.frobenius_norm();
  const double zero_floor_sq = zero_floor * zero_floor;

  std::size_t sweeps = 0;
  bool converged = cols < 2;
  while (!converged) {
    if (sweeps >= opts.max_sweeps) throw NoConvergence(sweeps);
    ++sweeps;
    converged = true;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
          const double* row = a.row_ptr(k);
          app += row[p] * row[p];
          aqq += row[q] * row[q];
          apq += row[p] * row[q];
        }
        if (app <= zero_floor_sq || aqq <= zero_floor_sq) continue;
        if (std::fabs(apq) <= opts.off_diag_tol * std::sqrt(app * aqq)) continue;
        converged = false;

        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < rows; ++k) {
          double* row = a.row_ptr(k);
          const double xp = row[p];
          const double xq = row[q];
          row[p] = c * xp - s * xq;
          row[q] = s * xp + c * xq;
        }
        for (std::size_t k = 0; k < cols; ++k) {
          double* row = v.row_ptr(k);
          const double xp = row[p];
          const double xq = row[q];
          row[p] = c * xp - s * xq;
          row[q] = s * xp + c * xq;
        }
      }
    }
  }

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double sum = 0.0;
    for (std::size_t k = 0; k < rows; ++k) sum += a(k, j) * a(k, j);
    sigma[j] = std::sqrt(sum);
  }

  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  SvdResult out;
  out.singular_values.resize(cols);
  out.left_vectors = DenseMatrix(rows, cols);
  out.right_vectors = DenseMatrix(cols, cols);

  const double tiny = zero_floor;
  for (std::size_t j = 0; j < cols; ++j) {
    const std::size_t src = order[j];
    out.singular_values[j] = sigma[src];
    for (std::size_t k = 0; k < cols; ++k) out.right_vectors(k, j) = v(k, src);
    if (sigma[src] > tiny) {
      const double inv = 1.0 / sigma[src];
      for (std::size_t k = 0; k < rows; ++k) out.left_vectors(k, j) = a(k, src) * inv;
    }
  }

  // Null-space columns of U: complete to an orthonormal set by Gram-Schmidt
  // against the columns already placed, starting from coordinate vectors.
  for (std::size_t j = 0; j < cols; ++j) {
    if (out.singular_values[j] > tiny) continue;
    std::vector<double> cand(rows, 0.0);
    double norm = 0.0;
    for (std::size_t basis = 0; basis < rows && norm < 0.5; ++basis) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[basis] = 1.0;
      for (std::size_t c2 = 0; c2 < cols; ++c2) {
        if (c2 == j) continue;
        if (out.singular_values[c2] <= tiny && c2 > j) continue;  // not yet filled
        double dot = 0.0;
        for (std::size_t k = 0; k < rows; ++k) dot += cand[k] * out.left_vectors(k, c2);
        for (std::size_t k = 0; k < rows; ++k) cand[k] -= dot * out.left_vectors(k, c2);
      }
      norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (std::size_t k = 0; k < rows; ++k) out.left_vectors(k, j) = cand[k] / norm;
    out.singular_values[j] = 0.0;
  }
  return out;
}

}  // namespace

SvdResult svd(const DenseMatrix& m, const SvdOptions& opts) {
  m.ensure_finite("svd input");
  if (m.rows() == 0 || m.cols() == 0) throw EmptyInput("svd of empty matrix");
  if (m.rows() >= m.cols()) return svd_tall(m, opts);
  SvdResult t = svd_tall(m.transposed(), opts);
  std::swap(t.left_vectors, t.right_vectors);
  return t;
}

void column_moments(const DenseMatrix& samples, std::vector<double>& means,
                    std::vector<double>& variances) {
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  means.assign(d, 0.0);
  variances.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = samples.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) means[j] += row[j];
  }
  for (std::size_t j = 0; j < d; ++j) means[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = samples.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = row[j] - means[j];
      variances[j] += dev * dev;
    }
  }
  for (std::size_t j = 0; j < d; ++j) variances[j] /= static_cast<double>(n);
}

DenseMatrix normalized_covariance(const DenseMatrix& samples, double variance_floor) {
  if (samples.rows() < 2) throw EmptyInput("normalized_covariance needs >= 2 samples");
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();

  std::vector<double> mean, var;
  column_moments(samples, mean, var);
  for (std::size_t j = 0; j < d; ++j) {
    if (var[j] <= variance_floor) throw ZeroVarianceColumn(j);
  }

  DenseMatrix standardized(n, d);
  std::vector<double> inv_sd(d);
  for (std::size_t j = 0; j < d; ++j) inv_sd[j] = 1.0 / std::sqrt(var[j]);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = samples.row_ptr(i);
    double* dst = standardized.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = (src[j] - mean[j]) * inv_sd[j];
  }

  DenseMatrix cov = matmul_at_b(standardized, standardized);
  cov.scale(1.0 / static_cast<double>(n));
  // Exact symmetry: mirror the lower triangle.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) cov(j, i) = cov(i, j);
  return cov;
}

DenseMatrix centered_covariance(const DenseMatrix& samples) {
  if (samples.rows() < 2) throw EmptyInput("centered_covariance needs >= 2 samples");
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  std::vector<double> mean, var;
  column_moments(samples, mean, var);
  DenseMatrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = samples.row_ptr(i);
    double* dst = centered.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] - mean[j];
  }
  DenseMatrix cov = matmul_at_b(centered, centered);
  cov.scale(1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) cov(j, i) = cov(i, j);
  return cov;
}

double smallest_singular_value(const DenseMatrix& sym, const SvdOptions& opts) {
  if (sym.rows() != sym.cols()) throw ShapeMismatch("smallest_singular_value needs a square matrix");
  double asym = 0.0;
  for (std::size_t i = 0; i < sym.rows(); ++i)
    for (std::size_t j = i + 1; j < sym.cols(); ++j)
      asym = std::max(asym, std::fabs(sym(i, j) - sym(j, i)));
  if (asym > 1e-10) throw DegenerateInput("matrix not symmetric within 1e-10");
  return svd(sym, opts).singular_values.back();
}

OrthogonalityPenalty orthogonality_penalty(const DenseMatrix& w) {
  if (w.cols() > w.rows()) throw ShapeMismatch("orthogonality_penalty needs cols <= rows");
  const std::size_t r = w.cols();
  DenseMatrix gram = matmul_at_b(w, w);
  for (std::size_t j = 0; j < r; ++j) gram(j, j) -= 1.0;
  double value = 0.0;
  for (double g : gram.data()) value += g * g;
  DenseMatrix grad = matmul(w, gram);
  grad.scale(4.0);
  return {value, std::move(grad)};
}

std::size_t effective_rank(const std::vector<double>& singular_values, double threshold) {
  if (singular_values.empty()) return 0;
  const double cut = threshold * singular_values.front();
  std::size_t count = 0;
  for (double s : singular_values) {
    if (s > cut) ++count;
  }
  return count;
}

double pearson_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ShapeMismatch("pearson inputs differ in length");
  if (xs.size() < 3) throw EmptyInput("pearson needs length >= 3");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DegenerateInput("constant sequence in pearson");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace calbound::linalg
