#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace calbound {

// Row-major dense real matrix in double precision. The substrate for every
// linear-algebra operation in the library.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  // Throws NonFiniteValue naming `what` if any entry is NaN/Inf.
  void ensure_finite(const char* what) const;

  DenseMatrix transposed() const;

  void fill(double v);
  void scale(double s);
  // this += s * other (shapes must match).
  void add_scaled(const DenseMatrix& other, double s);

  double frobenius_norm() const;
  double max_abs() const;

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C = A * B
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// C = Aᵀ * B without materializing the transpose.
DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b);
// C = A * Bᵀ without materializing the transpose.
DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b);

// y = A * x
std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x);

double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace calbound
