#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ffnmt {

class SeededRng;

/// Dense row-major matrix of doubles; the storage behind every tensor.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense numeric array of rank 1 or 2.
///
/// Storage is row-major: element (r, c) of a [rows x cols] tensor lives at
/// offset r * cols + c. A rank-1 tensor of length n is stored as a 1 x n
/// row. Checkpoints serialize data() in exactly this order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::span<const double> values);
  /// Rank-2 tensor from a matrix.
  static Tensor matrix(Matrix m);
  /// Tensor of the given shape wrapping `m`; m must hold product(shape) values.
  static Tensor from_matrix(std::vector<std::size_t> shape, Matrix m);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return shape_.empty(); }

  std::span<double> data() { return {data_.data(), size()}; }
  std::span<const double> data() const { return {data_.data(), size()}; }

  double& operator[](std::size_t i) { return data_.data()[i]; }
  double operator[](std::size_t i) const { return data_.data()[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  /// 2-D view; rank-1 tensors appear as a single row.
  Matrix& mat() { return data_; }
  const Matrix& mat() const { return data_; }

  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  Matrix data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class Activation { sigmoid, tanh };

/// Numerically stable logistic function.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor activations(const Tensor& x, Activation kind);
Tensor softmax(const Tensor& logits);
/// Inverted-dropout mask: entries are 0 with probability p_d and
/// 1 / (1 - p_d) otherwise. Draws one uniform per entry in storage order.
Tensor dropout_mask(const std::vector<std::size_t>& shape, double p_d, SeededRng& rng);
Matrix dropout_matrix(Eigen::Index rows, Eigen::Index cols, double p_d, SeededRng& rng);

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

}  // namespace ffnmt
