#include "ffnmt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "ffnmt/errors.hpp"
#include "ffnmt/rng.hpp"

namespace ffnmt {
namespace {

std::pair<Eigen::Index, Eigen::Index> layout(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_string(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape.size() == 1) return {1, static_cast<Eigen::Index>(shape[0])};
  return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  auto [r, c] = layout(shape_);
  data_ = Matrix::Constant(r, c, fill);
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::span<const double>(values.begin(), values.size()));
}

Tensor Tensor::vector(std::span<const double> values) {
  Tensor t({values.size()});
  std::copy(values.begin(), values.end(), t.data_.data());
  return t;
}

Tensor Tensor::matrix(Matrix m) {
  std::vector<std::size_t> shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  return from_matrix(std::move(shape), std::move(m));
}

Tensor Tensor::from_matrix(std::vector<std::size_t> shape, Matrix m) {
  auto [r, c] = layout(shape);
  if (m.size() != r * c) {
    throw DimensionError("cannot view " + std::to_string(m.size()) + " values as " + shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  if (m.rows() != r) m.resize(r, c);
  t.data_ = std::move(m);
  return t;
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

bool Tensor::all_finite() const { return data_.allFinite(); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Matrix out = a.mat() * b.mat();
  require_finite(out, "matmul");
  return Tensor::matrix(std::move(out));
}

Tensor activations(const Tensor& x, Activation kind) {
  Tensor out = x;
  Matrix& m = out.mat();
  if (kind == Activation::sigmoid) {
    m = m.unaryExpr([](double v) { return sigmoid(v); });
  } else {
    m = m.array().tanh().matrix();
  }
  require_finite(m, "activation");
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  if (logits.rank() != 1) {
    throw DimensionError("softmax: expected a vector, got " + shape_string(logits.shape()));
  }
  Tensor out = logits;
  Matrix& m = out.mat();
  const double mx = m.maxCoeff();
  m = (m.array() - mx).exp().matrix();
  m /= m.sum();
  require_finite(m, "softmax");
  return out;
}

Matrix dropout_matrix(Eigen::Index rows, Eigen::Index cols, double p_d, SeededRng& rng) {
  if (!(p_d >= 0.0 && p_d < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p_d));
  }
  Matrix m(rows, cols);
  if (p_d == 0.0) {
    m.setOnes();
    return m;
  }
  const double keep = 1.0 / (1.0 - p_d);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform() < p_d ? 0.0 : keep;
  }
  return m;
}

Tensor dropout_mask(const std::vector<std::size_t>& shape, double p_d, SeededRng& rng) {
  Tensor t(shape);
  t.mat() = dropout_matrix(t.mat().rows(), t.mat().cols(), p_d, rng);
  return t;
}

}  // namespace ffnmt
