#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ffnmt/tensor.hpp"

namespace ffnmt {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode differentiation tape.
///
/// Every primitive evaluates eagerly, stores its result, and records a
/// closure that propagates the gradient back to its inputs. Values are
/// matrices whose rows index independent batch entries. A tape is single
/// writer; independent tapes share nothing and may run on separate threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Leaf holding a copy of `value`. Gradients are retained for leaves.
  Var input(Matrix value);
  /// Leaf referencing external storage that must outlive the tape.
  Var parameter(const Matrix& value);
  /// Leaf that never receives a gradient.
  Var constant(Matrix value);

  const Matrix& value(Var v) const;
  /// Gradient accumulated by the last backward(); zeros if nothing flowed.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(check(v)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Elementwise product.
  Var mul(Var a, Var b);
  /// x[B x n] times a broadcast row[1 x n].
  Var mul_row(Var x, Var row);
  /// Elementwise product with a constant of the same shape, or with a
  /// constant column [B x 1] broadcast across each row.
  Var mul_const(Var x, const Matrix& c);
  Var scale(Var x, double factor);
  Var sigmoid(Var x);
  Var tanh(Var x);

  /// x * W^T: maps x[B x in] through W[out x in].
  Var linear(Var x, Var w);
  Var matmul(Var a, Var b);

  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var x, Eigen::Index begin, Eigen::Index width);

  /// Row b of the result is row ids[b] of `table`.
  Var gather_rows(Var table, std::span<const int> ids);
  /// Row b of the result is row b of seq[index[b]].
  Var select_rows(std::span<const Var> seq, std::span<const int> index);
  /// Per-dimension maximum over the sequence, restricted per row to
  /// positions with valid(b, t) != 0. Gradient routes to the first argmax.
  Var max_over(std::span<const Var> seq, const Matrix& valid);

  /// Fused peephole LSTM cell. `gates` is [B x 4d] holding the pre-activation
  /// blocks (z, z_rho, z_phi, z_pi). Returns (h, s).
  std::pair<Var, Var> lstm_cell(Var gates, Var s_prev, Var theta_rho, Var theta_phi, Var theta_pi);

  /// Additive alignment scores: out(b, t) = v . tanh(query(b) + keys[t](b)).
  Var additive_scores(Var query, std::span<const Var> keys, Var v);
  /// Row-wise softmax over entries with valid != 0; invalid entries are 0.
  Var softmax_rows(Var x, const Matrix& valid);
  /// out(b) = sum_t alpha(b, t) * values[t](b).
  Var weighted_sum(Var alpha, std::span<const Var> values);

  /// Sum over rows of weights[b] * -log softmax(logits(b))[targets[b]]; [1 x 1].
  Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights);
  /// Sum of all entries; [1 x 1].
  Var sum(Var x);
  /// Sum of x .* c for a constant c; [1 x 1].
  Var dot_const(Var x, const Matrix& c);

  /// Reverse sweep from a scalar output (seed gradient 1).
  void backward(Var output);
  /// Reverse sweep with an explicit seed gradient of the output's shape.
  void backward(Var output, const Matrix& seed);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    int companion = -1;
    std::function<void(Tape&)> backward;
  };

  int check(Var v) const;
  const Matrix& val(int id) const;
  bool needs(int id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer for `id`, zero-initialised on first use.
  Matrix& acc(int id);
  Var push(Matrix value, bool requires_grad, std::function<void(Tape&)> backward = {});
  static void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace ffnmt
