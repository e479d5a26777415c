#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ffnmt/errors.hpp"
#include "ffnmt/tape.hpp"
#include "test_support.hpp"

using namespace ffnmt;
using ffnmt::test::max_rel_error;
using ffnmt::test::numeric_gradient;
using ffnmt::test::random_matrix;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces the builder's output to a scalar with fixed random weights and
// compares tape gradients of every input with central differences.
double check_op(std::vector<Matrix> inputs, const Builder& build, std::uint64_t seed = 1) {
  Matrix weights;
  auto run = [&](bool backward, std::vector<Matrix>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& m : inputs) vars.push_back(tape.input(m));
    Var out = build(tape, vars);
    if (weights.size() == 0) {
      SeededRng rng(seed);
      weights = random_matrix(tape.value(out).rows(), tape.value(out).cols(), rng);
    }
    Var loss = tape.dot_const(out, weights);
    if (backward) {
      tape.backward(loss);
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return tape.value(loss)(0, 0);
  };
  std::vector<Matrix> analytic;
  run(true, &analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix numeric = numeric_gradient(inputs[i], [&] { return run(false, nullptr); });
    worst = std::max(worst, max_rel_error(analytic[i], numeric));
  }
  return worst;
}

std::vector<Matrix> randoms(std::initializer_list<std::pair<int, int>> shapes, std::uint64_t seed = 7) {
  SeededRng rng(seed);
  std::vector<Matrix> out;
  for (auto [r, c] : shapes) out.push_back(random_matrix(r, c, rng));
  return out;
}

constexpr double kTol = 1e-6;  // FD round-off is ~1e-11 absolute against the 1e-4 floor

}  // namespace

TEST(Tape, ElementwiseOps) {
  EXPECT_LT(check_op(randoms({{3, 4}, {3, 4}}), [](Tape& t, auto& v) { return t.add(v[0], v[1]); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}, {3, 4}}), [](Tape& t, auto& v) { return t.sub(v[0], v[1]); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}, {3, 4}}), [](Tape& t, auto& v) { return t.mul(v[0], v[1]); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}, {1, 4}}), [](Tape& t, auto& v) { return t.mul_row(v[0], v[1]); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}}), [](Tape& t, auto& v) { return t.scale(v[0], -2.5); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}}), [](Tape& t, auto& v) { return t.sigmoid(v[0]); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}}), [](Tape& t, auto& v) { return t.tanh(v[0]); }), kTol);
}

TEST(Tape, MulConstFullAndColumn) {
  SeededRng rng(2);
  const Matrix full = random_matrix(3, 4, rng);
  const Matrix column = random_matrix(3, 1, rng);
  EXPECT_LT(check_op(randoms({{3, 4}}), [&](Tape& t, auto& v) { return t.mul_const(v[0], full); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 4}}), [&](Tape& t, auto& v) { return t.mul_const(v[0], column); }), kTol);
}

TEST(Tape, LinearAndMatmul) {
  EXPECT_LT(check_op(randoms({{3, 5}, {4, 5}}), [](Tape& t, auto& v) { return t.linear(v[0], v[1]); }), kTol);
  EXPECT_LT(check_op(randoms({{3, 5}, {5, 2}}), [](Tape& t, auto& v) { return t.matmul(v[0], v[1]); }), kTol);
  Tape tape;
  Matrix x = Matrix::Ones(1, 2), w(3, 2);
  w << 1, 2, 3, 4, 5, 6;
  Var y = tape.linear(tape.input(x), tape.input(w));
  EXPECT_EQ(tape.value(y)(0, 0), 3.0);
  EXPECT_EQ(tape.value(y)(0, 2), 11.0);
}

TEST(Tape, ConcatAndSlice) {
  EXPECT_LT(check_op(randoms({{2, 3}, {2, 1}, {2, 4}}),
                     [](Tape& t, auto& v) { return t.concat_cols(std::span<const Var>(v)); }),
            kTol);
  EXPECT_LT(check_op(randoms({{2, 6}}), [](Tape& t, auto& v) { return t.slice_cols(v[0], 2, 3); }), kTol);
}

TEST(Tape, GatherRowsAccumulatesRepeats) {
  const std::vector<int> ids{2, 0, 2};
  EXPECT_LT(check_op(randoms({{4, 3}}), [&](Tape& t, auto& v) { return t.gather_rows(v[0], ids); }), kTol);
  Tape tape;
  Var table = tape.input(Matrix::Zero(4, 2));
  Var g = tape.gather_rows(table, ids);
  tape.backward(tape.sum(g));
  const Matrix grad = tape.grad(table);
  EXPECT_EQ(grad(2, 0), 2.0);
  EXPECT_EQ(grad(0, 1), 1.0);
  EXPECT_EQ(grad(1, 0), 0.0);
}

TEST(Tape, SelectRows) {
  const std::vector<int> index{2, 0};
  EXPECT_LT(check_op(randoms({{2, 3}, {2, 3}, {2, 3}}),
                     [&](Tape& t, auto& v) { return t.select_rows(std::span<const Var>(v), index); }),
            kTol);
}

TEST(Tape, MaxOverRespectsMask) {
  Matrix valid(2, 3);
  valid << 1, 1, 1, 1, 1, 0;
  EXPECT_LT(check_op(randoms({{2, 4}, {2, 4}, {2, 4}}),
                     [&](Tape& t, auto& v) { return t.max_over(std::span<const Var>(v), valid); }),
            kTol);
  Tape tape;
  Matrix a(2, 1), b(2, 1), c(2, 1);
  a << 1, 1;
  b << 2, 2;
  c << 3, 9;
  std::vector<Var> seq{tape.input(a), tape.input(b), tape.input(c)};
  Var m = tape.max_over(seq, valid);
  EXPECT_EQ(tape.value(m)(0, 0), 3.0);
  EXPECT_EQ(tape.value(m)(1, 0), 2.0);
}

TEST(Tape, LstmCellBothOutputs) {
  auto both = [](Tape& t, auto& v) {
    auto [h, s] = t.lstm_cell(v[0], v[1], v[2], v[3], v[4]);
    Var parts[] = {h, s};
    return t.concat_cols(parts);
  };
  EXPECT_LT(check_op(randoms({{3, 12}, {3, 3}, {1, 3}, {1, 3}, {1, 3}}), both), kTol);
}

TEST(Tape, LstmCellMatchesScalarFormula) {
  // One unit: s = tanh(z) sig(zr + s0 tr) + sig(zf + s0 tf) s0, h = tanh(s) sig(zp + s tp).
  const double z = 0.3, zr = -0.2, zf = 0.7, zp = 0.1, s0 = 0.5, tr = 0.4, tf = -0.6, tp = 0.9;
  Tape tape;
  Matrix gates(1, 4);
  gates << z, zr, zf, zp;
  auto [h, s] = tape.lstm_cell(tape.input(gates), tape.input(Matrix::Constant(1, 1, s0)),
                               tape.input(Matrix::Constant(1, 1, tr)), tape.input(Matrix::Constant(1, 1, tf)),
                               tape.input(Matrix::Constant(1, 1, tp)));
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double s_ref = std::tanh(z) * sig(zr + s0 * tr) + sig(zf + s0 * tf) * s0;
  const double h_ref = std::tanh(s_ref) * sig(zp + s_ref * tp);
  EXPECT_NEAR(tape.value(s)(0, 0), s_ref, 1e-15);
  EXPECT_NEAR(tape.value(h)(0, 0), h_ref, 1e-15);
}

TEST(Tape, AttentionOps) {
  auto scores = [](Tape& t, auto& v) {
    std::vector<Var> keys{v[1], v[2], v[3]};
    return t.additive_scores(v[0], keys, v[4]);
  };
  EXPECT_LT(check_op(randoms({{2, 5}, {2, 5}, {2, 5}, {2, 5}, {1, 5}}), scores), kTol);

  Matrix valid(2, 3);
  valid << 1, 1, 0, 1, 1, 1;
  EXPECT_LT(check_op(randoms({{2, 3}}), [&](Tape& t, auto& v) { return t.softmax_rows(v[0], valid); }), kTol);

  auto weighted = [](Tape& t, auto& v) {
    std::vector<Var> values{v[1], v[2], v[3]};
    return t.weighted_sum(v[0], values);
  };
  EXPECT_LT(check_op(randoms({{2, 3}, {2, 4}, {2, 4}, {2, 4}}), weighted), kTol);
}

TEST(Tape, SoftmaxRowsZeroOnPadding) {
  Tape tape;
  Matrix x(1, 3);
  x << 5, 1, 100;
  Matrix valid(1, 3);
  valid << 1, 1, 0;
  Var a = tape.softmax_rows(tape.input(x), valid);
  const Matrix& out = tape.value(a);
  EXPECT_EQ(out(0, 2), 0.0);
  EXPECT_NEAR(out(0, 0) + out(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(out(0, 0) / out(0, 1), std::exp(4.0), 1e-9);
}

TEST(Tape, SoftmaxRowsPropagatesNaN) {
  Tape tape;
  Matrix x(2, 2);
  x << std::nan(""), 1, 0, 0;
  Matrix valid = Matrix::Ones(2, 2);
  const Matrix& out = tape.value(tape.softmax_rows(tape.input(x), valid));
  EXPECT_TRUE(out.row(0).array().isNaN().all());
  EXPECT_DOUBLE_EQ(out(1, 0), 0.5);
  valid.row(1).setZero();
  EXPECT_THROW(tape.softmax_rows(tape.input(x), valid), DomainError);
}

TEST(Tape, CrossEntropy) {
  const std::vector<int> targets{1, 3};
  const std::vector<double> weights{1.0, 0.5};
  EXPECT_LT(check_op(randoms({{2, 4}}), [&](Tape& t, auto& v) { return t.cross_entropy(v[0], targets, weights); }),
            kTol);
  Tape tape;
  Var ce = tape.cross_entropy(tape.input(Matrix::Zero(1, 8)), std::vector<int>{5}, std::vector<double>{1.0});
  EXPECT_NEAR(tape.value(ce)(0, 0), std::log(8.0), 1e-15);
  // Large logits stay finite.
  Matrix big(1, 2);
  big << 1000.0, -1000.0;
  Var ce2 = tape.cross_entropy(tape.input(big), std::vector<int>{1}, std::vector<double>{1.0});
  EXPECT_NEAR(tape.value(ce2)(0, 0), 2000.0, 1e-9);
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape tape;
  Var c = tape.constant(Matrix::Ones(1, 2));
  Var x = tape.input(Matrix::Constant(1, 2, 3.0));
  Var y = tape.sum(tape.mul(c, x));
  tape.backward(y);
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_EQ(tape.grad(c).sum(), 0.0);
  EXPECT_EQ(tape.grad(x).sum(), 2.0);
}

TEST(Tape, ParameterReferencesExternalStorage) {
  Matrix w = Matrix::Constant(2, 2, 1.5);
  Tape tape;
  Var p = tape.parameter(w);
  EXPECT_EQ(&tape.value(p), &w);
  tape.backward(tape.sum(p));
  EXPECT_EQ(tape.grad(p).sum(), 4.0);
}

TEST(Tape, ShapeErrors) {
  Tape tape;
  Var a = tape.input(Matrix::Zero(2, 3));
  Var b = tape.input(Matrix::Zero(3, 2));
  EXPECT_THROW(tape.add(a, b), DimensionError);
  EXPECT_THROW(tape.value(Var{99}), StateError);
}
