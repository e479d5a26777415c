#include "ffnmt/tape.hpp"

#include <cmath>
#include <limits>

#include "ffnmt/errors.hpp"

namespace ffnmt {
namespace {

std::string dims(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + "]";
}

}  // namespace

int Tape::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("variable is not recorded on this tape");
  }
  return v.id;
}

const Matrix& Tape::val(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

const Matrix& Tape::value(Var v) const { return val(check(v)); }

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(check(v));
  if (n.grad.size() == 0) {
    const Matrix& x = val(v.id);
    return Matrix::Zero(x.rows(), x.cols());
  }
  return n.grad;
}

Matrix& Tape::acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& x = val(id);
    n.grad = Matrix::Zero(x.rows(), x.cols());
  }
  return n.grad;
}

void Tape::require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
  }
}

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) { return push(std::move(value), true); }

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::add(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(val(ia), val(ib), "add");
  const int self = static_cast<int>(nodes_.size());
  return push(val(ia) + val(ib), needs(ia) || needs(ib), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ia)) t.acc(ia) += g;
    if (t.needs(ib)) t.acc(ib) += g;
  });
}

Var Tape::sub(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(val(ia), val(ib), "sub");
  const int self = static_cast<int>(nodes_.size());
  return push(val(ia) - val(ib), needs(ia) || needs(ib), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ia)) t.acc(ia) += g;
    if (t.needs(ib)) t.acc(ib) -= g;
  });
}

Var Tape::mul(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(val(ia), val(ib), "mul");
  const int self = static_cast<int>(nodes_.size());
  return push(val(ia).cwiseProduct(val(ib)), needs(ia) || needs(ib), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ia)) t.acc(ia) += g.cwiseProduct(t.val(ib));
    if (t.needs(ib)) t.acc(ib) += g.cwiseProduct(t.val(ia));
  });
}

Var Tape::mul_row(Var x, Var row) {
  const int ix = check(x), ir = check(row);
  const Matrix& xv = val(ix);
  const Matrix& rv = val(ir);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("mul_row: cannot broadcast " + dims(rv) + " over " + dims(xv));
  }
  Matrix out = xv.array().rowwise() * rv.row(0).array();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(ix) || needs(ir), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ix)) t.acc(ix).array() += g.array().rowwise() * t.val(ir).row(0).array();
    if (t.needs(ir)) t.acc(ir) += g.cwiseProduct(t.val(ix)).colwise().sum();
  });
}

Var Tape::mul_const(Var x, const Matrix& c) {
  const int ix = check(x);
  const Matrix& xv = val(ix);
  Matrix factor;
  if (c.rows() == xv.rows() && c.cols() == 1 && xv.cols() != 1) {
    factor = c.replicate(1, xv.cols());
  } else {
    require_same_shape(xv, c, "mul_const");
    factor = c;
  }
  Matrix out = xv.cwiseProduct(factor);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(ix), [=, f = std::move(factor)](Tape& t) {
    t.acc(ix) += t.nodes_[self].grad.cwiseProduct(f);
  });
}

Var Tape::scale(Var x, double factor) {
  const int ix = check(x);
  const int self = static_cast<int>(nodes_.size());
  return push(val(ix) * factor, needs(ix),
              [=](Tape& t) { t.acc(ix) += t.nodes_[self].grad * factor; });
}

Var Tape::sigmoid(Var x) {
  const int ix = check(x);
  Matrix y = val(ix).unaryExpr([](double v) { return ffnmt::sigmoid(v); });
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(y), needs(ix), [=](Tape& t) {
    const Matrix& yv = t.val(self);
    t.acc(ix).array() += t.nodes_[self].grad.array() * yv.array() * (1.0 - yv.array());
  });
}

Var Tape::tanh(Var x) {
  const int ix = check(x);
  Matrix y = val(ix).array().tanh().matrix();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(y), needs(ix), [=](Tape& t) {
    const Matrix& yv = t.val(self);
    t.acc(ix).array() += t.nodes_[self].grad.array() * (1.0 - yv.array().square());
  });
}

Var Tape::linear(Var x, Var w) {
  const int ix = check(x), iw = check(w);
  const Matrix& xv = val(ix);
  const Matrix& wv = val(iw);
  if (xv.cols() != wv.cols()) {
    throw DimensionError("linear: input " + dims(xv) + " does not match weight " + dims(wv));
  }
  Matrix out = xv * wv.transpose();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(ix) || needs(iw), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ix)) t.acc(ix).noalias() += g * t.val(iw);
    if (t.needs(iw)) t.acc(iw).noalias() += g.transpose() * t.val(ix);
  });
}

Var Tape::matmul(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Matrix& av = val(ia);
  const Matrix& bv = val(ib);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: incompatible shapes " + dims(av) + " and " + dims(bv));
  }
  Matrix out = av * bv;
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(ia) || needs(ib), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ia)) t.acc(ia).noalias() += g * t.val(ib).transpose();
    if (t.needs(ib)) t.acc(ib).noalias() += t.val(ia).transpose() * g;
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::vector<int> ids;
  ids.reserve(parts.size());
  Eigen::Index rows = -1, cols = 0;
  bool rg = false;
  for (Var p : parts) {
    const int id = check(p);
    const Matrix& m = val(id);
    if (rows >= 0 && m.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + std::to_string(rows) + " vs " + dims(m));
    }
    rows = m.rows();
    cols += m.cols();
    rg = rg || needs(id);
    ids.push_back(id);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (int id : ids) {
    const Matrix& m = val(id);
    out.middleCols(at, m.cols()) = m;
    at += m.cols();
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [=, ids = std::move(ids)](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index off = 0;
    for (int id : ids) {
      const Eigen::Index w = t.val(id).cols();
      if (t.needs(id)) t.acc(id) += g.middleCols(off, w);
      off += w;
    }
  });
}

Var Tape::slice_cols(Var x, Eigen::Index begin, Eigen::Index width) {
  const int ix = check(x);
  const Matrix& xv = val(ix);
  if (begin < 0 || width <= 0 || begin + width > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + width) +
                         ") out of range for " + dims(xv));
  }
  const int self = static_cast<int>(nodes_.size());
  return push(xv.middleCols(begin, width), needs(ix), [=](Tape& t) {
    t.acc(ix).middleCols(begin, width) += t.nodes_[self].grad;
  });
}

Var Tape::gather_rows(Var table, std::span<const int> ids) {
  const int it = check(table);
  const Matrix& tv = val(it);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] < 0 || ids[b] >= tv.rows()) {
      throw DomainError("gather_rows: id " + std::to_string(ids[b]) + " outside table of " +
                        std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(b)) = tv.row(ids[b]);
  }
  const int self = static_cast<int>(nodes_.size());
  std::vector<int> idx(ids.begin(), ids.end());
  return push(std::move(out), needs(it), [=, idx = std::move(idx)](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gt = t.acc(it);
    for (std::size_t b = 0; b < idx.size(); ++b) gt.row(idx[b]) += g.row(static_cast<Eigen::Index>(b));
  });
}

Var Tape::select_rows(std::span<const Var> seq, std::span<const int> index) {
  if (seq.empty()) throw DimensionError("select_rows: empty sequence");
  std::vector<int> ids;
  bool rg = false;
  for (Var v : seq) {
    ids.push_back(check(v));
    rg = rg || needs(ids.back());
  }
  const Matrix& first = val(ids[0]);
  if (static_cast<Eigen::Index>(index.size()) != first.rows()) {
    throw DimensionError("select_rows: index count does not match batch rows");
  }
  Matrix out(first.rows(), first.cols());
  std::vector<int> pick(index.begin(), index.end());
  for (std::size_t b = 0; b < pick.size(); ++b) {
    if (pick[b] < 0 || static_cast<std::size_t>(pick[b]) >= ids.size()) {
      throw DomainError("select_rows: position out of range");
    }
    out.row(static_cast<Eigen::Index>(b)) = val(ids[pick[b]]).row(static_cast<Eigen::Index>(b));
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [=, ids = std::move(ids), pick = std::move(pick)](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    for (std::size_t b = 0; b < pick.size(); ++b) {
      const int src = ids[pick[b]];
      if (t.needs(src)) {
        t.acc(src).row(static_cast<Eigen::Index>(b)) += g.row(static_cast<Eigen::Index>(b));
      }
    }
  });
}

Var Tape::max_over(std::span<const Var> seq, const Matrix& valid) {
  if (seq.empty()) throw DimensionError("max_over: empty sequence");
  std::vector<int> ids;
  bool rg = false;
  for (Var v : seq) {
    ids.push_back(check(v));
    rg = rg || needs(ids.back());
  }
  const Matrix& first = val(ids[0]);
  const Eigen::Index rows = first.rows(), cols = first.cols();
  if (valid.rows() != rows || valid.cols() != static_cast<Eigen::Index>(ids.size())) {
    throw DimensionError("max_over: validity mask " + dims(valid) + " does not match sequence");
  }
  Matrix out = Matrix::Constant(rows, cols, -std::numeric_limits<double>::infinity());
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(rows, cols, -1);
  for (std::size_t step = 0; step < ids.size(); ++step) {
    const Matrix& m = val(ids[step]);
    if (m.rows() != rows || m.cols() != cols) throw DimensionError("max_over: ragged sequence");
    for (Eigen::Index b = 0; b < rows; ++b) {
      if (valid(b, static_cast<Eigen::Index>(step)) == 0.0) continue;
      for (Eigen::Index j = 0; j < cols; ++j) {
        if (m(b, j) > out(b, j)) {
          out(b, j) = m(b, j);
          arg(b, j) = static_cast<int>(step);
        }
      }
    }
  }
  for (Eigen::Index b = 0; b < rows; ++b) {
    if (cols > 0 && arg(b, 0) < 0) throw DomainError("max_over: a row has no valid positions");
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [=, ids = std::move(ids), arg = std::move(arg)](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    for (Eigen::Index b = 0; b < rows; ++b) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        const int src = ids[arg(b, j)];
        if (t.needs(src)) t.acc(src)(b, j) += g(b, j);
      }
    }
  });
}

std::pair<Var, Var> Tape::lstm_cell(Var gates, Var s_prev, Var theta_rho, Var theta_phi, Var theta_pi) {
  const int ig = check(gates), is = check(s_prev);
  const int ir = check(theta_rho), iph = check(theta_phi), ipi = check(theta_pi);
  const Matrix& gv = val(ig);
  const Matrix& sp = val(is);
  const Eigen::Index d = sp.cols();
  if (gv.cols() != 4 * d || gv.rows() != sp.rows()) {
    throw DimensionError("lstm_cell: gates " + dims(gv) + " incompatible with state " + dims(sp));
  }
  for (int id : {ir, iph, ipi}) {
    if (val(id).rows() != 1 || val(id).cols() != d) {
      throw DimensionError("lstm_cell: peephole vector " + dims(val(id)) + " must be [1 x " +
                           std::to_string(d) + "]");
    }
  }
  auto sig = [](const Matrix& m) { return Matrix(m.unaryExpr([](double v) { return ffnmt::sigmoid(v); })); };

  const auto trho = val(ir).row(0).array();
  const auto tphi = val(iph).row(0).array();
  const auto tpi = val(ipi).row(0).array();

  Matrix a = gv.middleCols(0, d).array().tanh().matrix();
  Matrix gi = sig((gv.middleCols(d, d).array() + sp.array().rowwise() * trho).matrix());
  Matrix gf = sig((gv.middleCols(2 * d, d).array() + sp.array().rowwise() * tphi).matrix());
  Matrix s = (a.array() * gi.array() + gf.array() * sp.array()).matrix();
  Matrix ts = s.array().tanh().matrix();
  Matrix o = sig((gv.middleCols(3 * d, d).array() + s.array().rowwise() * tpi).matrix());
  Matrix h = (ts.array() * o.array()).matrix();

  const bool rg = needs(ig) || needs(is) || needs(ir) || needs(iph) || needs(ipi);
  const Var s_var = push(s, rg);
  const int s_id = s_var.id;
  const int self = static_cast<int>(nodes_.size());
  const Var h_var = push(std::move(h), rg,
                         [=, a = std::move(a), gi = std::move(gi), gf = std::move(gf),
                          ts = std::move(ts), o = std::move(o)](Tape& t) {
    const Matrix& dh_raw = t.nodes_[self].grad;
    const Matrix& ds_raw = t.nodes_[s_id].grad;
    const Matrix& s_val = t.val(s_id);
    const Matrix& s_prev = t.val(is);
    const Eigen::Index rows = s_val.rows();
    Matrix dh = dh_raw.size() ? dh_raw : Matrix::Zero(rows, d);
    Matrix ds = ds_raw.size() ? ds_raw : Matrix::Zero(rows, d);

    const auto th_rho = t.val(ir).row(0).array();
    const auto th_phi = t.val(iph).row(0).array();
    const auto th_pi = t.val(ipi).row(0).array();

    Matrix dz_pi = (dh.array() * ts.array() * o.array() * (1.0 - o.array())).matrix();
    ds.array() += dh.array() * o.array() * (1.0 - ts.array().square());
    ds.array() += dz_pi.array().rowwise() * th_pi;

    Matrix dz = (ds.array() * gi.array() * (1.0 - a.array().square())).matrix();
    Matrix dz_rho = (ds.array() * a.array() * gi.array() * (1.0 - gi.array())).matrix();
    Matrix dz_phi = (ds.array() * s_prev.array() * gf.array() * (1.0 - gf.array())).matrix();

    if (t.needs(ig)) {
      Matrix& g = t.acc(ig);
      g.middleCols(0, d) += dz;
      g.middleCols(d, d) += dz_rho;
      g.middleCols(2 * d, d) += dz_phi;
      g.middleCols(3 * d, d) += dz_pi;
    }
    if (t.needs(is)) {
      t.acc(is).array() += ds.array() * gf.array() + dz_rho.array().rowwise() * th_rho +
                           dz_phi.array().rowwise() * th_phi;
    }
    if (t.needs(ir)) t.acc(ir) += dz_rho.cwiseProduct(s_prev).colwise().sum();
    if (t.needs(iph)) t.acc(iph) += dz_phi.cwiseProduct(s_prev).colwise().sum();
    if (t.needs(ipi)) t.acc(ipi) += dz_pi.cwiseProduct(s_val).colwise().sum();
  });
  nodes_[h_var.id].companion = s_id;
  return {h_var, s_var};
}

Var Tape::additive_scores(Var query, std::span<const Var> keys, Var v) {
  const int iq = check(query), iv = check(v);
  if (keys.empty()) throw DimensionError("additive_scores: no keys");
  const Matrix& qv = val(iq);
  const Matrix& vv = val(iv);
  if (vv.rows() != 1 || vv.cols() != qv.cols()) {
    throw DimensionError("additive_scores: vector " + dims(vv) + " does not match query " + dims(qv));
  }
  std::vector<int> ids;
  bool rg = needs(iq) || needs(iv);
  std::vector<Matrix> hidden;
  Matrix out(qv.rows(), static_cast<Eigen::Index>(keys.size()));
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const int id = check(keys[k]);
    require_same_shape(qv, val(id), "additive_scores");
    ids.push_back(id);
    rg = rg || needs(id);
    Matrix u = (qv + val(id)).array().tanh().matrix();
    out.col(static_cast<Eigen::Index>(k)) = u * vv.row(0).transpose();
    hidden.push_back(std::move(u));
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [=, ids = std::move(ids), hidden = std::move(hidden)](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const auto vrow = t.val(iv).row(0);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto gk = g.col(static_cast<Eigen::Index>(k));
      const Matrix& u = hidden[k];
      if (t.needs(iv)) t.acc(iv).noalias() += gk.transpose() * u;
      Matrix pre = ((gk * vrow).array() * (1.0 - u.array().square())).matrix();
      if (t.needs(iq)) t.acc(iq) += pre;
      if (t.needs(ids[k])) t.acc(ids[k]) += pre;
    }
  });
}

Var Tape::softmax_rows(Var x, const Matrix& valid) {
  const int ix = check(x);
  const Matrix& xv = val(ix);
  require_same_shape(xv, valid, "softmax_rows");
  Matrix y = Matrix::Zero(xv.rows(), xv.cols());
  for (Eigen::Index b = 0; b < xv.rows(); ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
      if (valid(b, j) == 0.0) continue;
      any = true;
      // NaN wins so that a blown-up score surfaces as a non-finite loss.
      if (std::isnan(xv(b, j)) || xv(b, j) > mx) mx = xv(b, j);
      if (std::isnan(mx)) break;
    }
    if (!any) throw DomainError("softmax_rows: a row has no valid entries");
    double z = 0.0;
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
      if (valid(b, j) != 0.0) {
        y(b, j) = std::exp(xv(b, j) - mx);
        z += y(b, j);
      }
    }
    y.row(b) /= z;
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(y), needs(ix), [=](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& yv = t.val(self);
    Eigen::VectorXd inner = g.cwiseProduct(yv).rowwise().sum();
    t.acc(ix).array() += yv.array() * (g.colwise() - inner).array();
  });
}

Var Tape::weighted_sum(Var alpha, std::span<const Var> values) {
  const int ia = check(alpha);
  const Matrix& av = val(ia);
  if (values.empty() || av.cols() != static_cast<Eigen::Index>(values.size())) {
    throw DimensionError("weighted_sum: weights " + dims(av) + " do not match " +
                         std::to_string(values.size()) + " values");
  }
  std::vector<int> ids;
  bool rg = needs(ia);
  const Matrix& first = val(check(values[0]));
  Matrix out = Matrix::Zero(first.rows(), first.cols());
  for (std::size_t k = 0; k < values.size(); ++k) {
    const int id = check(values[k]);
    const Matrix& m = val(id);
    if (m.rows() != av.rows() || m.cols() != first.cols()) {
      throw DimensionError("weighted_sum: value " + dims(m) + " is ragged");
    }
    ids.push_back(id);
    rg = rg || needs(id);
    out.array() += m.array().colwise() * av.col(static_cast<Eigen::Index>(k)).array();
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), rg, [=, ids = std::move(ids)](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& a = t.val(ia);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      if (t.needs(ia)) t.acc(ia).col(col) += g.cwiseProduct(t.val(ids[k])).rowwise().sum();
      if (t.needs(ids[k])) t.acc(ids[k]).array() += g.array().colwise() * a.col(col).array();
    }
  });
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  const int ix = check(logits);
  const Matrix& xv = val(ix);
  if (static_cast<Eigen::Index>(targets.size()) != xv.rows() || weights.size() != targets.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         dims(xv));
  }
  Matrix probs(xv.rows(), xv.cols());
  double loss = 0.0;
  for (Eigen::Index b = 0; b < xv.rows(); ++b) {
    const int y = targets[static_cast<std::size_t>(b)];
    if (y < 0 || y >= xv.cols()) throw DomainError("cross_entropy: target id out of range");
    const double mx = xv.row(b).maxCoeff();
    probs.row(b) = (xv.row(b).array() - mx).exp().matrix();
    const double z = probs.row(b).sum();
    probs.row(b) /= z;
    const double w = weights[static_cast<std::size_t>(b)];
    if (w != 0.0) loss -= w * (xv(b, y) - mx - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const int self = static_cast<int>(nodes_.size());
  std::vector<int> ys(targets.begin(), targets.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return push(std::move(out), needs(ix),
              [=, probs = std::move(probs), ys = std::move(ys), ws = std::move(ws)](Tape& t) {
    const double g = t.nodes_[self].grad(0, 0);
    Matrix& gx = t.acc(ix);
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
      const double w = ws[static_cast<std::size_t>(b)];
      if (w == 0.0) continue;
      gx.row(b) += (g * w) * probs.row(b);
      gx(b, ys[static_cast<std::size_t>(b)]) -= g * w;
    }
  });
}

Var Tape::sum(Var x) {
  const int ix = check(x);
  Matrix out(1, 1);
  out(0, 0) = val(ix).sum();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(ix), [=](Tape& t) {
    t.acc(ix).array() += t.nodes_[self].grad(0, 0);
  });
}

Var Tape::dot_const(Var x, const Matrix& c) {
  const int ix = check(x);
  require_same_shape(val(ix), c, "dot_const");
  Matrix out(1, 1);
  out(0, 0) = val(ix).cwiseProduct(c).sum();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(ix), [=, c = c](Tape& t) {
    t.acc(ix) += t.nodes_[self].grad(0, 0) * c;
  });
}

void Tape::backward(Var output) {
  if (nodes_.empty()) throw StateError("backward called before any forward computation");
  const Matrix& v = value(output);
  if (v.size() != 1) throw DimensionError("backward: output is not a scalar, got " + dims(v));
  backward(output, Matrix::Ones(1, 1));
}

void Tape::backward(Var output, const Matrix& seed) {
  if (nodes_.empty()) throw StateError("backward called before any forward computation");
  const int out = check(output);
  require_same_shape(val(out), seed, "backward seed");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[out].requires_grad) {
    backward_done_ = true;
    return;
  }
  acc(out) += seed;
  for (int i = out; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    // Multi-output primitives also run when only the companion output has a gradient.
    const bool companion_live = n.companion >= 0 && nodes_[n.companion].grad.size() != 0;
    if (n.grad.size() == 0 && !companion_live) continue;
    n.backward(*this);
  }
  backward_done_ = true;
}

}  // namespace ffnmt
