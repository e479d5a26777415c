#include "ffnmt/recurrent.hpp"

#include "ffnmt/errors.hpp"

namespace ffnmt {
namespace {

Tensor row_tensor(const Matrix& m) {
  return Tensor::from_matrix({static_cast<std::size_t>(m.cols())}, m);
}

Matrix as_row(const Tensor& t, std::size_t width, const char* what) {
  if (t.size() != width) {
    throw DimensionError(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                         shape_string(t.shape()));
  }
  Matrix m = t.mat();
  m.resize(1, static_cast<Eigen::Index>(width));
  return m;
}

}  // namespace

void StackConfig::validate() const {
  if (depth < 1) throw ConfigError("stack depth must be >= 1");
  if (cell_width == 0) throw ConfigError("cell width must be positive");
  if (input_width == 0) throw ConfigError("stack input width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

Direction layer_direction(const StackConfig& config, int k) {
  if (config.scheme == DirectionScheme::all_forward) return Direction::forward;
  const bool flipped = (k % 2) == 0;
  if (!flipped) return config.first;
  return config.first == Direction::forward ? Direction::backward : Direction::forward;
}

std::size_t layer_input_width(const StackConfig& config, int k) {
  if (k == 1) return config.input_width;
  return config.ff_enabled ? 3 * config.cell_width : config.cell_width;
}

LayerParams make_layer_params(const std::string& prefix, const StackConfig& config, int k) {
  const std::size_t d = config.cell_width;
  const std::string base = prefix + ".layer" + std::to_string(k) + ".";
  LayerParams layer;
  layer.w_f = {base + "W_f", Tensor({4 * d, layer_input_width(config, k)}), ParamRole::feedforward};
  layer.lstm.w_r = {base + "W_r", Tensor({4 * d, d}), ParamRole::recurrent};
  layer.lstm.theta_rho = {base + "theta_rho", Tensor({d}), ParamRole::recurrent};
  layer.lstm.theta_phi = {base + "theta_phi", Tensor({d}), ParamRole::recurrent};
  layer.lstm.theta_pi = {base + "theta_pi", Tensor({d}), ParamRole::recurrent};
  layer.direction = layer_direction(config, k);
  layer.index = k;
  return layer;
}

std::vector<LayerParams> make_stack_params(const std::string& prefix, const StackConfig& config) {
  config.validate();
  std::vector<LayerParams> layers;
  for (int k = 1; k <= config.depth; ++k) layers.push_back(make_layer_params(prefix, config, k));
  return layers;
}

BoundLayer bind_layer(Tape& tape, const LayerParams& layer) {
  return transform_layer<Var>(layer, [&](const Parameter& p) { return tape.parameter(p.value.mat()); });
}

std::pair<Var, Var> lstm_step(Tape& tape, Var f, Var h_prev, Var s_prev, const BoundLstm& params) {
  const Matrix& fv = tape.value(f);
  const Matrix& hv = tape.value(h_prev);
  if (fv.cols() != 4 * hv.cols() || tape.value(s_prev).cols() != hv.cols()) {
    throw DimensionError("lstm_step: f width " + std::to_string(fv.cols()) + " must be 4x state width " +
                         std::to_string(hv.cols()));
  }
  Var gates = tape.add(f, tape.linear(h_prev, params.w_r));
  return tape.lstm_cell(gates, s_prev, params.theta_rho, params.theta_phi, params.theta_pi);
}

Var ff_project(Tape& tape, Var f_prev, Var h_prev, Var w_f, const Matrix* dropout, bool ff_enabled) {
  Var h_in = dropout ? tape.mul_const(h_prev, *dropout) : h_prev;
  if (!ff_enabled) return tape.linear(h_in, w_f);
  const Eigen::Index half = tape.value(f_prev).cols() / 2;
  const Var parts[] = {tape.slice_cols(f_prev, 0, half), h_in};
  return tape.linear(tape.concat_cols(parts), w_f);
}

std::vector<LayerTrace> stack_forward(Tape& tape, std::span<const Var> inputs, const StackConfig& config,
                                      std::span<const BoundLayer> layers, const Matrix* valid,
                                      SeededRng* rng) {
  config.validate();
  if (inputs.empty()) throw DomainError("stack_forward: empty input sequence");
  if (static_cast<int>(layers.size()) != config.depth) {
    throw ConfigError("stack_forward: " + std::to_string(layers.size()) + " layer parameter sets for depth " +
                      std::to_string(config.depth));
  }
  const std::size_t steps = inputs.size();
  const Eigen::Index rows = tape.value(inputs[0]).rows();
  const Eigen::Index d = static_cast<Eigen::Index>(config.cell_width);
  if (valid && (valid->rows() != rows || valid->cols() != static_cast<Eigen::Index>(steps))) {
    throw DimensionError("stack_forward: validity mask does not match batch");
  }

  std::vector<LayerTrace> trace(layers.size());
  const Var zero = tape.constant(Matrix::Zero(rows, d));
  for (int k = 1; k <= config.depth; ++k) {
    const BoundLayer& layer = layers[static_cast<std::size_t>(k - 1)];
    const Direction dir = layer_direction(config, k);
    if (layer.direction != dir) {
      throw ConfigError("stack_forward: layer " + std::to_string(k) + " direction disagrees with the stack scheme");
    }
    LayerTrace& out = trace[static_cast<std::size_t>(k - 1)];
    out.f.resize(steps);
    out.h.resize(steps);
    out.s.resize(steps);
    if (k == 1) {
      for (std::size_t t = 0; t < steps; ++t) out.f[t] = tape.linear(inputs[t], layer.w_f);
    } else {
      const LayerTrace& below = trace[static_cast<std::size_t>(k - 2)];
      const bool drop = rng != nullptr && config.dropout > 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        Matrix mask;
        if (drop) mask = dropout_matrix(rows, d, config.dropout, *rng);
        out.f[t] = ff_project(tape, below.f[t], below.h[t], layer.w_f, drop ? &mask : nullptr,
                              config.ff_enabled);
      }
    }
    Var h = zero, s = zero;
    for (std::size_t i = 0; i < steps; ++i) {
      const std::size_t t = dir == Direction::forward ? i : steps - 1 - i;
      std::tie(h, s) = lstm_step(tape, out.f[t], h, s, layer.lstm);
      if (valid) {
        const Matrix col = valid->col(static_cast<Eigen::Index>(t));
        h = tape.mul_const(h, col);
        s = tape.mul_const(s, col);
      }
      out.h[t] = h;
      out.s[t] = s;
    }
  }
  return trace;
}

LstmState lstm_step(const Tensor& f, const LstmState& prev, const LstmParams& params) {
  const std::size_t d = params.theta_rho.value.size();
  if (params.w_r.value.rank() != 2 || params.w_r.value.shape()[0] != 4 * d ||
      params.w_r.value.shape()[1] != d) {
    throw DimensionError("lstm_step: W_r must be [4d x d], got " + shape_string(params.w_r.value.shape()));
  }
  Tape tape;
  const Var fv = tape.constant(as_row(f, 4 * d, "lstm_step f"));
  const Var hv = tape.constant(as_row(prev.h, d, "lstm_step h"));
  const Var sv = tape.constant(as_row(prev.s, d, "lstm_step s"));
  const BoundLstm bound = transform_lstm<Var>(params, [&](const Parameter& p) { return tape.parameter(p.value.mat()); });
  auto [h, s] = lstm_step(tape, fv, hv, sv, bound);
  return {row_tensor(tape.value(h)), row_tensor(tape.value(s))};
}

Tensor ff_project(const Tensor& f_prev, const Tensor& h_prev, const LayerParams& layer, const Tensor& mask,
                  bool ff_enabled) {
  if (layer.index <= 1) {
    throw DomainError("ff_project: layer 1 takes the input projection, not the fast-forward path");
  }
  const std::size_t d = layer.lstm.theta_rho.value.size();
  Tape tape;
  const Var fv = tape.constant(as_row(f_prev, 4 * d, "ff_project f_prev"));
  const Var hv = tape.constant(as_row(h_prev, d, "ff_project h_prev"));
  const Matrix m = as_row(mask, d, "ff_project mask");
  const Var w = tape.parameter(layer.w_f.value.mat());
  const std::size_t expected = ff_enabled ? 3 * d : d;
  if (layer.w_f.value.shape()[1] != expected) {
    throw DimensionError("ff_project: W_f " + shape_string(layer.w_f.value.shape()) + " expects input width " +
                         std::to_string(expected));
  }
  return row_tensor(tape.value(ff_project(tape, fv, hv, w, &m, ff_enabled)));
}

std::vector<LayerOutputs> stack_forward(const std::vector<Tensor>& inputs, const StackConfig& config,
                                        const std::vector<LayerParams>& params, SeededRng* rng) {
  if (inputs.empty()) throw DomainError("stack_forward: empty input sequence");
  Tape tape;
  std::vector<Var> xs;
  for (const Tensor& x : inputs) xs.push_back(tape.constant(as_row(x, config.input_width, "stack_forward input")));
  std::vector<BoundLayer> bound;
  for (const LayerParams& p : params) bound.push_back(bind_layer(tape, p));
  auto trace = stack_forward(tape, xs, config, bound, nullptr, rng);
  std::vector<LayerOutputs> out(trace.size());
  for (std::size_t k = 0; k < trace.size(); ++k) {
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      out[k].f.push_back(row_tensor(tape.value(trace[k].f[t])));
      out[k].h.push_back(row_tensor(tape.value(trace[k].h[t])));
      out[k].s.push_back(row_tensor(tape.value(trace[k].s[t])));
    }
  }
  return out;
}

}  // namespace ffnmt
