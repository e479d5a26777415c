#pragma once

#include <span>
#include <string>
#include <vector>

#include "ffnmt/params.hpp"
#include "ffnmt/rng.hpp"
#include "ffnmt/tape.hpp"
#include "ffnmt/tensor.hpp"

namespace ffnmt {

using LstmParams = LstmSlots<Parameter>;
using LayerParams = LayerSlots<Parameter>;
using BoundLstm = LstmSlots<Var>;
using BoundLayer = LayerSlots<Var>;

struct LstmState {
  Tensor h;
  Tensor s;
};

enum class DirectionScheme { interleaved, all_forward };

struct StackConfig {
  int depth = 1;
  std::size_t cell_width = 0;
  /// Width of x_t feeding layer 1.
  std::size_t input_width = 0;
  bool ff_enabled = true;
  DirectionScheme scheme = DirectionScheme::interleaved;
  double dropout = 0.0;
  /// Scan direction of layer 1; interleaved stacks alternate from here.
  Direction first = Direction::forward;

  void validate() const;
};

/// Layer k (1-based) scans forward when the direction term (-1)^k selects
/// the neighbour t-1. With first == forward, odd layers scan forward and
/// even layers backward.
Direction layer_direction(const StackConfig& config, int k);

/// Input width of W_f for layer k: input_width at k = 1, 3d with F-F
/// (Half(f) is 2d wide, h is d wide), d without.
std::size_t layer_input_width(const StackConfig& config, int k);

/// Zero-valued parameters for one layer, named under `prefix`.
LayerParams make_layer_params(const std::string& prefix, const StackConfig& config, int k);
std::vector<LayerParams> make_stack_params(const std::string& prefix, const StackConfig& config);

BoundLayer bind_layer(Tape& tape, const LayerParams& layer);

// ---- tape-level building blocks -------------------------------------------

/// One peephole LSTM step: (f_t + W_r h_prev) -> fused cell. Returns (h, s).
std::pair<Var, Var> lstm_step(Tape& tape, Var f, Var h_prev, Var s_prev, const BoundLstm& params);

/// Feed-forward input of layer k > 1. With F-F enabled this is
/// W_f [Half(f_prev), Dr(h_prev)]; without it, W_f Dr(h_prev).
/// `dropout` is an inverted-dropout mask for h_prev, or nullptr.
Var ff_project(Tape& tape, Var f_prev, Var h_prev, Var w_f, const Matrix* dropout, bool ff_enabled);

struct LayerTrace {
  std::vector<Var> f;
  std::vector<Var> h;
  std::vector<Var> s;
};

/// Runs the stacked recurrence over time-major inputs ([B x in] per step).
/// `valid` ([B x T], optional) zeroes states at padded positions so that
/// backward scans start from the zero state at each row's last token.
/// Dropout masks are drawn from `rng` when it is non-null and dropout > 0.
std::vector<LayerTrace> stack_forward(Tape& tape, std::span<const Var> inputs, const StackConfig& config,
                                      std::span<const BoundLayer> layers, const Matrix* valid,
                                      SeededRng* rng);

// ---- value-level operations ------------------------------------------------

LstmState lstm_step(const Tensor& f, const LstmState& prev, const LstmParams& params);

/// `mask` multiplies h_prev elementwise (use all ones for evaluation).
Tensor ff_project(const Tensor& f_prev, const Tensor& h_prev, const LayerParams& layer, const Tensor& mask,
                  bool ff_enabled = true);

struct LayerOutputs {
  std::vector<Tensor> f;
  std::vector<Tensor> h;
  std::vector<Tensor> s;
};

std::vector<LayerOutputs> stack_forward(const std::vector<Tensor>& inputs, const StackConfig& config,
                                        const std::vector<LayerParams>& params, SeededRng* rng = nullptr);

}  // namespace ffnmt
