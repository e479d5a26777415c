#pragma once

#include <string>

#include "ffnmt/tensor.hpp"

namespace ffnmt {

/// What a parameter does in the network. Drives learning-rate routing
/// (recurrent vs. everything else) and the L2 exemption for embeddings.
enum class ParamRole { recurrent, feedforward, embedding, projection, alignment, output };

const char* role_name(ParamRole role);

struct Parameter {
  std::string name;
  Tensor value;
  ParamRole role = ParamRole::feedforward;

  bool recurrent() const { return role == ParamRole::recurrent; }
  bool regularized() const { return role != ParamRole::embedding; }
};

enum class Direction { forward, backward };

// The per-layer parameter layout is shared by several element types:
// Parameter (the model), Var (a model bound to a tape), Matrix (gradients
// and optimizer moments). Visitation order is fixed and defines the
// canonical parameter order used by checkpoints and optimizers.

template <class T>
struct LstmSlots {
  T w_r;
  T theta_rho;
  T theta_phi;
  T theta_pi;
};

template <class T>
struct LayerSlots {
  T w_f;
  LstmSlots<T> lstm;
  Direction direction = Direction::forward;
  int index = 1;
};

template <class F, class... S>
void zip_lstm(F&& f, S&... slots) {
  f(slots.w_r...);
  f(slots.theta_rho...);
  f(slots.theta_phi...);
  f(slots.theta_pi...);
}

template <class F, class... S>
void zip_layer(F&& f, S&... slots) {
  f(slots.w_f...);
  zip_lstm(f, slots.lstm...);
}

template <class U, class T, class Fn>
LstmSlots<U> transform_lstm(const LstmSlots<T>& in, Fn&& fn) {
  return {fn(in.w_r), fn(in.theta_rho), fn(in.theta_phi), fn(in.theta_pi)};
}

template <class U, class T, class Fn>
LayerSlots<U> transform_layer(const LayerSlots<T>& in, Fn&& fn) {
  LayerSlots<U> out;
  out.w_f = fn(in.w_f);
  out.lstm = transform_lstm<U>(in.lstm, fn);
  out.direction = in.direction;
  out.index = in.index;
  return out;
}

}  // namespace ffnmt
