#pragma once

#include <cstdint>
#include <string>

#include "ffnmt/model.hpp"

namespace ffnmt {

struct GradcheckConfig {
  ModelConfig model;
  int instances = 10;
  std::size_t source_length = 4;
  std::size_t target_length = 4;  // before the end mark
  std::uint64_t seed = 1;
  /// Deviation of every parameter, recurrent ones included, so that all
  /// paths carry gradient.
  double init_std = 0.3;
  double step = 1e-4;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  long checked = 0;
  int instances = 0;
};

/// |a - n| / max(|a|, |n|, floor): relative where the gradient is
/// resolvable, absolute below `floor`.
double gradient_relative_error(double analytic, double numeric, double floor = 1e-4);

/// Compares tape gradients of the dropout-free sequence loss with central
/// differences on random instances of the configured model.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

/// A tiny default model (n_e = n_d = 2, d = 4, emb = 4, vocab 20).
ModelConfig gradcheck_model(Variant variant);

}  // namespace ffnmt
