#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffnmt/trainer.hpp"

namespace ffnmt {

struct ProbeConfig {
  int depth = 9;
  std::size_t cell_width = 8;
  std::size_t input_width = 8;
  std::size_t length = 20;
  int trials = 20;
  std::uint64_t seed = 1;
  /// Deviation of every parameter, recurrent ones included.
  double init_std = kInitStddev;

  void validate() const;
};

struct ProbeRow {
  int layer = 0;
  std::string group;  // "<ff|noff>/<W_f|W_r|theta>"
  double norm = 0.0;
  int trial = 0;
};

struct ProbeReport {
  ProbeConfig config;
  std::vector<ProbeRow> rows;
  /// Bottom-layer ||dL/dW_f|| with F-F over the same without, per trial.
  std::vector<double> ratios;
  double median_ratio = 0.0;
  int nonfinite_events = 0;
};

/// Runs matched stacks with and without F-F connections on random input.
/// The no-F-F stack uses the h columns of the F-F stack's W_f, so the two
/// differ only in the fast-forward path.
ProbeReport gradient_probe(const ProbeConfig& config);

/// CSV with header "layer,group,norm,trial".
std::string probe_csv(const ProbeReport& report);

}  // namespace ffnmt
