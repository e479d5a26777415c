#include "ffnmt/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ffnmt/errors.hpp"
#include "ffnmt/recurrent.hpp"

namespace ffnmt {
namespace {

void fill_normal(Parameter& p, SeededRng& rng, double sd) {
  for (double& x : p.value.data()) x = rng.normal(0.0, sd);
}

struct StackGrads {
  std::vector<double> w_f, w_r, theta;  // per layer
  bool finite = true;
};

StackGrads run_stack(const StackConfig& sc, const std::vector<LayerParams>& layers, const std::vector<Matrix>& inputs,
                     const std::vector<Matrix>& directions) {
  Tape tape;
  std::vector<Var> xs;
  for (const Matrix& x : inputs) xs.push_back(tape.constant(x));
  std::vector<BoundLayer> bound;
  for (const LayerParams& p : layers) bound.push_back(bind_layer(tape, p));
  const auto trace = stack_forward(tape, xs, sc, bound, nullptr, nullptr);
  Var loss;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Var term = tape.dot_const(trace.back().h[t], directions[t]);
    loss = loss.valid() ? tape.add(loss, term) : term;
  }
  StackGrads out;
  out.finite = std::isfinite(tape.value(loss)(0, 0));
  tape.backward(loss);
  for (const BoundLayer& b : bound) {
    const Matrix gf = tape.grad(b.w_f), gr = tape.grad(b.lstm.w_r);
    const double theta = std::sqrt(tape.grad(b.lstm.theta_rho).squaredNorm() + tape.grad(b.lstm.theta_phi).squaredNorm() +
                                   tape.grad(b.lstm.theta_pi).squaredNorm());
    out.w_f.push_back(gf.norm());
    out.w_r.push_back(gr.norm());
    out.theta.push_back(theta);
    out.finite = out.finite && std::isfinite(out.w_f.back()) && std::isfinite(out.w_r.back()) && std::isfinite(theta);
  }
  return out;
}

}  // namespace

void ProbeConfig::validate() const {
  if (depth < 2) throw ConfigError("gradient probe needs depth >= 2 (a depth-1 stack has no F-F path to compare)");
  if (cell_width == 0 || input_width == 0 || length == 0) throw ConfigError("probe widths and length must be positive");
  if (trials < 1) throw ConfigError("probe needs at least one trial");
  if (!(init_std >= 0.0)) throw ConfigError("probe init deviation must be >= 0");
}

ProbeReport gradient_probe(const ProbeConfig& config) {
  config.validate();
  ProbeReport report;
  report.config = config;
  StackConfig ff;
  ff.depth = config.depth;
  ff.cell_width = config.cell_width;
  ff.input_width = config.input_width;
  ff.ff_enabled = true;
  StackConfig noff = ff;
  noff.ff_enabled = false;
  const Eigen::Index d = static_cast<Eigen::Index>(config.cell_width);
  const SeededRng root(config.seed);

  for (int trial = 0; trial < config.trials; ++trial) {
    SeededRng rng = root.derive(static_cast<std::uint64_t>(trial));
    std::vector<LayerParams> ff_layers = make_stack_params("probe", ff);
    for (LayerParams& layer : ff_layers) {
      zip_layer([&](Parameter& p) { fill_normal(p, rng, config.init_std); }, layer);
    }
    std::vector<LayerParams> noff_layers = make_stack_params("probe", noff);
    for (std::size_t k = 0; k < ff_layers.size(); ++k) {
      noff_layers[k].lstm = ff_layers[k].lstm;
      const Matrix& w = ff_layers[k].w_f.value.mat();
      // Layer 1 is shared as is; above it keep only the h columns.
      noff_layers[k].w_f.value.mat() = k == 0 ? w : Matrix(w.rightCols(d));
    }
    std::vector<Matrix> inputs, directions;
    for (std::size_t t = 0; t < config.length; ++t) {
      Matrix x(1, static_cast<Eigen::Index>(config.input_width));
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(0, j) = rng.normal();
      inputs.push_back(std::move(x));
    }
    for (std::size_t t = 0; t < config.length; ++t) {
      Matrix c(1, d);
      for (Eigen::Index j = 0; j < d; ++j) c(0, j) = rng.normal();
      directions.push_back(std::move(c));
    }

    const StackGrads with = run_stack(ff, ff_layers, inputs, directions);
    const StackGrads without = run_stack(noff, noff_layers, inputs, directions);
    report.nonfinite_events += (with.finite ? 0 : 1) + (without.finite ? 0 : 1);
    auto emit = [&](const char* prefix, const StackGrads& g) {
      for (int k = 0; k < config.depth; ++k) {
        const auto i = static_cast<std::size_t>(k);
        report.rows.push_back({k + 1, std::string(prefix) + "/W_f", g.w_f[i], trial});
        report.rows.push_back({k + 1, std::string(prefix) + "/W_r", g.w_r[i], trial});
        report.rows.push_back({k + 1, std::string(prefix) + "/theta", g.theta[i], trial});
      }
    };
    emit("ff", with);
    emit("noff", without);
    report.ratios.push_back(with.w_f.front() / without.w_f.front());
  }

  std::vector<double> sorted = report.ratios;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  report.median_ratio = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return report;
}

std::string probe_csv(const ProbeReport& report) {
  std::string out = "layer,group,norm,trial\n";
  char buf[64];
  for (const ProbeRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.norm);
    out += std::to_string(r.layer) + ',' + r.group + ',' + buf + ',' + std::to_string(r.trial) + '\n';
  }
  return out;
}

}  // namespace ffnmt
