#include "ffnmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ffnmt/corpus.hpp"
#include "ffnmt/errors.hpp"

namespace ffnmt {

double gradient_relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

ModelConfig gradcheck_model(Variant variant) {
  ModelConfig c;
  c.variant = variant;
  c.n_e = 2;
  c.n_d = 2;
  c.cell_width = 4;
  c.emb_dim = 4;
  c.src_vocab_size = 20;
  c.tgt_vocab_size = 20;
  c.dropout = 0.0;
  return c;
}

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  ModelConfig mc = config.model;
  mc.dropout = 0.0;
  mc.validate();
  if (config.instances < 1) throw ConfigError("gradcheck needs at least one instance");
  if (config.source_length == 0) throw ConfigError("gradcheck source length must be positive");
  if (mc.tgt_vocab_size <= static_cast<std::size_t>(kReservedIds) ||
      mc.src_vocab_size <= static_cast<std::size_t>(kReservedIds)) {
    throw ConfigError("gradcheck vocabularies must exceed the reserved ids");
  }

  GradcheckReport report;
  report.instances = config.instances;
  const SeededRng root(config.seed);
  for (int inst = 0; inst < config.instances; ++inst) {
    SeededRng rng = root.derive(static_cast<std::uint64_t>(inst));
    ModelParams params = make_model_params(mc);
    zip_model([&](Parameter& p) {
      for (double& x : p.value.data()) x = rng.normal(0.0, config.init_std);
    }, params);
    auto draw = [&](std::size_t n, std::size_t vocab) {
      std::vector<int> ids(n);
      for (int& id : ids) id = kReservedIds + static_cast<int>(rng.uniform_index(vocab - kReservedIds));
      return ids;
    };
    const std::vector<std::vector<int>> src{draw(config.source_length, mc.src_vocab_size)};
    std::vector<std::vector<int>> tgt{draw(config.target_length, mc.tgt_vocab_size)};
    tgt[0].push_back(kEndId);
    const PaddedIds ps = pad_sequences(src, kPadId);
    const PaddedIds pt = pad_sequences(tgt, kPadId);

    auto loss_value = [&] {
      Tape tape;
      const BoundModel bound = bind_model(tape, params);
      return tape.value(sequence_loss(tape, bound, mc, ps, pt, nullptr).loss)(0, 0);
    };

    Tape tape;
    const BoundModel bound = bind_model(tape, params);
    const Var loss = sequence_loss(tape, bound, mc, ps, pt, nullptr).loss;
    tape.backward(loss);
    const Gradients grads = collect_gradients(tape, bound);

    zip_model(
        [&](Parameter& p, const Matrix& g) {
          auto values = p.value.data();
          for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + config.step;
            const double up = loss_value();
            values[i] = saved - config.step;
            const double down = loss_value();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * config.step);
            const double err = gradient_relative_error(g.data()[i], numeric);
            ++report.checked;
            if (!(err <= report.max_relative_error)) {
              report.max_relative_error = err;
              report.worst_parameter = p.name;
            }
          }
        },
        params, grads);
  }
  return report;
}

}  // namespace ffnmt
