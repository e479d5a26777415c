#include "ffnmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "ffnmt/checkpoint.hpp"
#include "ffnmt/errors.hpp"
#include "ffnmt/evaluator.hpp"
#include "ffnmt/generator.hpp"

namespace ffnmt {

void TrainConfig::validate() const {
  if (!(lr_recurrent > 0.0)) throw ConfigError("lr_recurrent must be > 0");
  if (!(lr_nonrecurrent > 0.0)) throw ConfigError("lr_nonrecurrent must be > 0");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (max_updates < 0 || checkpoint_every < 0 || eval_every < 0) {
    throw ConfigError("step counts must be non-negative");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (abort_after_nonfinite < 0 || patience < 0) throw ConfigError("abort_after_nonfinite and patience must be >= 0");
  if (eval_beam == 0) throw ConfigError("eval_beam must be >= 1");
  if (!(recurrent_init_std >= 0.0) || !(init_std >= 0.0)) throw ConfigError("init deviations must be >= 0");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

ModelParams init_params(const ModelConfig& config, SeededRng& rng, double recurrent_std, double init_std) {
  ModelParams params = make_model_params(config);
  zip_model(
      [&](Parameter& p) {
        const double sd = p.recurrent() ? recurrent_std : init_std;
        if (sd == 0.0) return;  // already zero; no draws
        for (double& x : p.value.data()) x = rng.normal(0.0, sd);
      },
      params);
  return params;
}

OptimState make_optim_state(const ModelParams& params) {
  return {zero_gradients(params), zero_gradients(params), 0};
}

void adam_step(ModelParams& params, const Gradients& grads, OptimState& state, const TrainConfig& config) {
  const long t = state.step + 1;
  const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(t));
  // Validate every shape before touching anything.
  zip_model(
      [&](const Parameter& p, const Matrix& g, const Matrix& m, const Matrix& v) {
        const Matrix& w = p.value.mat();
        if (g.rows() != w.rows() || g.cols() != w.cols() || m.rows() != w.rows() || m.cols() != w.cols() ||
            v.rows() != w.rows() || v.cols() != w.cols()) {
          throw DimensionError("adam_step: gradient or moment shape differs from parameter '" + p.name + "'");
        }
      },
      params, grads, state.first_moment, state.second_moment);
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  zip_model(
      [&](Parameter& p, const Matrix& g, Matrix& m, Matrix& v) {
        Matrix& w = p.value.mat();
        Matrix eff = g;
        if (p.regularized() && config.l2 != 0.0) eff += config.l2 * w;
        m = b1 * m + (1.0 - b1) * eff;
        v = b2 * v + (1.0 - b2) * eff.cwiseProduct(eff);
        const double lr = p.recurrent() ? config.lr_recurrent : config.lr_nonrecurrent;
        if (lr == 0.0) return;
        w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.adam_eps);
      },
      params, grads, state.first_moment, state.second_moment);
  state.step = t;
}

Batching make_batches(const EncodedCorpus& corpus, std::size_t batch_size, SeededRng& rng, std::size_t max_length) {
  if (corpus.size() == 0) throw InputError("make_batches: empty corpus");
  if (batch_size == 0) throw ConfigError("make_batches: batch_size must be positive");
  Batching out;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const bool too_long =
        max_length && (corpus.source[i].size() > max_length || corpus.target[i].size() > max_length + 1);
    if (too_long || corpus.source[i].empty() || corpus.target[i].empty()) {
      ++out.skipped;
      continue;
    }
    order.push_back(i);
  }
  rng.shuffle(std::span<std::size_t>(order));

  // Sort within pools of consecutive shuffled entries so that batches hold
  // similar lengths while the corpus order stays random.
  const std::size_t pool = batch_size * 20;
  for (std::size_t begin = 0; begin < order.size(); begin += pool) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + pool));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      if (corpus.source[a].size() != corpus.source[b].size()) return corpus.source[a].size() < corpus.source[b].size();
      return corpus.target[a].size() < corpus.target[b].size();
    });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(std::min<std::size_t>(batch_size, last - it))) {
      Batch batch;
      const auto stop = it + static_cast<std::ptrdiff_t>(std::min<std::size_t>(batch_size, last - it));
      batch.indices.assign(it, stop);
      std::vector<std::vector<int>> src, tgt;
      for (std::size_t i : batch.indices) {
        src.push_back(corpus.source[i]);
        tgt.push_back(corpus.target[i]);
      }
      batch.source = pad_sequences(src, kPadId);
      batch.target = pad_sequences(tgt, kPadId);
      out.batches.push_back(std::move(batch));
    }
  }
  rng.shuffle(std::span<Batch>(out.batches));
  return out;
}

GradientResult compute_gradients(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                                 SeededRng* dropout_rng) {
  Tape tape;
  const BoundModel bound = bind_model(tape, params);
  const BatchLoss bl = sequence_loss(tape, bound, config, batch.source, batch.target, dropout_rng);
  GradientResult out;
  out.loss = tape.value(bl.loss)(0, 0);
  out.tokens = bl.tokens;
  for (const auto& row : bl.correct) out.correct += std::count(row.begin(), row.end(), true);
  if (std::isfinite(out.loss)) {
    tape.backward(bl.loss);
    out.grads = collect_gradients(tape, bound);
  } else {
    out.grads = zero_gradients(params);
  }
  return out;
}

EvalResult evaluate_corpus(const ModelParams& params, const ModelConfig& config, const EncodedCorpus& corpus,
                           std::size_t batch_size) {
  if (corpus.size() == 0) throw InputError("evaluate_corpus: empty corpus");
  if (batch_size == 0) batch_size = 1;
  EvalResult out;
  for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
    const std::size_t end = std::min(corpus.size(), begin + batch_size);
    const std::span<const std::vector<int>> src(corpus.source.data() + begin, end - begin);
    const std::span<const std::vector<int>> tgt(corpus.target.data() + begin, end - begin);
    const PaddedIds ps = pad_sequences(src, kPadId);
    const PaddedIds pt = pad_sequences(tgt, kPadId);
    Tape tape;
    const BoundModel bound = bind_model(tape, params);
    const BatchLoss bl = sequence_loss(tape, bound, config, ps, pt, nullptr);
    out.loss += tape.value(bl.loss)(0, 0);
    out.tokens += bl.tokens;
    for (const auto& row : bl.correct) out.correct += std::count(row.begin(), row.end(), true);
  }
  return out;
}

bool gradients_finite(const Gradients& grads) {
  bool ok = true;
  zip_model([&](const Matrix& g) { ok = ok && g.allFinite(); }, grads);
  return ok;
}

std::string metrics_header() { return "step,loss,lr_recurrent,lr_nonrecurrent,events,dev_ter,dev_bleu"; }

std::string format_metric(const MetricRow& row) {
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  std::string line = std::to_string(row.step) + ',' + num(row.loss) + ',' + num(row.lr_recurrent) + ',' +
                     num(row.lr_nonrecurrent) + ',' + row.events + ',';
  if (row.dev_ter) line += num(*row.dev_ter);
  line += ',';
  if (row.dev_bleu) line += num(*row.dev_bleu);
  return line;
}

namespace {

TokenLine id_tokens(std::span<const int> ids, const Vocabularies* vocabs) {
  TokenLine out;
  for (int id : ids) {
    if (id == kEndId) break;
    out.push_back(vocabs && vocabs->target.size() > static_cast<std::size_t>(kReservedIds)
                      ? vocabs->target.token(id)
                      : std::to_string(id));
  }
  return out;
}

double dev_bleu(const ModelParams& params, const ModelConfig& config, const EncodedCorpus& dev,
                const TrainConfig& tc, const Vocabularies* vocabs) {
  BeamConfig beam;
  beam.beam_size = tc.eval_beam;
  const ModelRef ref{&params, &config};
  const auto hyps = translate_corpus(dev.source, std::span<const ModelRef>(&ref, 1), beam, tc.jobs);
  std::vector<TokenLine> cand, refs;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    cand.push_back(id_tokens(hyps[i].output(), vocabs));
    refs.push_back(id_tokens(dev.target[i], vocabs));
  }
  return bleu(cand, refs).bleu;
}

}  // namespace

TrainResult train(const ModelConfig& model_config, const TrainConfig& tc, const EncodedCorpus& corpus,
                  const EncodedCorpus* dev, const Vocabularies* vocabs, const TrainHooks& hooks) {
  tc.validate();
  ModelConfig config = model_config;
  config.dropout = tc.dropout;
  config.validate();
  if (corpus.size() == 0) throw InputError("train: empty training corpus");
  if (dev && dev->size() == 0) dev = nullptr;

  const SeededRng root(tc.seed);
  SeededRng init_rng = root.derive(1);
  SeededRng batch_rng = root.derive(2);
  SeededRng dropout_rng = root.derive(3);

  TrainResult result;
  result.params = init_params(config, init_rng, tc.recurrent_init_std, tc.init_std);
  result.best_params = result.params;
  OptimState opt = make_optim_state(result.params);

  const Vocabulary empty_vocab;
  const Vocabulary& src_vocab = vocabs ? vocabs->source : empty_vocab;
  const Vocabulary& tgt_vocab = vocabs ? vocabs->target : empty_vocab;

  std::ofstream metrics;
  if (!tc.output_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(tc.output_dir, ec);
    if (ec) throw InputError("cannot create output directory " + tc.output_dir.string() + ": " + ec.message());
    metrics.open(tc.output_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw InputError("cannot write " + (tc.output_dir / "metrics.csv").string());
    metrics << metrics_header() << '\n';
  }
  auto log_row = [&](const MetricRow& row) {
    result.metrics.push_back(row);
    if (metrics.is_open()) metrics << format_metric(row) << '\n' << std::flush;
  };
  auto save = [&](const std::filesystem::path& name, const ModelParams& p) {
    if (tc.output_dir.empty()) return;
    const auto path = tc.output_dir / name;
    save_checkpoint(path, config, p, src_vocab, tgt_vocab);
    result.checkpoints.push_back(path);
  };

  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::optional<double> best_bleu;
  int stale_evals = 0;
  bool stop = false;

  // Returns true when early stopping triggers.
  auto evaluate = [&](MetricRow& row) -> bool {
    if (!dev) return false;
    const EvalResult er = evaluate_corpus(result.params, config, *dev);
    row.dev_ter = er.token_error_rate();
    if (tc.eval_bleu) row.dev_bleu = dev_bleu(result.params, config, *dev, tc, vocabs);
    const double dev_loss = er.tokens ? er.loss / static_cast<double>(er.tokens) : er.loss;
    const bool better_bleu = row.dev_bleu && (!best_bleu || *row.dev_bleu > *best_bleu);
    const bool better_loss = dev_loss < best_dev_loss;
    if (better_bleu || (!tc.eval_bleu && better_loss)) {
      if (row.dev_bleu) best_bleu = row.dev_bleu;
      result.best_params = result.params;
    }
    if (better_loss) {
      best_dev_loss = dev_loss;
      stale_evals = 0;
    } else {
      ++stale_evals;
    }
    return tc.patience > 0 && stale_evals >= tc.patience;
  };

  for (int epoch = 1; epoch <= tc.max_epochs && !stop; ++epoch) {
    const Batching batching = make_batches(corpus, tc.batch_size, batch_rng, tc.max_length);
    if (batching.batches.empty()) throw InputError("train: every training pair exceeds max_length");
    for (const Batch& batch : batching.batches) {
      MetricRow row;
      row.step = result.steps;
      row.lr_recurrent = tc.lr_recurrent;
      row.lr_nonrecurrent = tc.lr_nonrecurrent;
      GradientResult gr = compute_gradients(result.params, config, batch, &dropout_rng);
      row.loss = gr.tokens ? gr.loss / static_cast<double>(gr.tokens) : gr.loss;
      ++result.steps;
      if (!std::isfinite(gr.loss) || !gradients_finite(gr.grads)) {
        row.events = "nonfinite";
        ++result.nonfinite_events;
        if (tc.abort_after_nonfinite > 0 && result.nonfinite_events >= tc.abort_after_nonfinite) {
          log_row(row);
          throw NumericError("training aborted after " + std::to_string(result.nonfinite_events) +
                             " non-finite steps (last at step " + std::to_string(row.step) + ")");
        }
      } else {
        adam_step(result.params, gr.grads, opt, tc);
        ++result.updates;
      }

      const bool at_cap = tc.max_updates > 0 && result.steps >= tc.max_updates;
      if (tc.eval_every > 0 && result.steps % tc.eval_every == 0) stop = evaluate(row) || stop;
      log_row(row);
      if (tc.checkpoint_every > 0 && result.steps % tc.checkpoint_every == 0) {
        save("checkpoint-" + std::to_string(result.steps) + ".ckpt", result.params);
      }
      if (hooks.on_progress && hooks.every > 0 && result.steps % hooks.every == 0) {
        TrainProgress progress{result.steps, result.updates, epoch, &result.params, std::nullopt, std::nullopt};
        if (hooks.on_progress(progress)) {
          result.stopped_by_hook = true;
          stop = true;
        }
      }
      if (at_cap) stop = true;
      if (stop) break;
    }
    if (tc.eval_every == 0 && dev && !result.metrics.empty()) {
      MetricRow row;
      row.step = result.steps;
      row.lr_recurrent = tc.lr_recurrent;
      row.lr_nonrecurrent = tc.lr_nonrecurrent;
      row.loss = std::numeric_limits<double>::quiet_NaN();
      row.events = "eval";
      stop = evaluate(row) || stop;
      log_row(row);
    }
  }

  if (!dev) result.best_params = result.params;
  result.best_dev_bleu = best_bleu;
  save("final.ckpt", result.params);
  save("best.ckpt", result.best_params);
  return result;
}

}  // namespace ffnmt
