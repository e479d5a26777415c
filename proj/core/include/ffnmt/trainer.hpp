#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ffnmt/corpus.hpp"
#include "ffnmt/model.hpp"
#include "ffnmt/rng.hpp"

namespace ffnmt {

/// Standard deviation of every non-recurrent parameter at initialization.
inline constexpr double kInitStddev = 0.07;

struct TrainConfig {
  double lr_recurrent = 5e-4;
  double lr_nonrecurrent = 4e-5;
  double l2 = 2.0;
  double dropout = 0.1;
  std::size_t batch_size = 32;
  int max_epochs = 10;
  /// Stop after this many steps, counting skipped non-finite ones (0: no cap).
  long max_updates = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  /// Write a checkpoint every N updates (0: only the final one).
  long checkpoint_every = 0;
  /// Evaluate on the dev corpus every N updates (0: once per epoch).
  long eval_every = 0;
  /// Sequences longer than this (either side) are skipped (0: no limit).
  std::size_t max_length = 0;
  /// Abort with NumericError after this many non-finite steps (0: never).
  int abort_after_nonfinite = 0;
  /// Early stopping on dev loss after this many non-improving evaluations (0: off).
  int patience = 0;
  /// Compute dev BLEU (beam search) at each evaluation.
  bool eval_bleu = true;
  std::size_t eval_beam = 3;
  /// Overrides the zero init of recurrent parameters with N(0, std^2) when > 0.
  double recurrent_init_std = 0.0;
  double init_std = kInitStddev;
  /// Worker threads for dev decoding.
  int jobs = 1;
  /// Output directory for checkpoints and the metrics log (empty: none).
  std::filesystem::path output_dir;

  void validate() const;
};

/// Recurrent parameters are zero (or N(0, recurrent_std^2) when positive);
/// everything else is N(0, init_std^2). Draws follow canonical order.
ModelParams init_params(const ModelConfig& config, SeededRng& rng, double recurrent_std = 0.0,
                        double init_std = kInitStddev);

struct OptimState {
  Gradients first_moment;
  Gradients second_moment;
  long step = 0;
};

OptimState make_optim_state(const ModelParams& params);

/// One Adam update on g + r * v (r = 0 for embeddings), with l_r for the
/// recurrent part and l_f for everything else.
void adam_step(ModelParams& params, const Gradients& grads, OptimState& state, const TrainConfig& config);

struct Batch {
  PaddedIds source;
  PaddedIds target;
  std::vector<std::size_t> indices;  // positions in the corpus
};

struct Batching {
  std::vector<Batch> batches;
  std::size_t skipped = 0;
};

/// Shuffles by `rng`, groups sequences of similar length, pads, and
/// shuffles the batch order.
Batching make_batches(const EncodedCorpus& corpus, std::size_t batch_size, SeededRng& rng,
                      std::size_t max_length = 0);

struct GradientResult {
  double loss = 0.0;
  long tokens = 0;
  long correct = 0;
  Gradients grads;
};

/// Forward and backward pass over one batch. `dropout_rng` null means
/// evaluation mode.
GradientResult compute_gradients(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                                 SeededRng* dropout_rng);

struct EvalResult {
  double loss = 0.0;
  long tokens = 0;
  long correct = 0;

  double token_accuracy() const { return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0; }
  double token_error_rate() const { return 1.0 - token_accuracy(); }
};

/// Teacher-forced evaluation over a corpus, batched for speed.
EvalResult evaluate_corpus(const ModelParams& params, const ModelConfig& config, const EncodedCorpus& corpus,
                           std::size_t batch_size = 64);

bool gradients_finite(const Gradients& grads);

struct MetricRow {
  long step = 0;
  double loss = 0.0;
  double lr_recurrent = 0.0;
  double lr_nonrecurrent = 0.0;
  std::string events;
  std::optional<double> dev_ter;
  std::optional<double> dev_bleu;
};

std::string metrics_header();
std::string format_metric(const MetricRow& row);

struct TrainProgress {
  long steps = 0;
  long updates = 0;
  int epoch = 0;
  const ModelParams* params = nullptr;
  std::optional<EvalResult> dev;
  std::optional<double> dev_bleu;
};

struct TrainHooks {
  /// Called after every `every` steps; returning true stops training.
  std::function<bool(const TrainProgress&)> on_progress;
  long every = 0;
};

struct TrainResult {
  ModelParams params;
  ModelParams best_params;
  std::vector<MetricRow> metrics;
  long steps = 0;
  long updates = 0;
  int nonfinite_events = 0;
  std::optional<double> best_dev_bleu;
  bool stopped_by_hook = false;
  std::vector<std::filesystem::path> checkpoints;
};

struct Vocabularies {
  Vocabulary source;
  Vocabulary target;
};

/// Trains from scratch. When output_dir is set, writes metrics.csv,
/// periodic checkpoint-<step>.ckpt files, final.ckpt and best.ckpt.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const EncodedCorpus& corpus,
                  const EncodedCorpus* dev, const Vocabularies* vocabs = nullptr, const TrainHooks& hooks = {});

}  // namespace ffnmt
