#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ffnmt/checkpoint.hpp"
#include "ffnmt/errors.hpp"
#include "ffnmt/trainer.hpp"
#include "test_support.hpp"

using namespace ffnmt;
using ffnmt::test::scratch_dir;
using ffnmt::test::tiny_config;

namespace {

EncodedCorpus copy_corpus(std::size_t n, std::uint64_t seed) {
  TaskSpec spec;
  spec.vocab_size = 6;
  spec.max_length = 5;
  spec.count = n;
  spec.seed = seed;
  std::vector<std::string> tokens;
  for (int i = 0; i < 6; ++i) tokens.push_back(std::to_string(i));
  const Vocabulary v(tokens);
  return encode_corpus(synth_task(spec), v, v);
}

TrainConfig quick_train() {
  TrainConfig t;
  t.lr_recurrent = 3e-3;
  t.lr_nonrecurrent = 3e-3;
  t.l2 = 0.01;
  t.dropout = 0.0;
  t.batch_size = 8;
  t.max_epochs = 1000;
  t.max_updates = 20;
  t.eval_bleu = false;
  return t;
}

ModelConfig quick_model() {
  ModelConfig c = tiny_config(Variant::deep_att, 9);
  c.cell_width = 8;
  c.emb_dim = 8;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Same shapes as `p`, every entry set to `value`.
ModelParams constant_like(const ModelParams& p, double value) {
  ModelParams g = p;
  zip_model([&](Parameter& x) { x.value.mat().setConstant(value); }, g);
  return g;
}

}  // namespace

TEST(Trainer, InitRecurrentZeroOthersNormal) {
  ModelConfig c = tiny_config(Variant::deep_att);
  c.src_vocab_size = 5000;  // 20000-entry embedding for the moment check
  c.emb_dim = 20;
  SeededRng rng(1);
  const ModelParams p = init_params(c, rng);
  zip_model([&](const Parameter& x) {
    if (x.recurrent()) EXPECT_EQ(x.value.mat().norm(), 0.0) << x.name;
  }, p);
  const Matrix& e = p.src_embedding.value.mat();
  const double mean = e.mean();
  const double sd = std::sqrt((e.array() - mean).square().mean());
  EXPECT_NEAR(mean, 0.0, 0.003);
  EXPECT_NEAR(sd, kInitStddev, 0.002);
}

TEST(Trainer, InitIsDeterministic) {
  SeededRng a(7), b(7);
  const ModelParams p = init_params(quick_model(), a);
  const ModelParams q = init_params(quick_model(), b);
  zip_model([](const Parameter& x, const Parameter& y) { EXPECT_EQ(x.value.mat(), y.value.mat()); }, p, q);
}

TEST(Trainer, AdamZeroGradientLeavesUnregularizedAlone) {
  ModelParams p = make_model_params(quick_model());
  SeededRng rng(1);
  test::randomize(p, rng, 0.5);
  const ModelParams before = p;
  OptimState st = make_optim_state(p);
  TrainConfig tc = quick_train();
  tc.l2 = 0.0;
  adam_step(p, zero_gradients(p), st, tc);
  zip_model([](const Parameter& x, const Parameter& y) { EXPECT_EQ(x.value.mat(), y.value.mat()); }, p, before);
}

TEST(Trainer, AdamL2ShrinksAllButEmbeddings) {
  ModelParams p = make_model_params(quick_model());
  SeededRng rng(2);
  test::randomize(p, rng, 0.5);
  const ModelParams before = p;
  OptimState st = make_optim_state(p);
  TrainConfig tc = quick_train();
  tc.l2 = 1.0;
  adam_step(p, zero_gradients(p), st, tc);
  zip_model([](const Parameter& x, const Parameter& y) {
    if (x.role == ParamRole::embedding) {
      EXPECT_EQ(x.value.mat(), y.value.mat()) << x.name;
    } else {
      EXPECT_LT(x.value.mat().norm(), y.value.mat().norm()) << x.name;
    }
  }, p, before);
}

TEST(Trainer, AdamMatchesHandComputation) {
  ModelParams p = make_model_params(quick_model());
  OptimState st = make_optim_state(p);
  TrainConfig tc = quick_train();
  tc.l2 = 0.5;
  tc.lr_recurrent = 0.01;
  tc.lr_nonrecurrent = 0.002;
  const double w0 = 0.3;
  zip_model([&](Parameter& x) { x.value.mat().setConstant(w0); }, p);
  const double g1 = 0.2, g2 = -0.7;
  const double b1 = tc.adam_beta1, b2 = tc.adam_beta2, eps = tc.adam_eps;

  auto oracle = [&](double lr, double r) {
    double w = w0, m = 0.0, v = 0.0;
    const double gs[] = {g1, g2};
    for (int t = 1; t <= 2; ++t) {
      const double g = gs[t - 1] + r * w;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      w -= lr * mh / (std::sqrt(vh) + eps);
    }
    return w;
  };
  const ModelParams grad1 = constant_like(p, g1), grad2 = constant_like(p, g2);
  Gradients a = zero_gradients(p), b = zero_gradients(p);
  zip_model([](Matrix& m, const Parameter& x) { m = x.value.mat(); }, a, grad1);
  zip_model([](Matrix& m, const Parameter& x) { m = x.value.mat(); }, b, grad2);
  adam_step(p, a, st, tc);
  adam_step(p, b, st, tc);
  EXPECT_EQ(st.step, 2);
  zip_model([&](const Parameter& x) {
    const double lr = x.recurrent() ? tc.lr_recurrent : tc.lr_nonrecurrent;
    const double r = x.role == ParamRole::embedding ? 0.0 : tc.l2;
    EXPECT_NEAR(x.value[0], oracle(lr, r), 1e-15) << x.name;
  }, p);
}

TEST(Trainer, AdamRejectsShapeMismatch) {
  ModelParams p = make_model_params(quick_model());
  OptimState st = make_optim_state(p);
  Gradients g = zero_gradients(p);
  g.output = Matrix::Zero(1, 1);
  EXPECT_THROW(adam_step(p, g, st, quick_train()), DimensionError);
  EXPECT_EQ(st.step, 0);
}

TEST(Trainer, BatchesCoverCorpusOnce) {
  const EncodedCorpus corpus = copy_corpus(10, 3);
  SeededRng rng(1);
  const Batching b = make_batches(corpus, 4, rng);
  std::vector<std::size_t> sizes;
  std::multiset<std::size_t> seen;
  for (const Batch& batch : b.batches) {
    sizes.push_back(batch.indices.size());
    seen.insert(batch.indices.begin(), batch.indices.end());
    EXPECT_EQ(batch.source.rows, static_cast<int>(batch.indices.size()));
    for (int r = 0; r < batch.source.rows; ++r) {
      EXPECT_EQ(batch.source.lengths[r], static_cast<int>(corpus.source[batch.indices[r]].size()));
    }
  }
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 4, 4}));
  EXPECT_EQ(seen.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(seen.count(i), 1u);
}

TEST(Trainer, BatchesSkipLongPairs) {
  EncodedCorpus c;
  c.source = {{3}, {3, 4, 5, 6}, {3, 4}};
  c.target = {{3, kEndId}, {3, kEndId}, {3, 4, 5, 6, kEndId}};
  SeededRng rng(1);
  const Batching b = make_batches(c, 8, rng, 2);
  EXPECT_EQ(b.skipped, 2u);
  ASSERT_EQ(b.batches.size(), 1u);
  EXPECT_EQ(b.batches[0].indices, (std::vector<std::size_t>{0}));
}

TEST(Trainer, BatchGradientIsSumOfSingles) {
  const EncodedCorpus corpus = copy_corpus(3, 5);
  const ModelConfig c = quick_model();
  SeededRng rng(3);
  ModelParams p = init_params(c, rng, 0.1);
  SeededRng brng(1);
  const Batching all = make_batches(corpus, 3, brng);
  const GradientResult whole = compute_gradients(p, c, all.batches[0], nullptr);
  double loss = 0.0;
  Gradients sum = zero_gradients(p);
  for (std::size_t i = 0; i < 3; ++i) {
    EncodedCorpus one;
    one.source = {corpus.source[i]};
    one.target = {corpus.target[i]};
    SeededRng r(1);
    const GradientResult g = compute_gradients(p, c, make_batches(one, 1, r).batches[0], nullptr);
    loss += g.loss;
    zip_model([](Matrix& acc, const Matrix& x) { acc += x; }, sum, g.grads);
  }
  EXPECT_NEAR(whole.loss, loss, 1e-12);
  zip_model([](const Matrix& a, const Matrix& b) { EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12); }, whole.grads,
            sum);
}

TEST(Trainer, FirstStepLossIsUniformWithZeroInit) {
  const EncodedCorpus corpus = copy_corpus(16, 2);
  TrainConfig tc = quick_train();
  tc.init_std = 0.0;
  tc.max_updates = 1;
  const TrainResult r = train(quick_model(), tc, corpus, nullptr);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_NEAR(r.metrics[0].loss, std::log(9.0), 1e-12);
}

TEST(Trainer, LossDecreasesOnCopyTask) {
  const EncodedCorpus corpus = copy_corpus(64, 4);
  TrainConfig tc = quick_train();
  tc.max_updates = 0;
  tc.max_epochs = 1;
  const ModelConfig c = quick_model();
  SeededRng init_rng = SeededRng(tc.seed).derive(1);
  double previous = evaluate_corpus(init_params(c, init_rng), c, corpus).loss;
  for (int epochs : {10, 25}) {
    tc.max_epochs = epochs;
    const TrainResult r = train(c, tc, corpus, nullptr);
    const double now = evaluate_corpus(r.params, c, corpus).loss;
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(Trainer, Deterministic) {
  const EncodedCorpus corpus = copy_corpus(32, 6);
  TrainConfig tc = quick_train();
  tc.dropout = 0.2;
  const TrainResult a = train(quick_model(), tc, corpus, nullptr);
  const TrainResult b = train(quick_model(), tc, corpus, nullptr);
  zip_model([](const Parameter& x, const Parameter& y) { EXPECT_EQ(x.value.mat(), y.value.mat()); }, a.params,
            b.params);
  tc.seed = 2;
  const TrainResult c = train(quick_model(), tc, corpus, nullptr);
  EXPECT_NE(a.params.output.value.mat(), c.params.output.value.mat());
}

TEST(Trainer, StepCapAndMetrics) {
  const EncodedCorpus corpus = copy_corpus(40, 7);
  const EncodedCorpus dev = copy_corpus(8, 8);
  TrainConfig tc = quick_train();
  tc.max_updates = 7;
  tc.eval_every = 3;
  tc.eval_bleu = true;
  const TrainResult r = train(quick_model(), tc, corpus, &dev);
  EXPECT_EQ(r.steps, 7);
  EXPECT_EQ(r.updates, 7);
  ASSERT_EQ(r.metrics.size(), 7u);
  EXPECT_TRUE(r.metrics[2].dev_ter.has_value());
  EXPECT_TRUE(r.metrics[2].dev_bleu.has_value());
  EXPECT_FALSE(r.metrics[3].dev_ter.has_value());
  EXPECT_TRUE(r.best_dev_bleu.has_value());
  EXPECT_EQ(metrics_header(), "step,loss,lr_recurrent,lr_nonrecurrent,events,dev_ter,dev_bleu");
  MetricRow row;
  row.step = 4;
  row.loss = 0.5;
  row.lr_recurrent = 0.25;
  row.lr_nonrecurrent = 0.125;
  row.dev_bleu = 12.5;
  EXPECT_EQ(format_metric(row), "4,0.5,0.25,0.125,,,12.5");
}

TEST(Trainer, HookStopsTraining) {
  TrainConfig tc = quick_train();
  tc.max_updates = 0;
  TrainHooks hooks;
  hooks.every = 2;
  int calls = 0;
  hooks.on_progress = [&](const TrainProgress& p) {
    ++calls;
    EXPECT_NE(p.params, nullptr);
    return p.steps >= 4;
  };
  const TrainResult r = train(quick_model(), tc, copy_corpus(64, 1), nullptr, nullptr, hooks);
  EXPECT_TRUE(r.stopped_by_hook);
  EXPECT_EQ(r.steps, 4);
  EXPECT_EQ(calls, 2);
}

TEST(Trainer, NonFiniteStepsAreSkippedAndCounted) {
  TrainConfig tc = quick_train();
  tc.init_std = 1e200;
  tc.max_updates = 3;
  const TrainResult r = train(quick_model(), tc, copy_corpus(32, 1), nullptr);
  EXPECT_EQ(r.nonfinite_events, 3);
  EXPECT_EQ(r.updates, 0);
  EXPECT_EQ(r.metrics[0].events, "nonfinite");
  tc.abort_after_nonfinite = 2;
  EXPECT_THROW(train(quick_model(), tc, copy_corpus(32, 1), nullptr), NumericError);
}

TEST(Trainer, WritesCheckpointsAndMetrics) {
  const auto dir = scratch_dir("trainer_out");
  TrainConfig tc = quick_train();
  tc.max_updates = 4;
  tc.checkpoint_every = 2;
  tc.output_dir = dir;
  const TrainResult r = train(quick_model(), tc, copy_corpus(32, 1), nullptr);
  for (const char* name : {"checkpoint-2.ckpt", "checkpoint-4.ckpt", "final.ckpt", "best.ckpt", "metrics.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  const std::string csv = slurp(dir / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const Checkpoint ck = load_checkpoint(dir / "final.ckpt");
  zip_model([](const Parameter& x, const Parameter& y) { EXPECT_EQ(x.value.mat(), y.value.mat()); }, ck.params,
            r.params);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.lr_recurrent = 0.0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.adam_beta2 = 1.0;
  EXPECT_THROW(tc.validate(), ConfigError);
  EncodedCorpus empty;
  EXPECT_THROW(train(quick_model(), quick_train(), empty, nullptr), InputError);
}
