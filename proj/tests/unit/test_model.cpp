#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ffnmt/corpus.hpp"
#include "ffnmt/errors.hpp"
#include "ffnmt/gradcheck.hpp"
#include "ffnmt/model.hpp"
#include "test_support.hpp"

using namespace ffnmt;
using ffnmt::test::randomize;
using ffnmt::test::tiny_config;

namespace {

ModelParams random_params(const ModelConfig& c, std::uint64_t seed, double std = 0.4) {
  ModelParams p = make_model_params(c);
  SeededRng rng(seed);
  randomize(p, rng, std);
  return p;
}

double log_softmax_at(const Tensor& logits, int id) {
  const double mx = logits.mat().maxCoeff();
  double z = 0.0;
  for (double x : logits.data()) z += std::exp(x - mx);
  return logits[static_cast<std::size_t>(id)] - mx - std::log(z);
}

// Step-by-step loss through the single-sequence value API.
double manual_nll(const std::vector<int>& src, const std::vector<int>& tgt, const ModelParams& p,
                  const ModelConfig& c) {
  const EncoderOutput enc = encode(src, p, c);
  std::vector<LstmState> states(static_cast<std::size_t>(c.n_d),
                                LstmState{Tensor({c.cell_width}), Tensor({c.cell_width})});
  Tensor h1({c.cell_width});
  const Tensor ed = c.variant == Variant::deep_ed ? interface_ed(enc, c) : Tensor();
  double loss = 0.0;
  int prev = -1;
  for (int y : tgt) {
    const Tensor ctx = c.variant == Variant::deep_ed ? ed : interface_att(enc, h1, p, c).context;
    const DecodeResult step = decode_step(prev, ctx, states, p, c);
    loss -= log_softmax_at(step.logits, y);
    states = step.states;
    h1 = step.h1;
    prev = y;
  }
  return loss;
}

}  // namespace

TEST(Model, RepresentationWidths) {
  ModelConfig c;
  c.cell_width = 512;
  c.emb_dim = 256;
  c.src_vocab_size = c.tgt_vocab_size = 10;
  c.variant = Variant::deep_ed;
  EXPECT_EQ(c.context_width(), 5120u);
  c.variant = Variant::deep_att;
  EXPECT_EQ(c.context_width(), 1280u);
  EXPECT_EQ(c.decoder_input_width(), 1280u + 256u);
  c.ff_enabled = false;
  EXPECT_EQ(c.representation_width(), 1024u);
  c.columns = 1;
  c.ff_enabled = true;
  EXPECT_EQ(c.representation_width(), 5u * 512u);
}

TEST(Model, LayerCountAndDepth) {
  ModelConfig c = tiny_config(Variant::deep_att);
  c.n_e = 9;
  c.n_d = 7;
  EXPECT_EQ(c.lstm_layer_count(), 25);
  EXPECT_EQ(c.depth(), 16);
  const ModelParams p = make_model_params(c);
  std::size_t layers = p.decoder.size();
  for (const auto& col : p.encoder) layers += col.size();
  EXPECT_EQ(layers, 25u);
  EXPECT_EQ(p.encoder.size(), 2u);
  EXPECT_EQ(p.encoder[0].size() + p.decoder.size(), 16u);
}

TEST(Model, ParameterShapes) {
  ModelConfig c = tiny_config(Variant::deep_att);
  const ModelParams p = make_model_params(c);
  const std::size_t d = c.cell_width;
  EXPECT_EQ(p.src_embedding.value.shape(), (std::vector<std::size_t>{c.src_vocab_size, c.emb_dim}));
  EXPECT_EQ(p.encoder[0][0].w_f.value.shape(), (std::vector<std::size_t>{4 * d, c.emb_dim}));
  EXPECT_EQ(p.encoder[0][1].w_f.value.shape(), (std::vector<std::size_t>{4 * d, 3 * d}));
  EXPECT_EQ(p.decoder[0].w_f.value.shape(), (std::vector<std::size_t>{4 * d, c.decoder_input_width()}));
  ASSERT_TRUE(p.attention.has_value());
  EXPECT_EQ(p.attention->w_p.value.shape(), (std::vector<std::size_t>{c.context_width(), c.representation_width()}));
  EXPECT_EQ(p.output.value.shape(), (std::vector<std::size_t>{c.tgt_vocab_size, d}));
  EXPECT_EQ(p.encoder[0][0].direction, Direction::forward);
  EXPECT_EQ(p.encoder[1][0].direction, Direction::backward);
  EXPECT_EQ(p.encoder[0][1].direction, Direction::backward);
  for (const auto& l : p.decoder) EXPECT_EQ(l.direction, Direction::forward);
  EXPECT_FALSE(make_model_params(tiny_config(Variant::deep_ed)).attention.has_value());
}

TEST(Model, ParameterNamesUnique) {
  const ModelParams p = make_model_params(tiny_config(Variant::deep_att));
  std::vector<std::string> names;
  zip_model([&](const Parameter& x) { names.push_back(x.name); }, p);
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_EQ(names.front(), "src_embedding");
  EXPECT_EQ(names.back(), "output.W");
}

TEST(Model, NoFastForwardShapes) {
  ModelConfig c = tiny_config(Variant::deep_att);
  c.ff_enabled = false;
  c.projection_factor = 2;
  const ModelParams p = make_model_params(c);
  EXPECT_EQ(p.encoder[0][1].w_f.value.shape()[1], c.cell_width);
  EXPECT_EQ(p.decoder[1].w_f.value.shape()[1], c.cell_width);
  EXPECT_EQ(c.representation_width(), 2 * c.cell_width);
}

TEST(Model, InterfaceEdMatchesNaiveMax) {
  ModelConfig c = tiny_config(Variant::deep_ed);
  const ModelParams p = random_params(c, 3);
  const std::vector<int> src{4, 7, 2, 9, 5};
  const EncoderOutput enc = encode(src, p, c);
  const Tensor e = interface_ed(enc, c);
  const std::size_t d = c.cell_width;
  ASSERT_EQ(e.size(), 10 * d);
  std::vector<double> expect;
  for (std::size_t i = 0; i < d; ++i) expect.push_back(enc.columns[0].h.back()[i]);
  auto push_max = [&](const std::vector<Tensor>& seq) {
    for (std::size_t i = 0; i < seq[0].size(); ++i) {
      double m = -1e300;
      for (const Tensor& t : seq) m = std::max(m, t[i]);
      expect.push_back(m);
    }
  };
  push_max(enc.columns[1].h);
  push_max(enc.columns[0].f);
  push_max(enc.columns[1].f);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e[i], expect[i]) << i;
}

TEST(Model, AttentionWeightsFormDistribution) {
  ModelConfig c = tiny_config(Variant::deep_att);
  const ModelParams p = random_params(c, 4);
  const std::vector<int> src{3, 8, 6, 4};
  const EncoderOutput enc = encode(src, p, c);
  SeededRng rng(1);
  Tensor h({c.cell_width});
  for (double& x : h.data()) x = rng.normal();
  const AttentionResult a = interface_att(enc, h, p, c);
  ASSERT_EQ(a.alphas.size(), src.size());
  double total = 0.0;
  for (double x : a.alphas.data()) {
    EXPECT_GT(x, 0.0);
    total += x;
  }
  EXPECT_NEAR(total, 1.0, 1e-14);

  // Context equals sum_t alpha_t W_p e_t with e_t = [h^{a1}, h^{a2}, f^{a1}, f^{a2}].
  const Matrix& wp = p.attention->w_p.value.mat();
  Matrix expect = Matrix::Zero(1, static_cast<Eigen::Index>(c.context_width()));
  for (std::size_t t = 0; t < src.size(); ++t) {
    Matrix e(1, static_cast<Eigen::Index>(c.representation_width()));
    e << enc.columns[0].h[t].mat(), enc.columns[1].h[t].mat(), enc.columns[0].f[t].mat(), enc.columns[1].f[t].mat();
    expect += a.alphas[t] * (e * wp.transpose());
  }
  EXPECT_LE((a.context.mat() - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Model, SequenceNllMatchesStepwiseDecoding) {
  for (Variant v : {Variant::deep_ed, Variant::deep_att}) {
    ModelConfig c = tiny_config(v);
    const ModelParams p = random_params(c, 5);
    const std::vector<int> src{3, 5, 7};
    const std::vector<int> tgt{4, 6, 8, 9, kEndId};
    EXPECT_NEAR(sequence_nll(src, tgt, p, c).loss, manual_nll(src, tgt, p, c), 1e-12) << variant_name(v);
  }
}

TEST(Model, ZeroParametersGiveUniformLoss) {
  for (Variant v : {Variant::deep_ed, Variant::deep_att}) {
    ModelConfig c = tiny_config(v, 17);
    const ModelParams p = make_model_params(c);
    const std::vector<int> src{3, 4};
    const std::vector<int> tgt{5, 6, 7, kEndId};
    EXPECT_NEAR(sequence_nll(src, tgt, p, c).loss, 4.0 * std::log(17.0), 1e-12);
  }
}

TEST(Model, SingleTokenSource) {
  for (Variant v : {Variant::deep_ed, Variant::deep_att}) {
    ModelConfig c = tiny_config(v);
    const ModelParams p = random_params(c, 6);
    const std::vector<int> src{5};
    const std::vector<int> tgt{kEndId};
    const NllResult r = sequence_nll(src, tgt, p, c);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_EQ(r.correct.size(), 1u);
    EXPECT_NEAR(r.loss, manual_nll(src, tgt, p, c), 1e-12);
  }
}

TEST(Model, BatchLossIsSumOfSequences) {
  for (Variant v : {Variant::deep_ed, Variant::deep_att}) {
    ModelConfig c = tiny_config(v);
    const ModelParams p = random_params(c, 7);
    const std::vector<std::vector<int>> srcs{{3, 4, 5, 6}, {7}, {8, 9}};
    const std::vector<std::vector<int>> tgts{{4, kEndId}, {5, 6, 7, kEndId}, {kEndId}};
    double expect = 0.0;
    for (std::size_t i = 0; i < srcs.size(); ++i) expect += sequence_nll(srcs[i], tgts[i], p, c).loss;
    Tape tape;
    const BoundModel bound = bind_model(tape, p);
    const PaddedIds s = pad_sequences(srcs, kPadId), t = pad_sequences(tgts, kPadId);
    const BatchLoss bl = sequence_loss(tape, bound, c, s, t, nullptr);
    EXPECT_NEAR(tape.value(bl.loss)(0, 0), expect, 1e-12);
    EXPECT_EQ(bl.tokens, 7);
    EXPECT_EQ(bl.correct[1].size(), 4u);
  }
}

TEST(Model, EdContextIndependentOfDecoderState) {
  ModelConfig c = tiny_config(Variant::deep_ed);
  const ModelParams p = random_params(c, 8);
  const std::vector<int> src{3, 4, 5};
  const Tensor e1 = interface_ed(encode(src, p, c), c);
  const Tensor e2 = interface_ed(encode(src, p, c), c);
  EXPECT_EQ((e1.mat() - e2.mat()).norm(), 0.0);
  EXPECT_THROW(interface_att(encode(src, p, c), Tensor({c.cell_width}), p, c), UnsupportedError);
}

TEST(Model, GradientsMatchFiniteDifferences) {
  for (Variant v : {Variant::deep_ed, Variant::deep_att}) {
    GradcheckConfig g;
    g.model = gradcheck_model(v);
    g.instances = 1;
    const GradcheckReport r = run_gradcheck(g);
    EXPECT_LE(r.max_relative_error, 1e-6) << variant_name(v) << " worst " << r.worst_parameter;
    EXPECT_GT(r.checked, 0);
  }
}

TEST(Model, GradientsMatchWithoutFastForwardAndOneColumn) {
  for (Variant v : {Variant::deep_ed, Variant::deep_att}) {
    GradcheckConfig g;
    g.model = gradcheck_model(v);
    g.model.ff_enabled = false;
    g.model.projection_factor = 2;
    g.instances = 1;
    EXPECT_LE(run_gradcheck(g).max_relative_error, 1e-6);
    g.model = gradcheck_model(v);
    g.model.columns = 1;
    g.model.projection_factor = 5;
    EXPECT_LE(run_gradcheck(g).max_relative_error, 1e-6);
  }
}

TEST(Model, RelativeErrorFloor) {
  EXPECT_NEAR(gradient_relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1e-9, 0.0), 1e-5);
}

TEST(Model, RejectsBadInput) {
  ModelConfig c = tiny_config(Variant::deep_att);
  const ModelParams p = make_model_params(c);
  const std::vector<int> ok{3};
  const std::vector<int> bad{99};
  const std::vector<int> none;
  EXPECT_THROW(sequence_nll(bad, ok, p, c), DomainError);
  EXPECT_THROW(sequence_nll(ok, bad, p, c), DomainError);
  EXPECT_THROW(sequence_nll(none, ok, p, c), DomainError);
  EXPECT_THROW(sequence_nll(ok, none, p, c), DomainError);
  c.columns = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Variant::deep_att);
  c.projection_factor = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("rnn"), ConfigError);
  EXPECT_EQ(parse_variant("deep-ed"), Variant::deep_ed);
}
