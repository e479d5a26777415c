#include <benchmark/benchmark.h>

#include "ffnmt/generator.hpp"
#include "ffnmt/recurrent.hpp"

using namespace ffnmt;

namespace {

void fill(Tensor& t, SeededRng& rng, double std) {
  for (double& x : t.data()) x = rng.normal(0.0, std);
}

StackConfig stack(std::size_t d, int depth) {
  StackConfig c;
  c.depth = depth;
  c.cell_width = d;
  c.input_width = d;
  return c;
}

void BM_LstmStep(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  SeededRng rng(1);
  LayerParams layer = make_layer_params("b", stack(d, 1), 1);
  zip_lstm([&](Parameter& p) { fill(p.value, rng, 0.1); }, layer.lstm);
  Tensor f({4 * d});
  fill(f, rng, 1.0);
  LstmState s{Tensor({d}), Tensor({d})};
  for (auto _ : state) {
    s = lstm_step(f, s, layer.lstm);
    benchmark::DoNotOptimize(s.h.data().data());
  }
}
BENCHMARK(BM_LstmStep)->Arg(64)->Arg(256)->Arg(512);

void BM_StackForward(benchmark::State& state) {
  const auto depth = static_cast<int>(state.range(0));
  const StackConfig c = stack(64, depth);
  SeededRng rng(2);
  auto params = make_stack_params("b", c);
  for (auto& layer : params) {
    fill(layer.w_f.value, rng, 0.1);
    zip_lstm([&](Parameter& p) { fill(p.value, rng, 0.1); }, layer.lstm);
  }
  std::vector<Tensor> inputs(20, Tensor({64}));
  for (auto& x : inputs) fill(x, rng, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(stack_forward(inputs, c, params));
}
BENCHMARK(BM_StackForward)->Arg(2)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  ModelConfig c;
  c.variant = Variant::deep_att;
  c.n_e = c.n_d = 2;
  c.cell_width = 64;
  c.emb_dim = 64;
  c.src_vocab_size = c.tgt_vocab_size = 500;
  ModelParams p = make_model_params(c);
  SeededRng rng(3);
  zip_model([&](Parameter& x) { fill(x.value, rng, 0.1); }, p);
  std::vector<int> src(15);
  for (int& id : src) id = 3 + static_cast<int>(rng.uniform_index(497));
  BeamConfig beam;
  beam.beam_size = static_cast<std::size_t>(state.range(0));
  beam.max_len = 20;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(src, p, c, beam));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(3)->Arg(12)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
