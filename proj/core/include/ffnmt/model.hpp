#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffnmt/params.hpp"
#include "ffnmt/recurrent.hpp"
#include "ffnmt/rng.hpp"
#include "ffnmt/tape.hpp"

namespace ffnmt {

enum class Variant { deep_ed, deep_att };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::deep_att;
  int n_e = 2;
  int n_d = 2;
  int columns = 2;
  std::size_t emb_dim = 16;
  std::size_t cell_width = 16;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  double dropout = 0.1;
  /// Hidden width of the alignment network; 0 means "same as cell_width".
  std::size_t attention_hidden = 0;
  /// Deep-Att projects e_t to 1/projection_factor of its width with W_p.
  std::size_t projection_factor = 4;
  bool ff_enabled = true;

  void validate() const;

  /// Width of the encoder representation e_t.
  std::size_t representation_width() const;
  /// Width of c_t: |e| for Deep-ED, |e| / projection_factor for Deep-Att.
  std::size_t context_width() const;
  std::size_t alignment_width() const { return attention_hidden ? attention_hidden : cell_width; }
  std::size_t decoder_input_width() const { return context_width() + emb_dim; }
  int lstm_layer_count() const { return columns * n_e + n_d; }
  int depth() const { return n_e + n_d; }

  StackConfig encoder_stack(int column) const;
  StackConfig decoder_stack() const;
};

template <class T>
struct AttentionSlots {
  T w_p;
  T w_a;
  T u_a;
  T v;
};

template <class T>
struct ModelSlots {
  T src_embedding;
  T tgt_embedding;
  std::vector<std::vector<LayerSlots<T>>> encoder;  // [column][layer]
  std::vector<LayerSlots<T>> decoder;
  std::optional<AttentionSlots<T>> attention;
  T output;
};

/// Visits matching slots of one or more structurally identical models in
/// canonical order.
template <class F, class First, class... Rest>
void zip_model(F&& f, First& first, Rest&... rest) {
  f(first.src_embedding, rest.src_embedding...);
  f(first.tgt_embedding, rest.tgt_embedding...);
  for (std::size_t c = 0; c < first.encoder.size(); ++c) {
    for (std::size_t k = 0; k < first.encoder[c].size(); ++k) zip_layer(f, first.encoder[c][k], rest.encoder[c][k]...);
  }
  for (std::size_t k = 0; k < first.decoder.size(); ++k) zip_layer(f, first.decoder[k], rest.decoder[k]...);
  if (first.attention) {
    f(first.attention->w_p, rest.attention->w_p...);
    f(first.attention->w_a, rest.attention->w_a...);
    f(first.attention->u_a, rest.attention->u_a...);
    f(first.attention->v, rest.attention->v...);
  }
  f(first.output, rest.output...);
}

template <class U, class T, class Fn>
ModelSlots<U> transform_model(const ModelSlots<T>& in, Fn&& fn) {
  ModelSlots<U> out;
  out.src_embedding = fn(in.src_embedding);
  out.tgt_embedding = fn(in.tgt_embedding);
  for (const auto& column : in.encoder) {
    auto& dst = out.encoder.emplace_back();
    for (const auto& layer : column) dst.push_back(transform_layer<U>(layer, fn));
  }
  for (const auto& layer : in.decoder) out.decoder.push_back(transform_layer<U>(layer, fn));
  if (in.attention) {
    out.attention = AttentionSlots<U>{fn(in.attention->w_p), fn(in.attention->w_a), fn(in.attention->u_a),
                                      fn(in.attention->v)};
  }
  out.output = fn(in.output);
  return out;
}

using ModelParams = ModelSlots<Parameter>;
using BoundModel = ModelSlots<Var>;
using Gradients = ModelSlots<Matrix>;

/// Zero-valued, named parameters with the shapes implied by `config`.
ModelParams make_model_params(const ModelConfig& config);
std::size_t parameter_count(const ModelParams& params);
Gradients zero_gradients(const ModelParams& params);

BoundModel bind_model(Tape& tape, const ModelParams& params);
Gradients collect_gradients(const Tape& tape, const BoundModel& bound);

// ---- batched tape-level forward ---------------------------------------------

/// Padded id matrix ([rows x steps], row-major) with per-row lengths.
struct PaddedIds {
  int rows = 0;
  int steps = 0;
  std::vector<int> ids;
  std::vector<int> lengths;
  Matrix valid;  // [rows x steps], 1 at real tokens

  int at(int r, int t) const { return ids[static_cast<std::size_t>(r * steps + t)]; }
  std::vector<int> column(int t) const;
};

PaddedIds pad_sequences(std::span<const std::vector<int>> sequences, int pad_id);

struct EncoderStates {
  std::vector<std::vector<LayerTrace>> columns;  // [column][layer]
  const PaddedIds* source = nullptr;
};

EncoderStates encode(Tape& tape, const BoundModel& model, const ModelConfig& config, const PaddedIds& source,
                     SeededRng* dropout_rng);

/// Deep-ED representation [h_m^{a1}, Max h^{a2}, Max f^{a1}, Max f^{a2}]
/// (f-terms only with F-F, a2-terms only with two columns).
Var interface_ed(Tape& tape, const ModelConfig& config, const EncoderStates& enc);

/// Deep-Att memory: W_p e_t per source position and its alignment keys.
struct AttentionMemory {
  std::vector<Var> projected;
  std::vector<Var> keys;
  Matrix valid;
};

AttentionMemory attention_memory(Tape& tape, const BoundModel& model, const ModelConfig& config,
                                 const EncoderStates& enc);

struct AttentionOutput {
  Var context;
  Var alpha;
};

AttentionOutput interface_att(Tape& tape, const BoundModel& model, const AttentionMemory& memory, Var h_dec_prev);

struct DecoderState {
  std::vector<Var> h;
  std::vector<Var> s;
};

DecoderState initial_decoder_state(Tape& tape, const ModelConfig& config, Eigen::Index rows);

struct DecoderStep {
  Var logits;
  DecoderState state;
};

/// One all-forward step of the decoder stack on x_t = [c_t, y_{t-1}].
DecoderStep decode_step(Tape& tape, const BoundModel& model, const ModelConfig& config, Var y_prev_embedding,
                        Var context, const DecoderState& prev, SeededRng* dropout_rng);

struct BatchLoss {
  Var loss;
  /// correct[r][j]: argmax prediction at target position j matched gold.
  std::vector<std::vector<bool>> correct;
  long tokens = 0;
};

/// Teacher-forced negative log-likelihood of the targets (which carry the
/// end mark) summed over all rows and real positions.
BatchLoss sequence_loss(Tape& tape, const BoundModel& model, const ModelConfig& config, const PaddedIds& source,
                        const PaddedIds& target, SeededRng* dropout_rng);

// ---- single-sequence value API ----------------------------------------------

struct ColumnOutput {
  std::vector<Tensor> h;  // width d
  std::vector<Tensor> f;  // width 4d
};

struct EncoderOutput {
  std::vector<ColumnOutput> columns;
  std::size_t length = 0;
};

EncoderOutput encode(std::span<const int> source_ids, const ModelParams& params, const ModelConfig& config,
                     SeededRng* dropout_rng = nullptr);
Tensor interface_ed(const EncoderOutput& enc, const ModelConfig& config);

struct AttentionResult {
  Tensor context;
  Tensor alphas;
};

AttentionResult interface_att(const EncoderOutput& enc, const Tensor& h_dec_prev, const ModelParams& params,
                              const ModelConfig& config);

struct DecodeResult {
  Tensor logits;
  std::vector<LstmState> states;
  /// First decoder layer output, the attention query of the next step.
  Tensor h1;
};

/// y_prev_id < 0 denotes the start position, whose embedding is zero.
DecodeResult decode_step(int y_prev_id, const Tensor& context, const std::vector<LstmState>& states,
                         const ModelParams& params, const ModelConfig& config, SeededRng* dropout_rng = nullptr);

struct NllResult {
  double loss = 0.0;
  std::vector<bool> correct;
};

NllResult sequence_nll(std::span<const int> source_ids, std::span<const int> target_ids, const ModelParams& params,
                       const ModelConfig& config, SeededRng* dropout_rng = nullptr);

}  // namespace ffnmt
