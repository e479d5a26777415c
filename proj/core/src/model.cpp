#include "ffnmt/model.hpp"

#include "ffnmt/errors.hpp"

namespace ffnmt {
namespace {

Tensor row_tensor(const Matrix& m, Eigen::Index row = 0) {
  return Tensor::from_matrix({static_cast<std::size_t>(m.cols())}, Matrix(m.row(row)));
}

Matrix row_of(const Tensor& t, std::size_t width, const char* what) {
  if (t.size() != width) {
    throw DimensionError(std::string(what) + ": expected width " + std::to_string(width) + ", got " +
                         shape_string(t.shape()));
  }
  Matrix m = t.mat();
  m.resize(1, static_cast<Eigen::Index>(width));
  return m;
}

PaddedIds single_row(std::span<const int> ids) {
  std::vector<std::vector<int>> one{std::vector<int>(ids.begin(), ids.end())};
  return pad_sequences(one, 0);
}

int argmax_row(const Matrix& m, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j) {
    if (m(row, j) > m(row, best)) best = j;
  }
  return static_cast<int>(best);
}

void check_ids(const PaddedIds& ids, std::size_t vocab, const char* what) {
  for (int r = 0; r < ids.rows; ++r) {
    for (int t = 0; t < ids.lengths[static_cast<std::size_t>(r)]; ++t) {
      const int id = ids.at(r, t);
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw DomainError(std::string(what) + ": id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab));
      }
    }
  }
}

}  // namespace

const char* variant_name(Variant v) { return v == Variant::deep_ed ? "deep-ed" : "deep-att"; }

Variant parse_variant(const std::string& name) {
  if (name == "deep-ed" || name == "DeepED" || name == "ed") return Variant::deep_ed;
  if (name == "deep-att" || name == "DeepAtt" || name == "att") return Variant::deep_att;
  throw ConfigError("unknown model variant '" + name + "' (expected deep-ed or deep-att)");
}

void ModelConfig::validate() const {
  if (n_e < 1 || n_d < 1) throw ConfigError("n_e and n_d must be >= 1");
  if (columns != 1 && columns != 2) throw ConfigError("columns must be 1 or 2");
  if (emb_dim == 0 || cell_width == 0) throw ConfigError("emb_dim and cell_width must be positive");
  if (src_vocab_size == 0 || tgt_vocab_size == 0) throw ConfigError("vocabulary sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (variant == Variant::deep_att) {
    if (projection_factor == 0) throw ConfigError("projection_factor must be positive");
    if (representation_width() % projection_factor != 0) {
      throw ConfigError("representation width " + std::to_string(representation_width()) +
                        " is not divisible by projection_factor " + std::to_string(projection_factor));
    }
  }
}

std::size_t ModelConfig::representation_width() const {
  const std::size_t per_column = ff_enabled ? cell_width + 4 * cell_width : cell_width;
  return per_column * static_cast<std::size_t>(columns);
}

std::size_t ModelConfig::context_width() const {
  if (variant == Variant::deep_ed) return representation_width();
  return representation_width() / projection_factor;
}

StackConfig ModelConfig::encoder_stack(int column) const {
  StackConfig s;
  s.depth = n_e;
  s.cell_width = cell_width;
  s.input_width = emb_dim;
  s.ff_enabled = ff_enabled;
  s.scheme = DirectionScheme::interleaved;
  s.dropout = dropout;
  s.first = column == 0 ? Direction::forward : Direction::backward;
  return s;
}

StackConfig ModelConfig::decoder_stack() const {
  StackConfig s;
  s.depth = n_d;
  s.cell_width = cell_width;
  s.input_width = decoder_input_width();
  s.ff_enabled = ff_enabled;
  s.scheme = DirectionScheme::all_forward;
  s.dropout = dropout;
  return s;
}

ModelParams make_model_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.src_embedding = {"src_embedding", Tensor({config.src_vocab_size, config.emb_dim}), ParamRole::embedding};
  p.tgt_embedding = {"tgt_embedding", Tensor({config.tgt_vocab_size, config.emb_dim}), ParamRole::embedding};
  for (int c = 0; c < config.columns; ++c) {
    p.encoder.push_back(make_stack_params("encoder.a" + std::to_string(c + 1), config.encoder_stack(c)));
  }
  p.decoder = make_stack_params("decoder", config.decoder_stack());
  if (config.variant == Variant::deep_att) {
    const std::size_t e = config.representation_width();
    const std::size_t c = config.context_width();
    const std::size_t a = config.alignment_width();
    p.attention = AttentionSlots<Parameter>{
        {"attention.W_p", Tensor({c, e}), ParamRole::projection},
        {"attention.W_a", Tensor({a, config.cell_width}), ParamRole::alignment},
        {"attention.U_a", Tensor({a, c}), ParamRole::alignment},
        {"attention.v", Tensor({a}), ParamRole::alignment},
    };
  }
  p.output = {"output.W", Tensor({config.tgt_vocab_size, config.cell_width}), ParamRole::output};
  return p;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  zip_model([&](const Parameter& p) { n += p.value.size(); }, params);
  return n;
}

Gradients zero_gradients(const ModelParams& params) {
  return transform_model<Matrix>(params, [](const Parameter& p) {
    return Matrix(Matrix::Zero(p.value.mat().rows(), p.value.mat().cols()));
  });
}

BoundModel bind_model(Tape& tape, const ModelParams& params) {
  return transform_model<Var>(params, [&](const Parameter& p) { return tape.parameter(p.value.mat()); });
}

Gradients collect_gradients(const Tape& tape, const BoundModel& bound) {
  return transform_model<Matrix>(bound, [&](Var v) { return tape.grad(v); });
}

std::vector<int> PaddedIds::column(int t) const {
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) out[static_cast<std::size_t>(r)] = at(r, t);
  return out;
}

PaddedIds pad_sequences(std::span<const std::vector<int>> sequences, int pad_id) {
  PaddedIds p;
  p.rows = static_cast<int>(sequences.size());
  for (const auto& s : sequences) p.steps = std::max(p.steps, static_cast<int>(s.size()));
  p.ids.assign(static_cast<std::size_t>(p.rows * p.steps), pad_id);
  p.valid = Matrix::Zero(p.rows, p.steps);
  for (int r = 0; r < p.rows; ++r) {
    const auto& s = sequences[static_cast<std::size_t>(r)];
    p.lengths.push_back(static_cast<int>(s.size()));
    for (std::size_t t = 0; t < s.size(); ++t) {
      p.ids[static_cast<std::size_t>(r * p.steps) + t] = s[t];
      p.valid(r, static_cast<Eigen::Index>(t)) = 1.0;
    }
  }
  return p;
}

EncoderStates encode(Tape& tape, const BoundModel& model, const ModelConfig& config, const PaddedIds& source,
                     SeededRng* dropout_rng) {
  if (source.rows == 0 || source.steps == 0) throw DomainError("encode: empty source");
  for (int len : source.lengths) {
    if (len < 1) throw DomainError("encode: empty source sequence");
  }
  check_ids(source, config.src_vocab_size, "encode");
  std::vector<Var> xs;
  xs.reserve(static_cast<std::size_t>(source.steps));
  for (int t = 0; t < source.steps; ++t) xs.push_back(tape.gather_rows(model.src_embedding, source.column(t)));
  EncoderStates enc;
  enc.source = &source;
  for (int c = 0; c < config.columns; ++c) {
    const auto& layers = model.encoder[static_cast<std::size_t>(c)];
    enc.columns.push_back(
        stack_forward(tape, xs, config.encoder_stack(c), layers, &source.valid, dropout_rng));
  }
  return enc;
}

Var interface_ed(Tape& tape, const ModelConfig& config, const EncoderStates& enc) {
  const PaddedIds& src = *enc.source;
  std::vector<int> last(src.lengths.size());
  for (std::size_t r = 0; r < last.size(); ++r) last[r] = src.lengths[r] - 1;
  const LayerTrace& a1 = enc.columns[0].back();
  std::vector<Var> parts{tape.select_rows(a1.h, last)};
  if (config.columns == 2) parts.push_back(tape.max_over(enc.columns[1].back().h, src.valid));
  if (config.ff_enabled) {
    parts.push_back(tape.max_over(a1.f, src.valid));
    if (config.columns == 2) parts.push_back(tape.max_over(enc.columns[1].back().f, src.valid));
  }
  return tape.concat_cols(parts);
}

AttentionMemory attention_memory(Tape& tape, const BoundModel& model, const ModelConfig& config,
                                 const EncoderStates& enc) {
  if (!model.attention) throw UnsupportedError("attention_memory: model has no attention parameters");
  AttentionMemory mem;
  mem.valid = enc.source->valid;
  const std::size_t steps = enc.columns[0].back().h.size();
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<Var> parts;
    for (const auto& column : enc.columns) parts.push_back(column.back().h[t]);
    if (config.ff_enabled) {
      for (const auto& column : enc.columns) parts.push_back(column.back().f[t]);
    }
    const Var projected = tape.linear(tape.concat_cols(parts), model.attention->w_p);
    mem.projected.push_back(projected);
    mem.keys.push_back(tape.linear(projected, model.attention->u_a));
  }
  return mem;
}

AttentionOutput interface_att(Tape& tape, const BoundModel& model, const AttentionMemory& memory, Var h_dec_prev) {
  if (!model.attention) throw UnsupportedError("interface_att: model has no attention parameters");
  const Var query = tape.linear(h_dec_prev, model.attention->w_a);
  const Var scores = tape.additive_scores(query, memory.keys, model.attention->v);
  const Var alpha = tape.softmax_rows(scores, memory.valid);
  return {tape.weighted_sum(alpha, memory.projected), alpha};
}

DecoderState initial_decoder_state(Tape& tape, const ModelConfig& config, Eigen::Index rows) {
  const Var zero = tape.constant(Matrix::Zero(rows, static_cast<Eigen::Index>(config.cell_width)));
  DecoderState st;
  st.h.assign(static_cast<std::size_t>(config.n_d), zero);
  st.s.assign(static_cast<std::size_t>(config.n_d), zero);
  return st;
}

DecoderStep decode_step(Tape& tape, const BoundModel& model, const ModelConfig& config, Var y_prev_embedding,
                        Var context, const DecoderState& prev, SeededRng* dropout_rng) {
  if (prev.h.size() != static_cast<std::size_t>(config.n_d)) {
    throw DimensionError("decode_step: expected " + std::to_string(config.n_d) + " decoder states");
  }
  const Var parts[] = {context, y_prev_embedding};
  const Var x = tape.concat_cols(parts);
  const Eigen::Index rows = tape.value(x).rows();
  const Eigen::Index d = static_cast<Eigen::Index>(config.cell_width);
  const bool drop = dropout_rng != nullptr && config.dropout > 0.0;

  DecoderStep out;
  Var f_below;
  for (int k = 1; k <= config.n_d; ++k) {
    const BoundLayer& layer = model.decoder[static_cast<std::size_t>(k - 1)];
    Var f;
    if (k == 1) {
      f = tape.linear(x, layer.w_f);
    } else {
      Matrix mask;
      if (drop) mask = dropout_matrix(rows, d, config.dropout, *dropout_rng);
      f = ff_project(tape, f_below, out.state.h.back(), layer.w_f, drop ? &mask : nullptr, config.ff_enabled);
    }
    const std::size_t i = static_cast<std::size_t>(k - 1);
    auto [h, s] = lstm_step(tape, f, prev.h[i], prev.s[i], layer.lstm);
    out.state.h.push_back(h);
    out.state.s.push_back(s);
    f_below = f;
  }
  out.logits = tape.linear(out.state.h.back(), model.output);
  return out;
}

BatchLoss sequence_loss(Tape& tape, const BoundModel& model, const ModelConfig& config, const PaddedIds& source,
                        const PaddedIds& target, SeededRng* dropout_rng) {
  if (target.rows != source.rows) throw DimensionError("sequence_loss: source/target batch mismatch");
  for (int len : target.lengths) {
    if (len < 1) throw DomainError("sequence_loss: empty target sequence");
  }
  check_ids(target, config.tgt_vocab_size, "sequence_loss");
  const EncoderStates enc = encode(tape, model, config, source, dropout_rng);
  const Eigen::Index rows = source.rows;

  Var fixed_context;
  AttentionMemory memory;
  if (config.variant == Variant::deep_ed) {
    fixed_context = interface_ed(tape, config, enc);
  } else {
    memory = attention_memory(tape, model, config, enc);
  }

  DecoderState state = initial_decoder_state(tape, config, rows);
  const Var start = tape.constant(Matrix::Zero(rows, static_cast<Eigen::Index>(config.emb_dim)));
  BatchLoss result;
  result.correct.resize(static_cast<std::size_t>(rows));
  Var total;
  for (int j = 0; j < target.steps; ++j) {
    const Var y_prev = j == 0 ? start : tape.gather_rows(model.tgt_embedding, target.column(j - 1));
    const Var context =
        config.variant == Variant::deep_ed ? fixed_context : interface_att(tape, model, memory, state.h[0]).context;
    DecoderStep step = decode_step(tape, model, config, y_prev, context, state, dropout_rng);
    const std::vector<int> gold = target.column(j);
    std::vector<double> weights(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) weights[static_cast<std::size_t>(r)] = target.valid(r, j);
    const Var ce = tape.cross_entropy(step.logits, gold, weights);
    total = total.valid() ? tape.add(total, ce) : ce;

    const Matrix& logits = tape.value(step.logits);
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (target.valid(r, j) == 0.0) continue;
      result.correct[static_cast<std::size_t>(r)].push_back(argmax_row(logits, r) == gold[static_cast<std::size_t>(r)]);
      ++result.tokens;
    }
    state = std::move(step.state);
  }
  result.loss = total;
  return result;
}

EncoderOutput encode(std::span<const int> source_ids, const ModelParams& params, const ModelConfig& config,
                     SeededRng* dropout_rng) {
  if (source_ids.empty()) throw DomainError("encode: empty source");
  const PaddedIds src = single_row(source_ids);
  Tape tape;
  const BoundModel model = bind_model(tape, params);
  const EncoderStates enc = encode(tape, model, config, src, dropout_rng);
  EncoderOutput out;
  out.length = source_ids.size();
  for (const auto& column : enc.columns) {
    ColumnOutput col;
    for (std::size_t t = 0; t < out.length; ++t) {
      col.h.push_back(row_tensor(tape.value(column.back().h[t])));
      col.f.push_back(row_tensor(tape.value(column.back().f[t])));
    }
    out.columns.push_back(std::move(col));
  }
  return out;
}

namespace {

/// Rebuilds tape-level encoder states (last layer only) from values.
EncoderStates restore_states(Tape& tape, const EncoderOutput& enc, const ModelConfig& config, const PaddedIds& src) {
  if (enc.length == 0 || enc.columns.size() != static_cast<std::size_t>(config.columns)) {
    throw DimensionError("encoder output does not match the model configuration");
  }
  EncoderStates states;
  states.source = &src;
  for (const ColumnOutput& col : enc.columns) {
    if (col.h.size() != enc.length || col.f.size() != enc.length) {
      throw DimensionError("encoder output sequences have inconsistent lengths");
    }
    LayerTrace last;
    for (std::size_t t = 0; t < enc.length; ++t) {
      last.h.push_back(tape.constant(row_of(col.h[t], config.cell_width, "encoder h")));
      last.f.push_back(tape.constant(row_of(col.f[t], 4 * config.cell_width, "encoder f")));
    }
    states.columns.push_back({std::move(last)});
  }
  return states;
}

}  // namespace

Tensor interface_ed(const EncoderOutput& enc, const ModelConfig& config) {
  const std::vector<int> dummy(enc.length, 0);
  const PaddedIds src = single_row(dummy);
  Tape tape;
  const EncoderStates states = restore_states(tape, enc, config, src);
  return row_tensor(tape.value(interface_ed(tape, config, states)));
}

AttentionResult interface_att(const EncoderOutput& enc, const Tensor& h_dec_prev, const ModelParams& params,
                              const ModelConfig& config) {
  if (config.variant != Variant::deep_att) throw UnsupportedError("interface_att requires a Deep-Att model");
  const std::vector<int> dummy(enc.length, 0);
  const PaddedIds src = single_row(dummy);
  Tape tape;
  const BoundModel model = bind_model(tape, params);
  const EncoderStates states = restore_states(tape, enc, config, src);
  const AttentionMemory memory = attention_memory(tape, model, config, states);
  const Var h = tape.constant(row_of(h_dec_prev, config.cell_width, "interface_att h_dec_prev"));
  const AttentionOutput out = interface_att(tape, model, memory, h);
  return {row_tensor(tape.value(out.context)), row_tensor(tape.value(out.alpha))};
}

DecodeResult decode_step(int y_prev_id, const Tensor& context, const std::vector<LstmState>& states,
                         const ModelParams& params, const ModelConfig& config, SeededRng* dropout_rng) {
  if (states.size() != static_cast<std::size_t>(config.n_d)) {
    throw DimensionError("decode_step: expected " + std::to_string(config.n_d) + " decoder states");
  }
  if (y_prev_id >= static_cast<int>(config.tgt_vocab_size)) {
    throw DomainError("decode_step: id " + std::to_string(y_prev_id) + " outside target vocabulary");
  }
  Tape tape;
  const BoundModel model = bind_model(tape, params);
  DecoderState prev;
  for (const LstmState& st : states) {
    prev.h.push_back(tape.constant(row_of(st.h, config.cell_width, "decoder h")));
    prev.s.push_back(tape.constant(row_of(st.s, config.cell_width, "decoder s")));
  }
  const Var y_prev = y_prev_id < 0
                         ? tape.constant(Matrix::Zero(1, static_cast<Eigen::Index>(config.emb_dim)))
                         : tape.gather_rows(model.tgt_embedding, std::span<const int>(&y_prev_id, 1));
  const Var c = tape.constant(row_of(context, config.context_width(), "decode_step context"));
  const DecoderStep step = decode_step(tape, model, config, y_prev, c, prev, dropout_rng);
  DecodeResult out;
  out.logits = row_tensor(tape.value(step.logits));
  for (std::size_t k = 0; k < step.state.h.size(); ++k) {
    out.states.push_back({row_tensor(tape.value(step.state.h[k])), row_tensor(tape.value(step.state.s[k]))});
  }
  out.h1 = out.states.front().h;
  return out;
}

NllResult sequence_nll(std::span<const int> source_ids, std::span<const int> target_ids, const ModelParams& params,
                       const ModelConfig& config, SeededRng* dropout_rng) {
  if (target_ids.empty()) throw DomainError("sequence_nll: empty target");
  if (source_ids.empty()) throw DomainError("sequence_nll: empty source");
  const PaddedIds src = single_row(source_ids);
  const PaddedIds tgt = single_row(target_ids);
  Tape tape;
  const BoundModel model = bind_model(tape, params);
  const BatchLoss loss = sequence_loss(tape, model, config, src, tgt, dropout_rng);
  return {tape.value(loss.loss)(0, 0), loss.correct[0]};
}

}  // namespace ffnmt
