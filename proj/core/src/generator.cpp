#include "ffnmt/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ffnmt/errors.hpp"
#include "parallel.hpp"

namespace ffnmt {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Encoder-side values for one source sentence and one model.
struct SourceMemory {
  Matrix fixed_context;  // Deep-ED, [1 x |e|]
  std::vector<Matrix> projected;
  std::vector<Matrix> keys;
};

SourceMemory encode_source(std::span<const int> ids, const ModelParams& params, const ModelConfig& config) {
  const std::vector<std::vector<int>> one{std::vector<int>(ids.begin(), ids.end())};
  const PaddedIds src = pad_sequences(one, kPadId);
  Tape tape;
  const BoundModel bound = bind_model(tape, params);
  const EncoderStates enc = encode(tape, bound, config, src, nullptr);
  SourceMemory mem;
  if (config.variant == Variant::deep_ed) {
    mem.fixed_context = tape.value(interface_ed(tape, config, enc));
  } else {
    const AttentionMemory am = attention_memory(tape, bound, config, enc);
    for (Var v : am.projected) mem.projected.push_back(tape.value(v));
    for (Var v : am.keys) mem.keys.push_back(tape.value(v));
  }
  return mem;
}

/// Decoder state of one hypothesis under one model, one row per layer.
struct MemberState {
  std::vector<Matrix> h;
  std::vector<Matrix> s;
};

struct Entry {
  std::vector<int> tokens;
  double score = 0.0;
  std::vector<MemberState> members;
  std::vector<int> attention;
};

struct StepResult {
  Matrix log_probs;                  // [B x V]
  std::vector<MemberState> states;   // per row
  std::vector<int> attention;        // per row, -1 without attention
};

StepResult run_step(const ModelParams& params, const ModelConfig& config, const SourceMemory& mem,
                    const std::vector<const Entry*>& live, std::size_t member) {
  const Eigen::Index rows = static_cast<Eigen::Index>(live.size());
  Tape tape;
  const BoundModel bound = bind_model(tape, params);
  DecoderState prev;
  for (int k = 0; k < config.n_d; ++k) {
    Matrix h(rows, static_cast<Eigen::Index>(config.cell_width)), s(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      h.row(r) = live[static_cast<std::size_t>(r)]->members[member].h[static_cast<std::size_t>(k)];
      s.row(r) = live[static_cast<std::size_t>(r)]->members[member].s[static_cast<std::size_t>(k)];
    }
    prev.h.push_back(tape.constant(std::move(h)));
    prev.s.push_back(tape.constant(std::move(s)));
  }

  // All live hypotheses share a length, so either all are at the start or none.
  Var y_prev;
  if (live.front()->tokens.empty()) {
    y_prev = tape.constant(Matrix::Zero(rows, static_cast<Eigen::Index>(config.emb_dim)));
  } else {
    std::vector<int> ids;
    for (const Entry* e : live) ids.push_back(e->tokens.back());
    y_prev = tape.gather_rows(bound.tgt_embedding, ids);
  }

  StepResult out;
  Var context;
  if (config.variant == Variant::deep_ed) {
    context = tape.constant(mem.fixed_context.replicate(rows, 1));
  } else {
    AttentionMemory am;
    for (const Matrix& p : mem.projected) am.projected.push_back(tape.constant(p.replicate(rows, 1)));
    for (const Matrix& k : mem.keys) am.keys.push_back(tape.constant(k.replicate(rows, 1)));
    am.valid = Matrix::Ones(rows, static_cast<Eigen::Index>(mem.projected.size()));
    const AttentionOutput att = interface_att(tape, bound, am, prev.h[0]);
    context = att.context;
    const Matrix& alpha = tape.value(att.alpha);
    for (Eigen::Index r = 0; r < rows; ++r) {
      Eigen::Index best;
      alpha.row(r).maxCoeff(&best);
      out.attention.push_back(static_cast<int>(best));
    }
  }
  if (out.attention.empty()) out.attention.assign(live.size(), -1);

  const DecoderStep step = decode_step(tape, bound, config, y_prev, context, prev, nullptr);
  const Matrix& logits = tape.value(step.logits);
  out.log_probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.log_probs.row(r) = logits.row(r).array() - lse;
  }
  out.states.resize(live.size());
  for (std::size_t r = 0; r < live.size(); ++r) {
    for (int k = 0; k < config.n_d; ++k) {
      out.states[r].h.push_back(tape.value(step.state.h[static_cast<std::size_t>(k)]).row(static_cast<Eigen::Index>(r)));
      out.states[r].s.push_back(tape.value(step.state.s[static_cast<std::size_t>(k)]).row(static_cast<Eigen::Index>(r)));
    }
  }
  return out;
}

struct Search {
  std::span<const ModelRef> models;
  std::vector<SourceMemory> memories;
  std::size_t vocab = 0;

  Search(std::span<const int> source_ids, std::span<const ModelRef> refs) : models(refs) {
    if (source_ids.empty()) throw DomainError("decode: empty source");
    if (refs.empty()) throw ConfigError("decode: no models given");
    vocab = refs[0].config->tgt_vocab_size;
    for (const ModelRef& m : refs) {
      if (m.config->tgt_vocab_size != vocab) {
        throw ConfigError("ensemble members disagree on the target vocabulary size");
      }
    }
    for (const ModelRef& m : refs) memories.push_back(encode_source(source_ids, *m.params, *m.config));
  }

  Entry start() const {
    Entry e;
    for (const ModelRef& m : models) {
      const Matrix zero = Matrix::Zero(1, static_cast<Eigen::Index>(m.config->cell_width));
      e.members.push_back({std::vector<Matrix>(static_cast<std::size_t>(m.config->n_d), zero),
                           std::vector<Matrix>(static_cast<std::size_t>(m.config->n_d), zero)});
    }
    return e;
  }

  /// Scores for every live entry; member states come back per row.
  Matrix expand(const std::vector<const Entry*>& live, std::vector<std::vector<MemberState>>& states,
                std::vector<int>& attention) const {
    Matrix scores;
    states.assign(live.size(), std::vector<MemberState>(models.size()));
    for (std::size_t j = 0; j < models.size(); ++j) {
      StepResult r = run_step(*models[j].params, *models[j].config, memories[j], live, j);
      if (j == 0) {
        attention = r.attention;
        scores = models.size() == 1 ? r.log_probs : Matrix(r.log_probs.array().exp());
      } else {
        scores.array() += r.log_probs.array().exp();
      }
      for (std::size_t i = 0; i < live.size(); ++i) states[i][j] = std::move(r.states[i]);
    }
    if (models.size() > 1) scores = (scores.array() / static_cast<double>(models.size())).log();
    // The padding symbol is never emitted.
    scores.col(kPadId).setConstant(kNegInf);
    return scores;
  }
};

Hypothesis to_hypothesis(Entry e, bool finished) {
  Hypothesis h;
  h.tokens = std::move(e.tokens);
  h.score = e.score;
  h.attention = std::move(e.attention);
  h.finished = finished;
  const MemberState& ms = e.members.front();
  for (std::size_t k = 0; k < ms.h.size(); ++k) {
    h.states.push_back({Tensor::from_matrix({static_cast<std::size_t>(ms.h[k].cols())}, ms.h[k]),
                        Tensor::from_matrix({static_cast<std::size_t>(ms.s[k].cols())}, ms.s[k])});
  }
  if (!ms.h.empty()) h.h1 = h.states.front().h;
  return h;
}

}  // namespace

void BeamConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam size must be >= 1");
}

std::vector<int> Hypothesis::output() const {
  std::vector<int> out = tokens;
  if (!out.empty() && out.back() == kEndId) out.pop_back();
  return out;
}

BeamResult beam_search(std::span<const int> source_ids, const ModelParams& params, const ModelConfig& config,
                       const BeamConfig& beam) {
  const ModelRef ref{&params, &config};
  return ensemble_beam_search(source_ids, std::span<const ModelRef>(&ref, 1), beam);
}

BeamResult ensemble_beam_search(std::span<const int> source_ids, std::span<const ModelRef> models,
                                const BeamConfig& beam) {
  beam.validate();
  const Search search(source_ids, models);
  const std::size_t cap = beam.cap(source_ids.size());

  std::vector<Entry> live{search.start()};
  std::vector<Entry> finished;
  for (std::size_t t = 0; t < cap && !live.empty(); ++t) {
    std::vector<const Entry*> ptrs;
    for (const Entry& e : live) ptrs.push_back(&e);
    std::vector<std::vector<MemberState>> states;
    std::vector<int> attention;
    const Matrix scores = search.expand(ptrs, states, attention);

    struct Candidate {
      double score;
      double step;
      std::size_t entry;
      int token;
    };
    std::vector<Candidate> cands;
    cands.reserve(live.size() * search.vocab);
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (Eigen::Index v = 0; v < scores.cols(); ++v) {
        const double lp = scores(static_cast<Eigen::Index>(i), v);
        if (lp == kNegInf) continue;
        cands.push_back({live[i].score + lp, lp, i, static_cast<int>(v)});
      }
    }
    // Totals can round to the same double while the step terms differ, so the
    // step term breaks ties first; then earlier entries and lower ids.
    auto better = [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.step != b.step) return a.step > b.step;
      if (a.entry != b.entry) return a.entry < b.entry;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(beam.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);

    std::vector<Entry> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      Entry e;
      e.tokens = live[cand.entry].tokens;
      e.tokens.push_back(cand.token);
      e.score = cand.score;
      e.members = states[cand.entry];
      e.attention = live[cand.entry].attention;
      if (attention[cand.entry] >= 0) e.attention.push_back(attention[cand.entry]);
      (cand.token == kEndId ? finished : next).push_back(std::move(e));
    }
    live = std::move(next);

    if (!finished.empty()) {
      double best_finished = kNegInf, best_live = kNegInf;
      for (const Entry& e : finished) best_finished = std::max(best_finished, e.score);
      for (const Entry& e : live) best_live = std::max(best_live, e.score);
      // Scores only decrease as hypotheses grow, so no live entry can win.
      if (best_finished >= best_live) break;
    }
  }

  BeamResult result;
  if (finished.empty()) {
    result.finished = false;
    auto best = std::min_element(live.begin(), live.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
    result.hypotheses.push_back(to_hypothesis(std::move(*best), false));
    return result;
  }
  std::stable_sort(finished.begin(), finished.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
  for (Entry& e : finished) result.hypotheses.push_back(to_hypothesis(std::move(e), true));
  return result;
}

std::vector<Hypothesis> translate_corpus(std::span<const std::vector<int>> sources, std::span<const ModelRef> models,
                                         const BeamConfig& beam, int jobs) {
  std::vector<Hypothesis> out(sources.size());
  detail::parallel_for(sources.size(), jobs, [&](std::size_t i) {
    out[i] = ensemble_beam_search(sources[i], models, beam).hypotheses.front();
  });
  return out;
}

Hypothesis greedy_decode(std::span<const int> source_ids, const ModelParams& params, const ModelConfig& config,
                         std::size_t max_len) {
  const ModelRef ref{&params, &config};
  const Search search(source_ids, std::span<const ModelRef>(&ref, 1));
  const std::size_t cap = max_len ? max_len : 3 * source_ids.size() + 10;
  Entry e = search.start();
  for (std::size_t t = 0; t < cap; ++t) {
    std::vector<std::vector<MemberState>> states;
    std::vector<int> attention;
    const Matrix scores = search.expand({&e}, states, attention);
    Eigen::Index best;
    const double lp = scores.row(0).maxCoeff(&best);
    e.tokens.push_back(static_cast<int>(best));
    e.score += lp;
    e.members = std::move(states[0]);
    if (attention[0] >= 0) e.attention.push_back(attention[0]);
    if (best == kEndId) return to_hypothesis(std::move(e), true);
  }
  return to_hypothesis(std::move(e), false);
}

WordMap load_word_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read word map " + path.string());
  WordMap map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected 'source<TAB>target'");
    }
    map.emplace(line.substr(0, tab), line.substr(tab + 1));
  }
  return map;
}

TokenLine posunk_replace(const Hypothesis& hyp, const Vocabulary& target_vocab, std::span<const std::string> source_tokens,
                         const WordMap& mapping, Variant variant) {
  if (variant != Variant::deep_att) {
    throw UnsupportedError("PosUnk replacement needs per-step attention (Deep-Att models only)");
  }
  const std::vector<int> ids = hyp.output();
  TokenLine out;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] != kUnkId) {
      out.push_back(target_vocab.token(ids[j]));
      continue;
    }
    if (j >= hyp.attention.size()) throw DomainError("hypothesis lacks an attention trace for step " + std::to_string(j));
    const auto pos = static_cast<std::size_t>(hyp.attention[j]);
    if (pos >= source_tokens.size()) throw DomainError("attention points past the end of the source sentence");
    const std::string& word = source_tokens[pos];
    const auto it = mapping.find(word);
    out.push_back(it == mapping.end() ? word : it->second);
  }
  return out;
}

}  // namespace ffnmt
