#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ffnmt/corpus.hpp"
#include "ffnmt/model.hpp"

namespace ffnmt {

struct BeamConfig {
  std::size_t beam_size = 3;
  /// Emission cap including the end mark; 0 means 3 * source length + 10.
  std::size_t max_len = 0;

  void validate() const;
  std::size_t cap(std::size_t source_length) const { return max_len ? max_len : 3 * source_length + 10; }
};

struct Hypothesis {
  std::vector<int> tokens;  // ends with kEndId when finished
  double score = 0.0;       // total log-likelihood
  std::vector<LstmState> states;
  Tensor h1;
  /// Source position with the largest attention weight at each step (Deep-Att only).
  std::vector<int> attention;
  bool finished = false;

  /// Tokens without the trailing end mark.
  std::vector<int> output() const;
};

struct BeamResult {
  /// Finished hypotheses by descending score; if none finished, the best
  /// unfinished one alone.
  std::vector<Hypothesis> hypotheses;
  bool finished = true;

  const Hypothesis& best() const { return hypotheses.front(); }
};

struct ModelRef {
  const ModelParams* params;
  const ModelConfig* config;
};

BeamResult beam_search(std::span<const int> source_ids, const ModelParams& params, const ModelConfig& config,
                       const BeamConfig& beam = {});

/// Averages the member distributions in probability space at every
/// expansion. A single member reproduces beam_search exactly.
BeamResult ensemble_beam_search(std::span<const int> source_ids, std::span<const ModelRef> models,
                                const BeamConfig& beam = {});

/// Best hypothesis per sentence; one member runs beam_search, several run
/// the ensemble. Sentences are spread over `jobs` threads.
std::vector<Hypothesis> translate_corpus(std::span<const std::vector<int>> sources, std::span<const ModelRef> models,
                                         const BeamConfig& beam = {}, int jobs = 1);

/// Step-wise argmax decoding.
Hypothesis greedy_decode(std::span<const int> source_ids, const ModelParams& params, const ModelConfig& config,
                         std::size_t max_len = 0);

using WordMap = std::unordered_map<std::string, std::string>;

/// Reads "source<TAB>target" lines.
WordMap load_word_map(const std::filesystem::path& path);

/// Replaces each emitted unk with the mapped translation of the attended
/// source word, or the source word itself when unmapped.
TokenLine posunk_replace(const Hypothesis& hyp, const Vocabulary& target_vocab, std::span<const std::string> source_tokens,
                         const WordMap& mapping, Variant variant);

}  // namespace ffnmt
