#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffnmt/corpus.hpp"
#include "ffnmt/model.hpp"

namespace ffnmt {

/// Corpus-level BLEU with multi-bleu semantics: single reference, n <= 4,
/// no smoothing, percentage scale.
struct BleuReport {
  double bleu = 0.0;
  std::array<double, 4> precisions{};
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  double brevity_penalty = 0.0;
  long candidate_length = 0;
  long reference_length = 0;
};

BleuReport bleu(std::span<const TokenLine> candidates, std::span<const TokenLine> references);

/// "BLEU = 34.12, 70.1/45.0/30.2/20.3 (BP=1.000, ratio=1.010, hyp_len=..., ref_len=...)"
std::string format_bleu(const BleuReport& report);

/// Teacher-forced token error rate over `corpus`.
double token_error_rate(const ModelParams& params, const ModelConfig& config, const EncodedCorpus& corpus);

struct LengthBucket {
  std::size_t min_length = 0;  // inclusive source length range
  std::size_t max_length = 0;
  std::size_t count = 0;
  std::optional<BleuReport> report;  // empty when the bucket holds no sentences
};

/// Buckets [1, w], [w+1, 2w], ... up to the longest source sentence.
std::vector<LengthBucket> length_bucket_bleu(std::span<const TokenLine> candidates, std::span<const TokenLine> references,
                                             std::span<const TokenLine> sources, std::size_t bucket_width);

struct UnkSubsetReport {
  std::optional<BleuReport> report;
  double ratio = 0.0;  // retained fraction in [0, 1]
  std::size_t retained = 0;
};

/// BLEU restricted to pairs whose reference is fully covered by `target_vocab`.
UnkSubsetReport unk_subset_score(std::span<const TokenLine> candidates, std::span<const TokenLine> references,
                                 const Vocabulary& target_vocab);

}  // namespace ffnmt
