#include "ffnmt/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "ffnmt/errors.hpp"
#include "ffnmt/trainer.hpp"

namespace ffnmt {
namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngrams(const TokenLine& line, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= line.size(); ++i) {
    ++counts[std::vector<std::string>(line.begin() + static_cast<std::ptrdiff_t>(i),
                                      line.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InputError(std::string(what) + ": " + std::to_string(a) + " candidate lines vs " + std::to_string(b) +
                     " reference lines");
  }
}

}  // namespace

BleuReport bleu(std::span<const TokenLine> candidates, std::span<const TokenLine> references) {
  require_aligned(candidates.size(), references.size(), "bleu");
  BleuReport r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenLine& cand = candidates[i];
    const TokenLine& ref = references[i];
    r.candidate_length += static_cast<long>(cand.size());
    r.reference_length += static_cast<long>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      if (cand.size() < n) continue;
      r.totals[n - 1] += static_cast<long>(cand.size() - n + 1);
      const NgramCounts ref_counts = ngrams(ref, n);
      for (const auto& [gram, count] : ngrams(cand, n)) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] ? 100.0 * static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    if (r.matches[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]));
    }
  }
  if (r.candidate_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.candidate_length < r.reference_length) {
    r.brevity_penalty =
        std::exp(1.0 - static_cast<double>(r.reference_length) / static_cast<double>(r.candidate_length));
  } else {
    r.brevity_penalty = 1.0;
  }
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

std::string format_bleu(const BleuReport& r) {
  char buf[256];
  const double ratio =
      r.reference_length ? static_cast<double>(r.candidate_length) / static_cast<double>(r.reference_length) : 0.0;
  std::snprintf(buf, sizeof buf, "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%ld, ref_len=%ld)",
                r.bleu, r.precisions[0], r.precisions[1], r.precisions[2], r.precisions[3], r.brevity_penalty, ratio,
                r.candidate_length, r.reference_length);
  return buf;
}

double token_error_rate(const ModelParams& params, const ModelConfig& config, const EncodedCorpus& corpus) {
  if (corpus.size() == 0) throw InputError("token_error_rate: empty corpus");
  return evaluate_corpus(params, config, corpus).token_error_rate();
}

std::vector<LengthBucket> length_bucket_bleu(std::span<const TokenLine> candidates, std::span<const TokenLine> references,
                                             std::span<const TokenLine> sources, std::size_t bucket_width) {
  require_aligned(candidates.size(), references.size(), "length_bucket_bleu");
  if (sources.size() != candidates.size()) throw InputError("length_bucket_bleu: source line count differs");
  if (bucket_width == 0) throw ConfigError("bucket width must be positive");
  std::size_t longest = 1;
  for (const auto& s : sources) longest = std::max(longest, s.size());
  const std::size_t n_buckets = (longest - 1) / bucket_width + 1;
  std::vector<std::vector<TokenLine>> cand(n_buckets), ref(n_buckets);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::size_t len = std::max<std::size_t>(sources[i].size(), 1);
    const std::size_t b = (len - 1) / bucket_width;
    cand[b].push_back(candidates[i]);
    ref[b].push_back(references[i]);
  }
  std::vector<LengthBucket> out(n_buckets);
  for (std::size_t b = 0; b < n_buckets; ++b) {
    out[b].min_length = b * bucket_width + 1;
    out[b].max_length = (b + 1) * bucket_width;
    out[b].count = cand[b].size();
    if (!cand[b].empty()) out[b].report = bleu(cand[b], ref[b]);
  }
  return out;
}

UnkSubsetReport unk_subset_score(std::span<const TokenLine> candidates, std::span<const TokenLine> references,
                                 const Vocabulary& target_vocab) {
  require_aligned(candidates.size(), references.size(), "unk_subset_score");
  std::vector<TokenLine> cand, ref;
  for (std::size_t i = 0; i < references.size(); ++i) {
    const bool covered = std::all_of(references[i].begin(), references[i].end(),
                                     [&](const std::string& t) { return target_vocab.contains(t); });
    if (!covered || target_vocab.ranked().empty()) continue;
    cand.push_back(candidates[i]);
    ref.push_back(references[i]);
  }
  UnkSubsetReport out;
  out.retained = cand.size();
  out.ratio = references.empty() ? 0.0 : static_cast<double>(cand.size()) / static_cast<double>(references.size());
  if (!cand.empty()) out.report = bleu(cand, ref);
  return out;
}

}  // namespace ffnmt
