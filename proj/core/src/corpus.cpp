#include "ffnmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ffnmt/errors.hpp"
#include "ffnmt/rng.hpp"

namespace ffnmt {
namespace {

const std::string& special_token(int id) {
  static const std::string pad(kPadToken), unk(kUnkToken), end(kEndToken);
  switch (id) {
    case kPadId: return pad;
    case kUnkId: return unk;
    default: return end;
  }
}

bool is_special(std::string_view token) {
  return token == kPadToken || token == kUnkToken || token == kEndToken;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> ranked) : ranked_(std::move(ranked)) {
  for (std::size_t i = 0; i < ranked_.size(); ++i) {
    if (is_special(ranked_[i])) throw InputError("vocabulary lists reserved token '" + ranked_[i] + "'");
    if (!index_.emplace(ranked_[i], kReservedIds + static_cast<int>(i)).second) {
      throw InputError("duplicate vocabulary token '" + ranked_[i] + "'");
    }
  }
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw DomainError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  if (id < kReservedIds) return special_token(id);
  return ranked_[static_cast<std::size_t>(id - kReservedIds)];
}

std::vector<int> Vocabulary::encode_line(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

TokenLine Vocabulary::decode_line(std::span<const int> ids) const {
  TokenLine out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary file " + path.string());
  for (const auto& t : ranked_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read vocabulary file " + path.string());
  std::vector<std::string> ranked;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ranked.push_back(line);
  }
  return Vocabulary(std::move(ranked));
}

Vocabulary build_vocab(std::span<const TokenLine> lines, std::size_t k) {
  if (k < 1) throw ConfigError("vocabulary size budget must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (const auto& t : line) {
      if (!is_special(t)) ++counts[t];
    }
  }
  if (counts.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is lexicographic, so a stable sort by count keeps
  // the declared tie-break.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.resize(k);
  std::vector<std::string> tokens;
  for (auto& [t, n] : ranked) tokens.push_back(t);
  return Vocabulary(std::move(tokens));
}

TokenLine split_tokens(std::string_view line) {
  TokenLine out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (i < line.size()) {
    while (i < line.size() && space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<TokenLine> read_token_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<TokenLine> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(split_tokens(line));
  return lines;
}

void write_token_lines(const std::filesystem::path& path, std::span<const TokenLine> lines) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& l : lines) out << join_tokens(l) << '\n';
}

ParallelCorpus load_parallel(const std::filesystem::path& source, const std::filesystem::path& target,
                             std::size_t* dropped) {
  auto src = read_token_lines(source);
  auto tgt = read_token_lines(target);
  if (src.size() != tgt.size()) {
    throw InputError("parallel files are not line-aligned: " + std::to_string(src.size()) + " vs " +
                     std::to_string(tgt.size()) + " lines");
  }
  ParallelCorpus corpus;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].empty() || tgt[i].empty()) {
      ++skipped;
      continue;
    }
    corpus.source.push_back(std::move(src[i]));
    corpus.target.push_back(std::move(tgt[i]));
  }
  if (dropped) *dropped = skipped;
  return corpus;
}

void save_parallel(const ParallelCorpus& corpus, const std::filesystem::path& source,
                   const std::filesystem::path& target) {
  write_token_lines(source, corpus.source);
  write_token_lines(target, corpus.target);
}

EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& source_vocab,
                            const Vocabulary& target_vocab) {
  if (corpus.source.size() != corpus.target.size()) throw InputError("corpus sides differ in length");
  EncodedCorpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out.source.push_back(source_vocab.encode_line(corpus.source[i]));
    auto t = target_vocab.encode_line(corpus.target[i]);
    t.push_back(kEndId);
    out.target.push_back(std::move(t));
  }
  return out;
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "lexicon_swap" || name == "lexicon-swap") return TaskKind::lexicon_swap;
  throw ConfigError("unknown task kind '" + name + "' (expected copy, reverse or lexicon_swap)");
}

std::vector<int> lexicon_permutation(std::size_t vocab_size, std::uint64_t lexicon_seed) {
  std::vector<int> perm(vocab_size);
  std::iota(perm.begin(), perm.end(), 0);
  SeededRng rng(mix_seed(lexicon_seed ^ 0x6c6578696366ULL));
  rng.shuffle(std::span<int>(perm));
  return perm;
}

void swap_fixed_pairs(TokenLine& line) {
  for (std::size_t i = 0; i + 1 < line.size(); i += 4) std::swap(line[i], line[i + 1]);
}

ParallelCorpus synth_task(const TaskSpec& spec) {
  if (spec.vocab_size < 2) throw ConfigError("synthetic vocabulary needs at least 2 tokens");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) {
    throw ConfigError("invalid synthetic length range [" + std::to_string(spec.min_length) + ", " +
                      std::to_string(spec.max_length) + "]");
  }
  if (spec.count == 0) throw ConfigError("synthetic corpus size must be positive");
  SeededRng rng(spec.seed);
  const std::vector<int> perm =
      spec.kind == TaskKind::lexicon_swap ? lexicon_permutation(spec.vocab_size, spec.lexicon_seed) : std::vector<int>{};
  ParallelCorpus corpus;
  for (std::size_t n = 0; n < spec.count; ++n) {
    const std::size_t len = spec.min_length + rng.uniform_index(spec.max_length - spec.min_length + 1);
    std::vector<int> ids(len);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_index(spec.vocab_size));
    TokenLine src, tgt;
    for (int id : ids) src.push_back(std::to_string(id));
    switch (spec.kind) {
      case TaskKind::copy:
        tgt = src;
        break;
      case TaskKind::reverse:
        tgt.assign(src.rbegin(), src.rend());
        break;
      case TaskKind::lexicon_swap:
        for (int id : ids) tgt.push_back(std::to_string(perm[static_cast<std::size_t>(id)]));
        swap_fixed_pairs(tgt);
        break;
    }
    corpus.source.push_back(std::move(src));
    corpus.target.push_back(std::move(tgt));
  }
  return corpus;
}

}  // namespace ffnmt
