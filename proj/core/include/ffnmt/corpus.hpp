#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ffnmt {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kEndId = 2;
inline constexpr int kReservedIds = 3;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kEndToken = "</s>";

using TokenLine = std::vector<std::string>;

/// Frequency-ranked token <-> id map. Ids 0..2 are pad, unk and end; the
/// ranked tokens follow from id 3. The start mark is not a vocabulary item
/// (the decoder uses a zero embedding for it).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> ranked);

  std::size_t size() const { return kReservedIds + ranked_.size(); }
  const std::vector<std::string>& ranked() const { return ranked_; }

  bool contains(std::string_view token) const;
  /// Id of `token`, or kUnkId when it is out of vocabulary.
  int id(std::string_view token) const;
  /// Token for `id`; specials map to their literals. Throws DomainError
  /// for ids outside [0, size()).
  const std::string& token(int id) const;

  std::vector<int> encode_line(std::span<const std::string> tokens) const;
  TokenLine decode_line(std::span<const int> ids) const;

  /// One token per line in rank order; specials are implicit.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return ranked_ == other.ranked_; }

 private:
  std::vector<std::string> ranked_;
  std::unordered_map<std::string, int> index_;
};

/// Top-k tokens by descending frequency, ties broken lexicographically.
Vocabulary build_vocab(std::span<const TokenLine> lines, std::size_t k);

TokenLine split_tokens(std::string_view line);
std::string join_tokens(std::span<const std::string> tokens);

std::vector<TokenLine> read_token_lines(const std::filesystem::path& path);
void write_token_lines(const std::filesystem::path& path, std::span<const TokenLine> lines);

struct ParallelCorpus {
  std::vector<TokenLine> source;
  std::vector<TokenLine> target;

  std::size_t size() const { return source.size(); }
};

/// Loads line-aligned files. Pairs with an empty side are dropped and
/// counted in `dropped` when it is non-null.
ParallelCorpus load_parallel(const std::filesystem::path& source, const std::filesystem::path& target,
                             std::size_t* dropped = nullptr);
void save_parallel(const ParallelCorpus& corpus, const std::filesystem::path& source,
                   const std::filesystem::path& target);

/// Id-encoded corpus; every target ends with kEndId.
struct EncodedCorpus {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<int>> target;

  std::size_t size() const { return source.size(); }
};

EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& source_vocab,
                            const Vocabulary& target_vocab);

enum class TaskKind { copy, reverse, lexicon_swap };

TaskKind parse_task_kind(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  /// Number of distinct content tokens, written as "0" .. "vocab_size-1".
  std::size_t vocab_size = 16;
  std::size_t min_length = 1;
  std::size_t max_length = 10;
  std::size_t count = 100;
  std::uint64_t seed = 1;
  /// Seed of the lexicon_swap bijection; train and dev sets share it.
  std::uint64_t lexicon_seed = 0;
};

/// The token bijection used by lexicon_swap for `lexicon_seed`.
std::vector<int> lexicon_permutation(std::size_t vocab_size, std::uint64_t lexicon_seed);
/// The fixed local reordering of lexicon_swap: swaps positions (4i, 4i+1).
void swap_fixed_pairs(TokenLine& line);

ParallelCorpus synth_task(const TaskSpec& spec);

}  // namespace ffnmt
