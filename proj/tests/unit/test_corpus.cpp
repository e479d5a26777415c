#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "ffnmt/corpus.hpp"
#include "ffnmt/errors.hpp"
#include "test_support.hpp"

using namespace ffnmt;
using ffnmt::test::scratch_dir;

TEST(Vocabulary, ReservedIdsAndLookup) {
  const Vocabulary v({"the", "cat"});
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.id("the"), 3);
  EXPECT_EQ(v.id("cat"), 4);
  EXPECT_EQ(v.id("dog"), kUnkId);
  EXPECT_EQ(v.token(kPadId), "<pad>");
  EXPECT_EQ(v.token(kUnkId), "<unk>");
  EXPECT_EQ(v.token(kEndId), "</s>");
  EXPECT_THROW(v.token(5), DomainError);
  EXPECT_THROW(v.token(-1), DomainError);
  EXPECT_THROW(Vocabulary({"a", "a"}), InputError);
  EXPECT_THROW(Vocabulary({"<unk>"}), InputError);
}

TEST(Vocabulary, BuildRanksByFrequencyThenLexically) {
  const std::vector<TokenLine> lines{{"b", "a", "c", "b"}, {"d", "c", "b", "a"}, {"e"}};
  const Vocabulary v = build_vocab(lines, 4);
  // Counts: b 3, a 2, c 2, d 1, e 1.
  EXPECT_EQ(v.ranked(), (std::vector<std::string>{"b", "a", "c", "d"}));
  EXPECT_EQ(build_vocab(lines, 100).size(), 3u + 5u);
  EXPECT_THROW(build_vocab(lines, 0), ConfigError);
  EXPECT_THROW(build_vocab(std::vector<TokenLine>{}, 3), InputError);
}

TEST(Vocabulary, EncodeDecodeRoundTrip) {
  const Vocabulary v({"x", "y"});
  const TokenLine line{"x", "z", "y"};
  const auto ids = v.encode_line(line);
  EXPECT_EQ(ids, (std::vector<int>{3, kUnkId, 4}));
  EXPECT_EQ(v.decode_line(ids), (TokenLine{"x", "<unk>", "y"}));
}

TEST(Vocabulary, SaveLoad) {
  const auto dir = scratch_dir("vocab");
  const Vocabulary v({"alpha", "beta", "γ"});
  v.save(dir / "v.txt");
  EXPECT_EQ(Vocabulary::load(dir / "v.txt"), v);
  EXPECT_THROW(Vocabulary::load(dir / "none.txt"), InputError);
}

TEST(Tokens, SplitAndJoin) {
  EXPECT_EQ(split_tokens("  a\tb  c \r"), (TokenLine{"a", "b", "c"}));
  EXPECT_TRUE(split_tokens("   ").empty());
  EXPECT_EQ(join_tokens(TokenLine{"a", "b"}), "a b");
}

TEST(ParallelCorpus, LoadDropsEmptyPairs) {
  const auto dir = scratch_dir("parallel");
  {
    std::ofstream s(dir / "s"), t(dir / "t");
    s << "a b\n\nc\nd\n";
    t << "x\ny\n\nz w\n";
  }
  std::size_t dropped = 0;
  const ParallelCorpus c = load_parallel(dir / "s", dir / "t", &dropped);
  EXPECT_EQ(dropped, 2u);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.target[1], (TokenLine{"z", "w"}));
  {
    std::ofstream t(dir / "short");
    t << "x\n";
  }
  EXPECT_THROW(load_parallel(dir / "s", dir / "short"), InputError);
  EXPECT_THROW(load_parallel(dir / "s", dir / "missing"), InputError);
}

TEST(ParallelCorpus, EncodeAppendsEndMark) {
  ParallelCorpus c;
  c.source = {{"a", "b"}};
  c.target = {{"x"}};
  const Vocabulary v({"a", "x"});
  const EncodedCorpus e = encode_corpus(c, v, v);
  EXPECT_EQ(e.source[0], (std::vector<int>{3, kUnkId}));
  EXPECT_EQ(e.target[0], (std::vector<int>{4, kEndId}));
}

TEST(SyntheticTasks, CopyAndReverse) {
  TaskSpec spec;
  spec.count = 50;
  spec.min_length = 2;
  spec.max_length = 6;
  const ParallelCorpus copy = synth_task(spec);
  for (std::size_t i = 0; i < copy.size(); ++i) {
    EXPECT_EQ(copy.source[i], copy.target[i]);
    EXPECT_GE(copy.source[i].size(), 2u);
    EXPECT_LE(copy.source[i].size(), 6u);
  }
  spec.kind = TaskKind::reverse;
  const ParallelCorpus rev = synth_task(spec);
  EXPECT_EQ(rev.source, copy.source);
  TokenLine r = rev.source[0];
  std::reverse(r.begin(), r.end());
  EXPECT_EQ(rev.target[0], r);
}

TEST(SyntheticTasks, LexiconSwap) {
  TaskSpec spec;
  spec.kind = TaskKind::lexicon_swap;
  spec.vocab_size = 10;
  spec.count = 40;
  spec.lexicon_seed = 3;
  const ParallelCorpus c = synth_task(spec);
  const auto perm = lexicon_permutation(10, 3);
  EXPECT_EQ(std::set<int>(perm.begin(), perm.end()).size(), 10u);
  for (std::size_t i = 0; i < c.size(); ++i) {
    TokenLine mapped;
    for (const auto& t : c.source[i]) mapped.push_back(std::to_string(perm[std::stoul(t)]));
    swap_fixed_pairs(mapped);
    EXPECT_EQ(mapped, c.target[i]);
  }
  TokenLine line{"a", "b", "c", "d", "e", "f"};
  swap_fixed_pairs(line);
  EXPECT_EQ(line, (TokenLine{"b", "a", "c", "d", "f", "e"}));
  // The bijection depends only on the lexicon seed.
  spec.seed = 99;
  const ParallelCorpus other = synth_task(spec);
  EXPECT_NE(other.source, c.source);
  EXPECT_EQ(lexicon_permutation(10, 3), perm);
  EXPECT_NE(lexicon_permutation(10, 4), perm);
}

TEST(SyntheticTasks, Validation) {
  TaskSpec spec;
  spec.vocab_size = 1;
  EXPECT_THROW(synth_task(spec), ConfigError);
  spec = TaskSpec{};
  spec.min_length = 5;
  spec.max_length = 4;
  EXPECT_THROW(synth_task(spec), ConfigError);
  EXPECT_THROW(parse_task_kind("sort"), ConfigError);
  EXPECT_EQ(parse_task_kind("lexicon_swap"), TaskKind::lexicon_swap);
}
