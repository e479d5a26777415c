#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ffnmt::cli {

struct TrainArgs {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  int jobs = 1;
};

struct TranslateArgs {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path input;
  std::filesystem::path output;  // empty: stdout
  std::size_t beam = 3;
  std::size_t max_len = 0;
  std::filesystem::path posunk_map;
  int jobs = 1;
};

struct ScoreArgs {
  std::filesystem::path candidates;
  std::filesystem::path references;
  std::filesystem::path sources;
  std::size_t bucket_width = 10;
  std::filesystem::path target_vocab;
  bool csv = false;
};

struct TerArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path source;
  std::filesystem::path target;
};

struct ProbeArgs {
  int depth = 9;
  std::size_t width = 8;
  std::size_t length = 20;
  int trials = 20;
  std::uint64_t seed = 1;
  std::filesystem::path output;
};

struct GradcheckArgs {
  std::string variant = "both";
  int n_e = 2;
  int n_d = 2;
  std::size_t width = 4;
  std::size_t emb = 4;
  std::size_t vocab = 20;
  int instances = 10;
  std::uint64_t seed = 1;
  double tolerance = 1e-6;
};

struct MakeTaskArgs {
  std::string kind = "copy";
  std::size_t vocab = 16;
  std::size_t min_length = 1;
  std::size_t max_length = 10;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  std::uint64_t lexicon_seed = 0;
  std::filesystem::path prefix;
};

int command_train(const TrainArgs& args);
int command_translate(const TranslateArgs& args);
int command_score(const ScoreArgs& args);
int command_ter(const TerArgs& args);
int command_probe(const ProbeArgs& args);
int command_gradcheck(const GradcheckArgs& args);
int command_make_task(const MakeTaskArgs& args);
int command_config_keys();

}  // namespace ffnmt::cli
