#pragma once

#include <filesystem>
#include <string>

#include "ffnmt/corpus.hpp"
#include "ffnmt/model.hpp"

namespace ffnmt {

// Checkpoint container (all integers little-endian):
//   magic      8 bytes  "FFNMTCKP"
//   version    u32      kCheckpointVersion
//   config     u32 byte length + UTF-8 key=value lines (model configuration)
//   vocab x2   u32 token count + per token (u32 length + bytes); source then target
//   params     u32 record count + per record:
//                u32 name length + name, u32 rank, u64 dims[rank],
//                f64 values in row-major order
inline constexpr char kCheckpointMagic[8] = {'F', 'F', 'N', 'M', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
};

std::string serialize_model_config(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params,
                     const Vocabulary& source_vocab = {}, const Vocabulary& target_vocab = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ffnmt
