#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ffnmt/generator.hpp"
#include "ffnmt/model.hpp"
#include "ffnmt/trainer.hpp"

namespace ffnmt::cli {

struct DataConfig {
  std::filesystem::path train_source;
  std::filesystem::path train_target;
  std::filesystem::path dev_source;
  std::filesystem::path dev_target;
  std::size_t source_vocab_size = 30000;  // budgets, specials excluded
  std::size_t target_vocab_size = 30000;
};

/// Everything a run needs, merged from defaults, the config file and
/// --set overrides (in that order).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  BeamConfig beam;
  DataConfig data;
};

struct KeyDoc {
  std::string key;  // "section.name"
  std::string default_value;
  std::string help;
};

/// Every recognized key with its default.
std::vector<KeyDoc> documented_keys();

/// Throws ConfigError naming the key when it is unknown or the value does
/// not parse.
void apply_setting(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);

/// "section.key=value"
void apply_override(RunConfig& config, const std::string& assignment);

/// Reads an INI file with [model], [train], [beam] and [data] sections.
/// Relative data paths resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ffnmt::cli
