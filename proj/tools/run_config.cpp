#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "ffnmt/errors.hpp"

namespace ffnmt::cli {
namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

struct Entry {
  std::string default_value;
  std::string help;
  Setter set;
};

[[noreturn]] void bad_value(const std::string& value, const char* expected) {
  throw ConfigError("'" + value + "' is not " + expected);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    bad_value(v, "a number");
  }
  if (used != v.size()) bad_value(v, "a number");
  return x;
}

template <class Int>
Int to_int(const std::string& v) {
  Int x{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(v, "a non-negative integer");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(v, "a boolean (true/false)");
}

std::string show(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

const std::map<std::string, Entry>& table() {
  static const std::map<std::string, Entry> entries = [] {
    const RunConfig d;
    std::map<std::string, Entry> t;
    // model
    t["model.variant"] = {variant_name(d.model.variant), "deep-att or deep-ed",
                          [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }};
    t["model.n_e"] = {std::to_string(d.model.n_e), "encoder layers per column",
                      [](RunConfig& c, const std::string& v) { c.model.n_e = to_int<int>(v); }};
    t["model.n_d"] = {std::to_string(d.model.n_d), "decoder layers",
                      [](RunConfig& c, const std::string& v) { c.model.n_d = to_int<int>(v); }};
    t["model.columns"] = {std::to_string(d.model.columns), "encoder columns (1 or 2)",
                          [](RunConfig& c, const std::string& v) { c.model.columns = to_int<int>(v); }};
    t["model.emb_dim"] = {std::to_string(d.model.emb_dim), "word embedding width",
                          [](RunConfig& c, const std::string& v) { c.model.emb_dim = to_int<std::size_t>(v); }};
    t["model.cell_width"] = {std::to_string(d.model.cell_width), "LSTM memory cells per layer",
                             [](RunConfig& c, const std::string& v) { c.model.cell_width = to_int<std::size_t>(v); }};
    t["model.attention_hidden"] = {
        "0", "alignment network width (0: cell_width)",
        [](RunConfig& c, const std::string& v) { c.model.attention_hidden = to_int<std::size_t>(v); }};
    t["model.projection_factor"] = {
        std::to_string(d.model.projection_factor), "Deep-Att context is |e| / projection_factor wide",
        [](RunConfig& c, const std::string& v) { c.model.projection_factor = to_int<std::size_t>(v); }};
    t["model.ff"] = {"true", "fast-forward connections",
                     [](RunConfig& c, const std::string& v) { c.model.ff_enabled = to_bool(v); }};
    // train
    t["train.lr_recurrent"] = {show(d.train.lr_recurrent), "learning rate of W_r and the peephole vectors",
                               [](RunConfig& c, const std::string& v) { c.train.lr_recurrent = to_double(v); }};
    t["train.lr_nonrecurrent"] = {show(d.train.lr_nonrecurrent), "learning rate of every other parameter",
                                  [](RunConfig& c, const std::string& v) { c.train.lr_nonrecurrent = to_double(v); }};
    t["train.l2"] = {show(d.train.l2), "L2 strength r (embeddings exempt)",
                     [](RunConfig& c, const std::string& v) { c.train.l2 = to_double(v); }};
    t["train.dropout"] = {show(d.train.dropout), "dropout ratio on the F-F h input",
                          [](RunConfig& c, const std::string& v) { c.train.dropout = to_double(v); }};
    t["train.batch_size"] = {std::to_string(d.train.batch_size), "sequences per batch",
                             [](RunConfig& c, const std::string& v) { c.train.batch_size = to_int<std::size_t>(v); }};
    t["train.max_epochs"] = {std::to_string(d.train.max_epochs), "passes over the training corpus",
                             [](RunConfig& c, const std::string& v) { c.train.max_epochs = to_int<int>(v); }};
    t["train.max_updates"] = {"0", "step cap (0: none)",
                              [](RunConfig& c, const std::string& v) { c.train.max_updates = to_int<long>(v); }};
    t["train.adam_beta1"] = {show(d.train.adam_beta1), "",
                             [](RunConfig& c, const std::string& v) { c.train.adam_beta1 = to_double(v); }};
    t["train.adam_beta2"] = {show(d.train.adam_beta2), "",
                             [](RunConfig& c, const std::string& v) { c.train.adam_beta2 = to_double(v); }};
    t["train.adam_eps"] = {show(d.train.adam_eps), "",
                           [](RunConfig& c, const std::string& v) { c.train.adam_eps = to_double(v); }};
    t["train.seed"] = {std::to_string(d.train.seed), "seed for init, batching and dropout",
                       [](RunConfig& c, const std::string& v) { c.train.seed = to_int<std::uint64_t>(v); }};
    t["train.checkpoint_every"] = {"0", "periodic checkpoint interval in steps (0: off)",
                                   [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = to_int<long>(v); }};
    t["train.eval_every"] = {"0", "dev evaluation interval in steps (0: each epoch)",
                             [](RunConfig& c, const std::string& v) { c.train.eval_every = to_int<long>(v); }};
    t["train.max_length"] = {"0", "skip training pairs longer than this (0: no limit)",
                             [](RunConfig& c, const std::string& v) { c.train.max_length = to_int<std::size_t>(v); }};
    t["train.abort_after_nonfinite"] = {
        "0", "abort after this many non-finite steps (0: never)",
        [](RunConfig& c, const std::string& v) { c.train.abort_after_nonfinite = to_int<int>(v); }};
    t["train.patience"] = {"0", "early stopping on dev loss (0: off)",
                           [](RunConfig& c, const std::string& v) { c.train.patience = to_int<int>(v); }};
    t["train.eval_bleu"] = {"true", "decode the dev set at each evaluation",
                            [](RunConfig& c, const std::string& v) { c.train.eval_bleu = to_bool(v); }};
    t["train.eval_beam"] = {std::to_string(d.train.eval_beam), "beam width for dev decoding",
                            [](RunConfig& c, const std::string& v) { c.train.eval_beam = to_int<std::size_t>(v); }};
    t["train.recurrent_init_std"] = {
        "0", "N(0, std^2) init for recurrent parameters (0: zero init)",
        [](RunConfig& c, const std::string& v) { c.train.recurrent_init_std = to_double(v); }};
    t["train.init_std"] = {show(d.train.init_std), "init deviation of non-recurrent parameters",
                           [](RunConfig& c, const std::string& v) { c.train.init_std = to_double(v); }};
    t["train.output_dir"] = {"", "checkpoints and metrics.csv go here",
                             [](RunConfig& c, const std::string& v) { c.train.output_dir = v; }};
    // beam
    t["beam.size"] = {std::to_string(d.beam.beam_size), "beam width",
                      [](RunConfig& c, const std::string& v) { c.beam.beam_size = to_int<std::size_t>(v); }};
    t["beam.max_len"] = {"0", "emission cap (0: 3 * source length + 10)",
                         [](RunConfig& c, const std::string& v) { c.beam.max_len = to_int<std::size_t>(v); }};
    // data
    t["data.train_source"] = {"", "", [](RunConfig& c, const std::string& v) { c.data.train_source = v; }};
    t["data.train_target"] = {"", "", [](RunConfig& c, const std::string& v) { c.data.train_target = v; }};
    t["data.dev_source"] = {"", "", [](RunConfig& c, const std::string& v) { c.data.dev_source = v; }};
    t["data.dev_target"] = {"", "", [](RunConfig& c, const std::string& v) { c.data.dev_target = v; }};
    t["data.source_vocab_size"] = {
        std::to_string(d.data.source_vocab_size), "most frequent source words kept",
        [](RunConfig& c, const std::string& v) { c.data.source_vocab_size = to_int<std::size_t>(v); }};
    t["data.target_vocab_size"] = {
        std::to_string(d.data.target_vocab_size), "most frequent target words kept",
        [](RunConfig& c, const std::string& v) { c.data.target_vocab_size = to_int<std::size_t>(v); }};
    return t;
  }();
  return entries;
}

}  // namespace

std::vector<KeyDoc> documented_keys() {
  std::vector<KeyDoc> out;
  for (const auto& [key, e] : table()) out.push_back({key, e.default_value, e.help});
  return out;
}

void apply_setting(RunConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  const std::string full = section + "." + key;
  const auto it = table().find(full);
  if (it == table().end()) throw ConfigError("unknown configuration key '" + full + "'");
  try {
    it->second.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError(full + ": " + e.what());
  }
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  apply_setting(config, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

RunConfig load_run_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    if (!std::filesystem::exists(path)) throw InputError("cannot read config file " + path.string());
    throw ConfigError(e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("unknown configuration key '" + section + "' outside any section");
    for (const auto& [key, value] : body) apply_setting(config, section, key, value.data());
  }
  const auto base = path.parent_path();
  for (auto* p : {&config.data.train_source, &config.data.train_target, &config.data.dev_source, &config.data.dev_target}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  if (!config.train.output_dir.empty() && config.train.output_dir.is_relative()) {
    config.train.output_dir = base / config.train.output_dir;
  }
  return config;
}

}  // namespace ffnmt::cli
