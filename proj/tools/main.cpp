#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "commands.hpp"
#include "ffnmt/errors.hpp"

namespace {

constexpr int kExitInput = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace ffnmt::cli;
  CLI::App app{"Deep LSTM translation models with fast-forward connections"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train a model from a configuration file");
  if (const char* env = std::getenv("FFNMT_CONFIG")) train.config = env;
  c_train->add_option("-c,--config", train.config, "INI configuration (default: $FFNMT_CONFIG)");
  c_train->add_option("--set", train.overrides, "override a key, e.g. --set train.seed=3");
  c_train->add_option("--seed", train.seed, "shorthand for --set train.seed=N");
  c_train->add_option("-o,--output", train.output_dir, "output directory (train.output_dir)");
  c_train->add_option("-j,--jobs", train.jobs, "worker threads for dev decoding")->check(CLI::PositiveNumber);

  TranslateArgs translate;
  auto* c_translate = app.add_subcommand("translate", "decode a tokenized file; several checkpoints form an ensemble");
  c_translate->add_option("-m,--checkpoint", translate.checkpoints, "checkpoint file (repeatable)")->required();
  c_translate->add_option("-i,--input", translate.input, "source sentences, one per line")->required();
  c_translate->add_option("-o,--output", translate.output, "output file (default: stdout)");
  c_translate->add_option("-b,--beam", translate.beam, "beam width")->capture_default_str();
  c_translate->add_option("--max-len", translate.max_len, "emission cap (0: 3 * source length + 10)");
  c_translate->add_option("--posunk", translate.posunk_map, "source<TAB>target word map for unknown-word replacement");
  c_translate->add_option("-j,--jobs", translate.jobs, "worker threads")->check(CLI::PositiveNumber);

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "corpus BLEU with optional length buckets and unknown-word subset");
  c_score->add_option("candidates", score.candidates, "system output")->required();
  c_score->add_option("references", score.references, "reference translations")->required();
  c_score->add_option("--sources", score.sources, "source file, enables length buckets");
  c_score->add_option("--bucket-width", score.bucket_width, "source length bucket width")->capture_default_str();
  c_score->add_option("--target-vocab", score.target_vocab, "vocabulary file, enables the unknown-free subset");
  c_score->add_flag("--csv", score.csv, "print metric,value rows");

  TerArgs ter;
  auto* c_ter = app.add_subcommand("ter", "teacher-forced token error rate of a checkpoint");
  c_ter->add_option("-m,--checkpoint", ter.checkpoint)->required();
  c_ter->add_option("source", ter.source)->required();
  c_ter->add_option("target", ter.target)->required();

  ProbeArgs probe;
  auto* c_probe = app.add_subcommand("probe", "compare gradient norms with and without F-F connections");
  c_probe->add_option("--depth", probe.depth)->capture_default_str();
  c_probe->add_option("--width", probe.width)->capture_default_str();
  c_probe->add_option("--length", probe.length)->capture_default_str();
  c_probe->add_option("--trials", probe.trials)->capture_default_str();
  c_probe->add_option("--seed", probe.seed)->capture_default_str();
  c_probe->add_option("-o,--output", probe.output, "CSV output (default: stdout)");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference check of the full model gradient");
  c_gc->add_option("--variant", gc.variant, "deep-att, deep-ed or both")->capture_default_str();
  c_gc->add_option("--n-e", gc.n_e)->capture_default_str();
  c_gc->add_option("--n-d", gc.n_d)->capture_default_str();
  c_gc->add_option("--width", gc.width)->capture_default_str();
  c_gc->add_option("--emb", gc.emb)->capture_default_str();
  c_gc->add_option("--vocab", gc.vocab)->capture_default_str();
  c_gc->add_option("--instances", gc.instances)->capture_default_str();
  c_gc->add_option("--seed", gc.seed)->capture_default_str();
  c_gc->add_option("--tolerance", gc.tolerance)->capture_default_str();

  MakeTaskArgs task;
  auto* c_task = app.add_subcommand("make-task", "write a synthetic parallel corpus");
  c_task->add_option("--kind", task.kind, "copy, reverse or lexicon_swap")->capture_default_str();
  c_task->add_option("--vocab", task.vocab)->capture_default_str();
  c_task->add_option("--min-len", task.min_length)->capture_default_str();
  c_task->add_option("--max-len", task.max_length)->capture_default_str();
  c_task->add_option("--count", task.count)->capture_default_str();
  c_task->add_option("--seed", task.seed)->capture_default_str();
  c_task->add_option("--lexicon-seed", task.lexicon_seed)->capture_default_str();
  c_task->add_option("-o,--out", task.prefix, "writes PREFIX.src and PREFIX.tgt")->required();

  auto* c_keys = app.add_subcommand("config-keys", "list every configuration key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (c_train->parsed()) return command_train(train);
    if (c_translate->parsed()) return command_translate(translate);
    if (c_score->parsed()) return command_score(score);
    if (c_ter->parsed()) return command_ter(ter);
    if (c_probe->parsed()) return command_probe(probe);
    if (c_gc->parsed()) return command_gradcheck(gc);
    if (c_task->parsed()) return command_make_task(task);
    if (c_keys->parsed()) return command_config_keys();
  } catch (const ffnmt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ffnmt::UnsupportedError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ffnmt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ffnmt::Error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  }
  return 1;
}
