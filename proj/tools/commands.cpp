#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include "ffnmt/checkpoint.hpp"
#include "ffnmt/corpus.hpp"
#include "ffnmt/errors.hpp"
#include "ffnmt/evaluator.hpp"
#include "ffnmt/generator.hpp"
#include "ffnmt/gradcheck.hpp"
#include "ffnmt/probe.hpp"
#include "ffnmt/trainer.hpp"
#include "run_config.hpp"

namespace ffnmt::cli {
namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::string fmt(const char* format, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, x);
  return buf;
}

}  // namespace

int command_train(const TrainArgs& args) {
  if (args.config.empty()) throw ConfigError("no configuration file (pass --config or set FFNMT_CONFIG)");
  RunConfig rc = load_run_config(args.config);
  for (const auto& o : args.overrides) apply_override(rc, o);
  if (args.seed) rc.train.seed = *args.seed;
  if (args.output_dir) rc.train.output_dir = *args.output_dir;
  rc.train.jobs = args.jobs;
  if (rc.data.train_source.empty() || rc.data.train_target.empty()) {
    throw ConfigError("data.train_source and data.train_target are required");
  }
  if (rc.data.dev_source.empty() != rc.data.dev_target.empty()) {
    throw ConfigError("data.dev_source and data.dev_target must be given together");
  }
  rc.train.validate();
  rc.beam.validate();

  std::size_t dropped = 0;
  const ParallelCorpus corpus = load_parallel(rc.data.train_source, rc.data.train_target, &dropped);
  if (corpus.size() == 0) throw InputError("training corpus has no usable sentence pairs");
  if (dropped) std::cerr << "dropped " << dropped << " pairs with an empty side\n";

  Vocabularies vocabs{build_vocab(corpus.source, rc.data.source_vocab_size),
                      build_vocab(corpus.target, rc.data.target_vocab_size)};
  rc.model.src_vocab_size = vocabs.source.size();
  rc.model.tgt_vocab_size = vocabs.target.size();
  rc.model.dropout = rc.train.dropout;
  rc.model.validate();

  const EncodedCorpus train_ids = encode_corpus(corpus, vocabs.source, vocabs.target);
  std::optional<EncodedCorpus> dev_ids;
  if (!rc.data.dev_source.empty()) {
    dev_ids = encode_corpus(load_parallel(rc.data.dev_source, rc.data.dev_target), vocabs.source, vocabs.target);
  }

  if (!rc.train.output_dir.empty()) {
    std::filesystem::create_directories(rc.train.output_dir);
    vocabs.source.save(rc.train.output_dir / "source.vocab");
    vocabs.target.save(rc.train.output_dir / "target.vocab");
  }

  std::cerr << "training " << variant_name(rc.model.variant) << " on " << corpus.size() << " pairs, "
            << parameter_count(make_model_params(rc.model)) << " parameters\n";
  TrainHooks hooks;
  hooks.every = 100;
  hooks.on_progress = [](const TrainProgress& p) {
    std::cerr << "step " << p.steps << " (epoch " << p.epoch << ")\n";
    return false;
  };
  const TrainResult result = train(rc.model, rc.train, train_ids, dev_ids ? &*dev_ids : nullptr, &vocabs, hooks);
  std::cerr << "finished: " << result.steps << " steps, " << result.updates << " updates, " << result.nonfinite_events
            << " non-finite events";
  if (result.best_dev_bleu) std::cerr << ", best dev BLEU " << fmt("%.2f", *result.best_dev_bleu);
  std::cerr << '\n';
  return 0;
}

int command_translate(const TranslateArgs& args) {
  if (args.checkpoints.empty()) throw ConfigError("translate needs at least one --checkpoint");
  std::vector<Checkpoint> members;
  for (const auto& path : args.checkpoints) members.push_back(load_checkpoint(path));
  for (const Checkpoint& m : members) {
    if (!(m.target_vocab == members.front().target_vocab) || !(m.source_vocab == members.front().source_vocab)) {
      throw ConfigError("ensemble members were trained with different vocabularies");
    }
  }
  const bool posunk = !args.posunk_map.empty();
  WordMap word_map;
  if (posunk) {
    if (members.front().config.variant != Variant::deep_att) {
      throw UnsupportedError("--posunk needs a Deep-Att checkpoint (Deep-ED has no positional attention)");
    }
    word_map = load_word_map(args.posunk_map);
  }

  BeamConfig beam;
  beam.beam_size = args.beam;
  beam.max_len = args.max_len;
  beam.validate();

  const std::vector<TokenLine> lines = read_token_lines(args.input);
  const Vocabulary& src_vocab = members.front().source_vocab;
  const Vocabulary& tgt_vocab = members.front().target_vocab;
  std::vector<std::vector<int>> sources;
  std::vector<std::size_t> nonempty;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    nonempty.push_back(i);
    sources.push_back(src_vocab.encode_line(lines[i]));
  }
  std::vector<ModelRef> refs;
  for (const Checkpoint& m : members) refs.push_back({&m.params, &m.config});
  const std::vector<Hypothesis> hyps = translate_corpus(sources, refs, beam, args.jobs);

  std::vector<std::string> output(lines.size());
  for (std::size_t j = 0; j < hyps.size(); ++j) {
    const std::size_t i = nonempty[j];
    const TokenLine words = posunk ? posunk_replace(hyps[j], tgt_vocab, lines[i], word_map, Variant::deep_att)
                                   : tgt_vocab.decode_line(hyps[j].output());
    output[i] = join_tokens(words);
  }
  std::ofstream file;
  if (!args.output.empty()) file = open_output(args.output);
  std::ostream& out = args.output.empty() ? std::cout : file;
  for (const auto& line : output) out << line << '\n';
  return 0;
}

int command_score(const ScoreArgs& args) {
  const auto cand = read_token_lines(args.candidates);
  const auto refs = read_token_lines(args.references);
  const BleuReport report = bleu(cand, refs);
  if (args.csv) {
    std::cout << "metric,value\n" << "bleu," << fmt("%.6f", report.bleu) << '\n';
    for (int n = 0; n < 4; ++n) std::cout << "p" << n + 1 << ',' << fmt("%.6f", report.precisions[n]) << '\n';
    std::cout << "bp," << fmt("%.6f", report.brevity_penalty) << '\n'
              << "hyp_len," << report.candidate_length << '\n'
              << "ref_len," << report.reference_length << '\n';
  } else {
    std::cout << format_bleu(report) << '\n';
  }
  if (!args.sources.empty()) {
    const auto src = read_token_lines(args.sources);
    for (const LengthBucket& b : length_bucket_bleu(cand, refs, src, args.bucket_width)) {
      const std::string score = b.report ? fmt("%.2f", b.report->bleu) : "empty";
      if (args.csv) {
        std::cout << "bucket_" << b.min_length << '_' << b.max_length << ',' << (b.report ? fmt("%.6f", b.report->bleu) : "")
                  << '\n';
      } else {
        std::cout << "length " << b.min_length << '-' << b.max_length << ": " << b.count << " sentences, BLEU " << score
                  << '\n';
      }
    }
  }
  if (!args.target_vocab.empty()) {
    const UnkSubsetReport u = unk_subset_score(cand, refs, Vocabulary::load(args.target_vocab));
    const std::string score = u.report ? fmt("%.2f", u.report->bleu) : "empty";
    if (args.csv) {
      std::cout << "unk_free_bleu," << (u.report ? fmt("%.6f", u.report->bleu) : "") << '\n'
                << "unk_free_ratio," << fmt("%.6f", u.ratio) << '\n';
    } else {
      std::cout << "without unknown words: " << u.retained << " sentences (" << fmt("%.1f", 100.0 * u.ratio)
                << "%), BLEU " << score << '\n';
    }
  }
  return 0;
}

int command_ter(const TerArgs& args) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const ParallelCorpus corpus = load_parallel(args.source, args.target);
  if (corpus.size() == 0) throw InputError("no usable sentence pairs");
  const EncodedCorpus ids = encode_corpus(corpus, ck.source_vocab, ck.target_vocab);
  std::cout << fmt("%.6f", token_error_rate(ck.params, ck.config, ids)) << '\n';
  return 0;
}

int command_probe(const ProbeArgs& args) {
  ProbeConfig pc;
  pc.depth = args.depth;
  pc.cell_width = args.width;
  pc.input_width = args.width;
  pc.length = args.length;
  pc.trials = args.trials;
  pc.seed = args.seed;
  const ProbeReport report = gradient_probe(pc);
  const std::string csv = probe_csv(report);
  if (args.output.empty()) {
    std::cout << csv;
  } else {
    open_output(args.output) << csv;
  }
  std::cerr << "median bottom-layer gradient ratio (F-F / no F-F): " << fmt("%.6g", report.median_ratio) << " over "
            << report.ratios.size() << " trials, " << report.nonfinite_events << " non-finite\n";
  return 0;
}

int command_gradcheck(const GradcheckArgs& args) {
  std::vector<Variant> variants;
  if (args.variant == "both") {
    variants = {Variant::deep_ed, Variant::deep_att};
  } else {
    variants = {parse_variant(args.variant)};
  }
  double worst = 0.0;
  for (Variant v : variants) {
    GradcheckConfig gc;
    gc.model = gradcheck_model(v);
    gc.model.n_e = args.n_e;
    gc.model.n_d = args.n_d;
    gc.model.cell_width = args.width;
    gc.model.emb_dim = args.emb;
    gc.model.src_vocab_size = args.vocab;
    gc.model.tgt_vocab_size = args.vocab;
    gc.instances = args.instances;
    gc.seed = args.seed;
    const GradcheckReport r = run_gradcheck(gc);
    std::cout << variant_name(v) << ": max relative error " << fmt("%.3e", r.max_relative_error) << " over " << r.checked
              << " entries (worst: " << r.worst_parameter << ")\n";
    worst = std::max(worst, r.max_relative_error);
  }
  if (worst > args.tolerance) {
    throw NumericError("gradient check exceeds tolerance " + fmt("%.1e", args.tolerance));
  }
  return 0;
}

int command_make_task(const MakeTaskArgs& args) {
  if (args.prefix.empty()) throw ConfigError("make-task needs --out PREFIX");
  TaskSpec spec;
  spec.kind = parse_task_kind(args.kind);
  spec.vocab_size = args.vocab;
  spec.min_length = args.min_length;
  spec.max_length = args.max_length;
  spec.count = args.count;
  spec.seed = args.seed;
  spec.lexicon_seed = args.lexicon_seed;
  const ParallelCorpus corpus = synth_task(spec);
  const std::filesystem::path src = args.prefix.string() + ".src";
  const std::filesystem::path tgt = args.prefix.string() + ".tgt";
  save_parallel(corpus, src, tgt);
  std::cerr << "wrote " << corpus.size() << " pairs to " << src.string() << " and " << tgt.string() << '\n';
  return 0;
}

int command_config_keys() {
  for (const KeyDoc& k : documented_keys()) {
    std::cout << k.key << " = " << k.default_value;
    if (!k.help.empty()) std::cout << "    ; " << k.help;
    std::cout << '\n';
  }
  return 0;
}

}  // namespace ffnmt::cli
