// pcmgen: command-line entry point for the data-to-Pidgin workflow.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 training divergence.

#include "pcmgen/config.hpp"
#include "pcmgen/d2t.hpp"
#include "pcmgen/embed.hpp"
#include "pcmgen/eval.hpp"
#include "pcmgen/selftrain.hpp"
#include "pcmgen/synthlang.hpp"
#include "pcmgen/unsup.hpp"
// Must follow the Eigen-based headers above.
#include "pcmgen/eval_service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace pcmgen;

namespace {

constexpr const char* kVocabFile = "vocab.tsv";
constexpr const char* kEnFile = "en.txt";
constexpr const char* kPcmFile = "pcm.txt";

struct Prepared {
  std::shared_ptr<const Vocab> vocab;
  std::vector<Tokens> en_text, pcm_text;
};

std::string lines_of(const std::vector<Tokens>& v) {
  std::string s;
  for (const auto& t : v) s += join(t) + '\n';
  return s;
}

std::vector<Tokens> read_lines(const std::string& path) { return load_mono(path, Lang::English).sentences; }

// One entry per line, empty lines included, so files stay aligned.
std::vector<Tokens> read_aligned_lines(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<Tokens> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    out.push_back(normalize_tokens(std::string_view(text).substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

Prepared load_prepared(const fs::path& dir) {
  Prepared p;
  p.vocab = std::make_shared<const Vocab>(Vocab::deserialize(read_file((dir / kVocabFile).string())));
  p.en_text = read_lines((dir / kEnFile).string());
  p.pcm_text = read_lines((dir / kPcmFile).string());
  return p;
}

// Shared by the training subcommands.
struct RunOptions {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string out;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override a config field, key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "RNG seed")->required();
  cmd->add_option("--out", o.out, "output path")->required();
}

nlohmann::json with_dims(nlohmann::json j) {
  j.update(nlohmann::json(ModelDims{}));
  return j;
}

TrainHooks dev_hooks(const std::string& dev_path, const std::shared_ptr<const Vocab>& vocab, const std::string& out) {
  TrainHooks hooks;
  hooks.log = &std::cerr;
  if (!dev_path.empty()) {
    auto dev = std::make_shared<std::vector<ParallelPair>>(parse_parallel_tsv(read_file(dev_path)));
    if (dev->empty()) throw DataError(dev_path + ": no dev pairs");
    hooks.dev_score = [dev, vocab](const Model& m) {
      std::vector<Sentence> src;
      std::vector<Tokens> ref, hyp;
      for (const auto& p : *dev) {
        src.push_back(encode(p.plain, *vocab, Lang::English));
        ref.push_back(p.cipher);
      }
      for (const auto& s : translate_all(m, src, Lang::Pidgin)) hyp.push_back(decode(s, *vocab));
      const auto b = corpus_bleu(hyp, ref);
      std::cerr << "  dev " << format_bleu(b) << "\n";
      return b.score;
    };
  }
  hooks.on_divergence = [out](const Model& m, int step) {
    m.save(out + ".last-good", 0, {{"step", step}});
    std::cerr << "last good parameters (step " << step << ") saved to " << out << ".last-good\n";
  };
  return hooks;
}

Model init_model(const std::shared_ptr<const Vocab>& vocab, const nlohmann::json& cfg, std::uint64_t seed,
                 const std::string& embed_path) {
  auto model = Model::create(vocab, config_from<ModelDims>(cfg), seed);
  if (!embed_path.empty()) {
    const int n = model.init_embeddings(load_word_vectors(embed_path));
    std::cerr << "initialized " << n << " embedding rows from " << embed_path << "\n";
  }
  return model;
}

DecodeConfig decode_config(int beam, int max_len) {
  auto d = beam > 1 ? DecodeConfig::beam(beam, max_len) : DecodeConfig::greedy(max_len);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config, const std::vector<std::string>& sets, std::optional<std::uint64_t> seed,
              int mr_samples, const std::string& out) {
  auto cfg = config_from<SynthConfig>(resolve_config(nlohmann::json(SynthConfig{}), config, sets));
  if (seed) cfg.seed = *seed;
  const auto d = make_synth(cfg);
  write_synth(out, d.spec, d.corpus, {{"sentences", cfg.sentences}, {"dev", cfg.dev}, {"test", cfg.test}});
  std::cerr << "wrote " << d.corpus.plain.sentences.size() << " + " << d.corpus.cipher.sentences.size()
            << " sentences, " << d.corpus.dev.size() << " dev, " << d.corpus.test.size() << " test to " << out << "\n";
  if (mr_samples > 0) {
    MrGrammarConfig mc;
    mc.seed = cfg.seed + 3;
    const MrGrammar g(mc);
    Rng rng(cfg.seed + 4);
    atomic_write((fs::path(out) / "e2e_train.csv").string(), e2e_csv(g.sample_many(static_cast<std::size_t>(mr_samples), rng)));
    atomic_write((fs::path(out) / "e2e_dev.csv").string(), e2e_csv(g.sample_many(200, rng)));
  }
  return 0;
}

int cmd_prepare(const std::string& en, const std::string& pcm, const std::string& e2e, std::uint64_t min_count,
                const std::string& out) {
  if (en.empty() && e2e.empty()) throw UsageError("prepare needs --en or --e2e for English text");
  std::vector<Tokens> en_text;
  std::vector<Tokens> vocab_sents;
  if (!e2e.empty()) {
    const auto ex = load_e2e(e2e, nullptr, &std::cerr);
    if (ex.empty()) throw DataError(e2e + ": no usable examples");
    vocab_sents = d2t_vocab_sentences(ex);
    // Without separate English text the references are the English side.
    if (en.empty()) {
      for (const auto& g : group_by_mr(ex)) {
        for (const auto& r : g.references) en_text.push_back(r);
      }
    }
  }
  if (!en.empty()) en_text = load_mono(en, Lang::English, &std::cerr).sentences;
  const auto pcm_text = load_mono(pcm, Lang::Pidgin, &std::cerr).sentences;
  if (en_text.empty() || pcm_text.empty()) throw DataError("both languages need at least one sentence");
  vocab_sents.insert(vocab_sents.end(), en_text.begin(), en_text.end());
  vocab_sents.insert(vocab_sents.end(), pcm_text.begin(), pcm_text.end());
  const Vocab vocab = build_vocab(vocab_sents, min_count);
  fs::create_directories(out);
  atomic_write((fs::path(out) / kEnFile).string(), lines_of(en_text));
  atomic_write((fs::path(out) / kPcmFile).string(), lines_of(pcm_text));
  atomic_write((fs::path(out) / kVocabFile).string(), vocab.serialize());
  std::cerr << "vocab " << vocab.size() << " types, " << en_text.size() << " en, " << pcm_text.size() << " pcm\n";
  return 0;
}

int cmd_train_embed(const std::string& data, const RunOptions& o) {
  auto cfg = config_from<SkipgramConfig>(resolve_config(nlohmann::json(SkipgramConfig{}), o.config, o.sets));
  cfg.seed = o.seed;
  auto corpus = read_lines((fs::path(data) / kEnFile).string());
  const auto pcm = read_lines((fs::path(data) / kPcmFile).string());
  corpus.insert(corpus.end(), pcm.begin(), pcm.end());
  const auto emb = train_skipgram(corpus, cfg, &std::cerr);
  atomic_write(o.out, emb.to_text());
  return 0;
}

int cmd_train_unsup(const std::string& data, const std::string& embed, const std::string& dev, const RunOptions& o) {
  const auto j = resolve_config(with_dims(UnsupTrainConfig{}), o.config, o.sets);
  auto cfg = config_from<UnsupTrainConfig>(j);
  cfg.seed = o.seed;
  const auto p = load_prepared(data);
  const auto model = init_model(p.vocab, j, o.seed, embed);
  const auto en = encode_all(p.en_text, *p.vocab, Lang::English);
  const auto pcm = encode_all(p.pcm_text, *p.vocab, Lang::Pidgin);
  const auto trained = unsup_train(model, en, pcm, cfg, dev_hooks(dev, p.vocab, o.out));
  trained.save(o.out, o.seed, {{"stage", "unsup"}, {"config", nlohmann::json(cfg)}});
  return 0;
}

int cmd_self_train(const std::string& init, const std::string& data, const std::string& dev,
                   const std::string& pseudo_out, const RunOptions& o) {
  auto cfg = config_from<SelfTrainConfig>(resolve_config(nlohmann::json(SelfTrainConfig{}), o.config, o.sets));
  cfg.base.seed = o.seed;
  const auto model = Model::load(init);
  const auto p = load_prepared(data);
  if (p.vocab->hash() != model.vocab_hash()) throw DataError(init + " was not trained on the vocab in " + data);
  std::vector<PseudoPair> raw;
  if (!cfg.pseudo_path.empty()) {
    raw = read_pseudo(cfg.pseudo_path);
  } else {
    std::cerr << "translating " << p.en_text.size() << " English sentences\n";
    raw = generate_pseudo(model, p.en_text);
  }
  FilterReport rep;
  const auto pairs = filter_pseudo(raw, &rep);
  std::cerr << "pseudo filter " << filter_report_json(rep).dump() << "\n";
  if (!pseudo_out.empty()) {
    std::ostringstream ss;
    write_pseudo(pairs, ss);
    atomic_write(pseudo_out, ss.str());
  }
  const auto en = encode_all(p.en_text, *p.vocab, Lang::English);
  const auto pcm = encode_all(p.pcm_text, *p.vocab, Lang::Pidgin);
  const auto trained = self_train(model, pairs, en, pcm, cfg, dev_hooks(dev, p.vocab, o.out));
  trained.save(o.out, o.seed, {{"stage", "self"}, {"config", nlohmann::json(cfg)}, {"filter", filter_report_json(rep)}});
  return 0;
}

int cmd_train_d2t(const std::string& data, const std::string& e2e, const std::string& dev, const RunOptions& o) {
  const auto j = resolve_config(with_dims(D2TTrainConfig{}), o.config, o.sets);
  auto cfg = config_from<D2TTrainConfig>(j);
  cfg.seed = o.seed;
  const auto vocab = std::make_shared<const Vocab>(Vocab::deserialize(read_file((fs::path(data) / kVocabFile).string())));
  const auto examples = load_e2e(e2e, nullptr, &std::cerr);
  const auto model = train_d2t(init_model(vocab, j, o.seed, ""), examples, cfg, &std::cerr);
  if (!dev.empty()) {
    std::vector<MeaningRepresentation> mrs;
    std::vector<Tokens> outs;
    for (const auto& g : group_by_mr(load_e2e(dev))) {
      mrs.push_back(g.mr);
      outs.push_back(generate_english(model, g.mr));
    }
    std::cerr << "dev name realization " << name_realization(mrs, outs) << " over " << mrs.size() << " MRs\n";
  }
  model.save(o.out, o.seed, {{"stage", "d2t"}, {"config", nlohmann::json(cfg)}});
  return 0;
}

int cmd_translate(const std::string& model_path, const std::string& to, int beam, int max_len) {
  const Lang target = parse_lang(to);
  const auto model = Model::load(model_path);
  const auto dcfg = decode_config(beam, max_len);
  std::string line;
  while (std::getline(std::cin, line)) {
    const Tokens src = normalize_tokens(line);
    std::cout << (src.empty() ? "" : join(translate_tokens(model, src, other(target), target, dcfg))) << '\n';
  }
  return 0;
}

int cmd_generate(const std::string& d2t_path, const std::string& mt_path, int beam, int max_len,
                 const std::string& system, const std::string& out) {
  const auto d2t = Model::load(d2t_path);
  const auto mt = Model::load(mt_path);
  check_compatible(d2t, mt);
  const auto dcfg = decode_config(beam, max_len);
  std::ostringstream buf;
  std::string line;
  std::size_t line_no = 0, violations = 0;
  while (std::getline(std::cin, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MeaningRepresentation mr;
    try {
      mr = parse_mr(line);
    } catch (const DataError& e) {
      throw DataError("MR line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto r = pipeline_generate(mr, d2t, mt, dcfg);
    violations += r.marker_violations;
    nlohmann::json j = {{"mr", format_mr(mr)}, {"english", join(r.english)}, {"pidgin", join(r.pidgin)}};
    if (!system.empty()) j["system"] = system;
    buf << j.dump() << '\n';
  }
  if (violations) std::cerr << violations << " marker tokens leaked into outputs\n";
  if (out.empty()) {
    std::cout << buf.str();
  } else {
    atomic_write(out, buf.str());
  }
  return 0;
}

int cmd_eval_bleu(const std::string& hyp_path, const std::vector<std::string>& ref_paths, bool as_json) {
  const auto hyps = read_aligned_lines(hyp_path);
  std::vector<std::vector<Tokens>> refs(hyps.size());
  for (const auto& rp : ref_paths) {
    const auto r = read_aligned_lines(rp);
    if (r.size() != hyps.size()) {
      throw DataError(rp + " has " + std::to_string(r.size()) + " lines, " + hyp_path + " has " +
                      std::to_string(hyps.size()));
    }
    for (std::size_t i = 0; i < r.size(); ++i) refs[i].push_back(r[i]);
  }
  const auto b = corpus_bleu(hyps, refs);
  std::cout << (as_json ? bleu_json(b).dump() : format_bleu(b)) << '\n';
  return 0;
}

EvalServer* g_server = nullptr;

int cmd_serve_eval(const std::string& tasks, const std::string& store, const std::string& host, int port,
                   const std::string& static_dir, const std::string& system) {
  TaskPool pool(parse_tasks(read_file(tasks), system));
  std::optional<std::string> assets;
  if (!static_dir.empty()) assets = static_dir;
  EvalServer server(std::move(pool), store, assets);
  const int bound = server.bind(host, port);
  std::cerr << "serving " << server.pool().size() << " tasks on http://" << host << ":" << bound << "\n";
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  server.run();
  g_server = nullptr;
  return 0;
}

int cmd_report(const std::string& store, const std::string& tasks, const std::string& system, bool as_json) {
  std::map<std::string, std::string> systems;
  if (!tasks.empty()) systems = TaskPool(parse_tasks(read_file(tasks), system)).system_of_item();
  const auto r = aggregate_judgments(read_judgments(store), systems);
  std::cout << (as_json ? report_json(r).dump(2) + "\n" : render_report(r));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcmgen: data-to-English generation and unsupervised English-Pidgin translation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  std::string synth_config, synth_out;
  std::vector<std::string> synth_sets;
  std::optional<std::uint64_t> synth_seed;
  int synth_mr = 0;
  auto* synth = app.add_subcommand("synth", "write a cipher-language dataset");
  synth->add_option("--config", synth_config, "JSON SynthConfig")->check(CLI::ExistingFile);
  synth->add_option("--set", synth_sets, "override a config field, key=value");
  synth->add_option("--seed", synth_seed, "overrides the config seed");
  synth->add_option("--mr-samples", synth_mr, "also write this many synthetic MR/reference rows");
  synth->add_option("--out", synth_out, "output directory")->required();

  // prepare
  std::string prep_en, prep_pcm, prep_e2e, prep_out;
  std::uint64_t prep_min_count = 1;
  auto* prepare = app.add_subcommand("prepare", "normalize corpora and build the shared vocab");
  prepare->add_option("--en", prep_en, "English monolingual text")->check(CLI::ExistingFile);
  prepare->add_option("--pcm", prep_pcm, "Pidgin monolingual text")->required()->check(CLI::ExistingFile);
  prepare->add_option("--e2e", prep_e2e, "E2E-style CSV (mr,ref)")->check(CLI::ExistingFile);
  prepare->add_option("--min-count", prep_min_count, "minimum token frequency");
  prepare->add_option("--out", prep_out, "output directory")->required();

  std::string data, embed, dev, init, pseudo_out, e2e;

  RunOptions embed_opts;
  auto* train_embed = app.add_subcommand("train-embed", "train subword skip-gram embeddings");
  train_embed->add_option("--data", data, "prepared directory")->required();
  add_run_options(train_embed, embed_opts);

  RunOptions unsup_opts;
  auto* train_unsup = app.add_subcommand("train-unsup", "unsupervised translation training");
  train_unsup->add_option("--data", data, "prepared directory")->required();
  train_unsup->add_option("--embed", embed, "word vectors for initialization")->check(CLI::ExistingFile);
  train_unsup->add_option("--dev", dev, "parallel dev TSV; keeps the best dev-BLEU checkpoint")
      ->check(CLI::ExistingFile);
  add_run_options(train_unsup, unsup_opts);

  RunOptions self_opts;
  auto* self = app.add_subcommand("self-train", "pseudo-parallel self-training");
  self->add_option("--init", init, "unsupervised checkpoint")->required()->check(CLI::ExistingFile);
  self->add_option("--data", data, "prepared directory")->required();
  self->add_option("--dev", dev, "parallel dev TSV")->check(CLI::ExistingFile);
  self->add_option("--pseudo-out", pseudo_out, "write the filtered pseudo pairs here");
  add_run_options(self, self_opts);

  RunOptions d2t_opts;
  auto* train_d2t_cmd = app.add_subcommand("train-d2t", "MR to English generator");
  train_d2t_cmd->add_option("--data", data, "prepared directory (for the vocab)")->required();
  train_d2t_cmd->add_option("--e2e", e2e, "training CSV (mr,ref)")->required()->check(CLI::ExistingFile);
  train_d2t_cmd->add_option("--dev", dev, "dev CSV; reports name realization")->check(CLI::ExistingFile);
  add_run_options(train_d2t_cmd, d2t_opts);

  std::string model_path, to, d2t_path, mt_path, gen_system, gen_out;
  int beam = 1, max_len = 60;
  auto* translate = app.add_subcommand("translate", "translate stdin lines to stdout");
  translate->add_option("--model", model_path, "checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--to", to, "target language")->required()->check(CLI::IsMember({"en", "pcm"}));
  translate->add_option("--beam", beam, "beam width (1 = greedy)");
  translate->add_option("--max-len", max_len, "maximum output length");

  auto* generate = app.add_subcommand("generate", "MR lines on stdin to JSON lines");
  generate->add_option("--d2t", d2t_path, "data-to-text checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--mt", mt_path, "English to Pidgin checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--beam", beam, "beam width (1 = greedy)");
  generate->add_option("--max-len", max_len, "maximum output length");
  generate->add_option("--system", gen_system, "system label added to every line");
  generate->add_option("--out", gen_out, "output file (default stdout)");

  std::string hyp;
  std::vector<std::string> refs;
  bool as_json = false;
  auto* eval_bleu = app.add_subcommand("eval-bleu", "corpus BLEU");
  eval_bleu->add_option("--hyp", hyp, "hypothesis lines")->required()->check(CLI::ExistingFile);
  eval_bleu->add_option("--ref", refs, "reference lines, comma-separated for several")
      ->required()
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  eval_bleu->add_flag("--json", as_json, "print JSON");

  std::string tasks, store, host = "127.0.0.1", static_dir, task_system = "system";
  int port = 8080;
  auto* serve = app.add_subcommand("serve-eval", "human evaluation service");
  serve->add_option("--tasks", tasks, "generate output JSON lines")->required()->check(CLI::ExistingFile);
  serve->add_option("--store", store, "append-only judgment log")->required();
  serve->add_option("--port", port, "port (0 = any free)")->required();
  serve->add_option("--host", host, "bind address");
  serve->add_option("--static", static_dir, "annotation UI assets")->check(CLI::ExistingDirectory);
  serve->add_option("--system", task_system, "label for task lines without one");

  auto* report = app.add_subcommand("report", "offline human evaluation report");
  report->add_option("--store", store, "judgment log")->required()->check(CLI::ExistingFile);
  report->add_option("--tasks", tasks, "tasks file, for system labels")->check(CLI::ExistingFile);
  report->add_option("--system", task_system, "label for task lines without one");
  report->add_flag("--json", as_json, "print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "pcmgen: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*synth) return cmd_synth(synth_config, synth_sets, synth_seed, synth_mr, synth_out);
    if (*prepare) return cmd_prepare(prep_en, prep_pcm, prep_e2e, prep_min_count, prep_out);
    if (*train_embed) return cmd_train_embed(data, embed_opts);
    if (*train_unsup) return cmd_train_unsup(data, embed, dev, unsup_opts);
    if (*self) return cmd_self_train(init, data, dev, pseudo_out, self_opts);
    if (*train_d2t_cmd) return cmd_train_d2t(data, e2e, dev, d2t_opts);
    if (*translate) return cmd_translate(model_path, to, beam, max_len);
    if (*generate) return cmd_generate(d2t_path, mt_path, beam, max_len, gen_system, gen_out);
    if (*eval_bleu) return cmd_eval_bleu(hyp, refs, as_json);
    if (*serve) return cmd_serve_eval(tasks, store, host, port, static_dir, task_system);
    if (*report) return cmd_report(store, tasks, task_system, as_json);
  } catch (const UsageError& e) {
    std::cerr << "pcmgen: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "pcmgen: diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "pcmgen: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
