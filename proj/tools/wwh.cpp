#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wwh/blend.hpp"
#include "wwh/evaluation.hpp"
#include "wwh/http.hpp"
#include "wwh/pipeline.hpp"
#include "wwh/service.hpp"
#include "wwh/synth.hpp"
#include "wwh/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wwh;

namespace {

const std::string kDefaultBank = std::string(WWH_DATA_DIR) + "/template_bank.txt";

TemplateBank load_bank(const std::string& path) {
  TemplateBank b = TemplateBank::load(path);
  b.require_valid();
  return b;
}

int cmd_corpus_validate(const std::string& path) {
  Corpus c = load_corpus(path);
  std::cout << path << ": ok, " << c.episodes.size() << " episodes (" << c.header.kind << ")\n";
  return 0;
}

int cmd_corpus_stats(const std::string& path) {
  Corpus c = load_corpus(path);
  std::cout << to_json(corpus_stats(c.episodes)).dump(2) << '\n';
  return 0;
}

fs::path sibling(const fs::path& base, const std::string& file) {
  if (file.empty()) return {};
  fs::path p(file);
  return p.is_absolute() ? p : base.parent_path() / p;
}

ServiceConfig service_config(std::size_t top_k) {
  ServiceConfig c;
  c.top_k = top_k;
  return c;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persona-grounded dialogue toolkit: corpora, blending, augmentation, training, evaluation, serving"};
  app.require_subcommand(1);

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Validate or summarize a corpus file");
  corpus->require_subcommand(1);
  std::string corpus_path;
  auto* validate = corpus->add_subcommand("validate", "Check every schema invariant");
  validate->add_option("path", corpus_path)->required();
  auto* stats = corpus->add_subcommand("stats", "Print corpus statistics as JSON");
  stats->add_option("path", corpus_path)->required();

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  std::string gen_kind = "mspd", gen_out, bank_path = kDefaultBank;
  GeneratorConfig gcfg;
  gen->add_option("--kind", gen_kind, "mspd | daily | knowledge | empathy")
      ->check(CLI::IsMember({"mspd", "daily", "knowledge", "empathy"}));
  gen->add_option("--n", gcfg.n_episodes, "Episodes");
  gen->add_option("--seed", gcfg.seed);
  gen->add_option("--sessions", gcfg.sessions_per_episode);
  gen->add_option("--threads", gcfg.threads);
  gen->add_option("--id-prefix", gcfg.id_prefix);
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--bank", bank_path, "Template bank file");

  // blend
  auto* blend = app.add_subcommand("blend", "Resolve blending weights and write an instance manifest");
  std::string blend_spec, blend_out;
  std::uint64_t blend_seed = 1;
  blend->add_option("--spec", blend_spec, "Rows of: dataset_id path weight [all|pr|npr]")->required();
  blend->add_option("--seed", blend_seed);
  blend->add_option("--out", blend_out)->required();

  // augment
  auto* augment = app.add_subcommand("augment", "Build persona subsets and serialize training instances");
  std::string aug_manifest, aug_corpus, aug_out, aug_vocab, aug_idf, aug_neg = "same_user_irrelevant";
  AugmentConfig acfg;
  SerializeOptions sopts;
  bool no_rtl = false;
  auto* m_opt = augment->add_option("--manifest", aug_manifest, "Blend manifest");
  augment->add_option("--corpus", aug_corpus, "Use every agent turn of one corpus instead of a manifest")
      ->excludes(m_opt);
  augment->add_option("--k", acfg.k, "Persona subset size");
  augment->add_option("--seed", acfg.seed);
  augment->add_option("--negative-source", aug_neg)->check(CLI::IsMember({"same_user_irrelevant", "other_user", "mixed"}));
  augment->add_option("--max-seq-len", sopts.max_seq_len);
  augment->add_flag("--no-rtl", no_rtl, "Omit the response type label slot");
  augment->add_option("--vocab", aug_vocab, "Reuse this vocabulary instead of building <out>.vocab");
  augment->add_option("--idf", aug_idf, "Reuse this IDF table instead of building <out>.idf");
  augment->add_option("--bank", bank_path);
  augment->add_option("--out", aug_out)->required();

  // train
  auto* trn = app.add_subcommand("train", "Train a model on a training file");
  std::string train_data, train_config, train_out;
  std::size_t log_every = 50;
  trn->add_option("--data", train_data)->required();
  trn->add_option("--config", train_config, "JSON with optional 'model' and 'train' objects");
  trn->add_option("--out", train_out)->required();
  trn->add_option("--log-every", log_every);

  // chat
  auto* chat = app.add_subcommand("chat", "Interactive session with a checkpoint");
  std::string chat_ckpt;
  std::size_t top_k = 5;
  chat->add_option("--ckpt", chat_ckpt)->required();
  chat->add_option("--top-k", top_k);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a serialized set");
  std::string eval_ckpt, eval_data, eval_report, eval_name;
  EvalOptions eopts;
  ev->add_option("--ckpt", eval_ckpt)->required();
  ev->add_option("--data", eval_data)->required();
  ev->add_option("--report", eval_report)->required();
  ev->add_option("--name", eval_name);
  ev->add_option("--max-new-tokens", eopts.decode.max_new_tokens);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Train and evaluate every row of a sweep spec");
  std::string sweep_spec, sweep_out;
  sw->add_option("--spec", sweep_spec)->required();
  sw->add_option("--out", sweep_out)->required();
  sw->add_option("--bank", bank_path);

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP chat service");
  std::string serve_ckpt, serve_store, serve_host = "127.0.0.1", ui_dir;
  int serve_port = 8080;
  serve->add_option("--ckpt", serve_ckpt)->required();
  serve->add_option("--store", serve_store)->required();
  serve->add_option("--port", serve_port);
  serve->add_option("--host", serve_host);
  serve->add_option("--top-k", top_k);
  serve->add_option("--ui-dir", ui_dir, "Static files served under /ui");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_corpus_validate(corpus_path);
    if (stats->parsed()) return cmd_corpus_stats(corpus_path);

    if (gen->parsed()) {
      const TemplateBank bank = load_bank(bank_path);
      if (gcfg.id_prefix.empty()) gcfg.id_prefix = gen_kind;
      GeneratedCorpus g = gen_kind == "mspd" ? generate_mspd(gcfg, bank)
                                             : generate_casual(gcfg, parse_flavor(gen_kind), bank);
      save_corpus(gen_out, g.corpus);
      std::cout << "wrote " << g.corpus.episodes.size() << " episodes to " << gen_out << '\n';
      return 0;
    }

    if (blend->parsed()) {
      Manifest m = build_manifest(load_blend_spec(blend_spec), blend_seed);
      save_manifest(blend_out, m);
      for (const auto& s : m.sources) {
        std::cout << s.source.dataset_id << ": weight " << s.source.weight << ", available " << s.planned.available
                  << ", target " << s.planned.target << " (" << to_string(s.planned.mode) << ")\n";
      }
      std::cout << "wrote " << m.instances.size() << " instances to " << blend_out << '\n';
      return 0;
    }

    if (augment->parsed()) {
      if (aug_manifest.empty() && aug_corpus.empty()) throw ConfigError("give --manifest or --corpus");
      const TemplateBank bank = load_bank(bank_path);
      Manifest m;
      SourceSet sources;
      if (!aug_manifest.empty()) {
        m = load_manifest(aug_manifest);
        sources = SourceSet::load(m);
      } else {
        auto c = std::make_shared<const Corpus>(load_corpus(aug_corpus));
        m = corpus_manifest(aug_corpus, *c, "eval");
        sources.add("eval", c);
      }
      const fs::path out(aug_out);
      const fs::path vocab_path = aug_vocab.empty() ? fs::path(aug_out + ".vocab") : fs::path(aug_vocab);
      const fs::path idf_path = aug_idf.empty() ? fs::path(aug_out + ".idf") : fs::path(aug_idf);
      Vocabulary vocab = aug_vocab.empty() ? Vocabulary::build(sources.vocabulary_texts()) : Vocabulary::load(aug_vocab);
      if (aug_vocab.empty()) vocab.save(vocab_path);
      if (aug_idf.empty()) IdfTable::build(sources.idf_documents()).save(idf_path);
      PipelineOptions po;
      po.augment = acfg;
      po.augment.negative_source = parse_negative_source(aug_neg);
      po.serialize = sopts;
      po.serialize.emit_rtl = !no_rtl;
      TrainingSet set = build_training_set(m, sources, bank, vocab, po);
      set.header.vocab_file = fs::absolute(vocab_path).string();
      set.header.idf_file = fs::absolute(idf_path).string();
      save_training_set(out, set);
      std::cout << "wrote " << set.instances.size() << " instances to " << aug_out << " (vocab " << vocab.size()
                << ", hash " << set.header.vocab_hash << ")\n";
      return 0;
    }

    if (trn->parsed()) {
      TrainingSet set = load_training_set(train_data);
      const Vocabulary vocab = Vocabulary::load(sibling(train_data, set.header.vocab_file));
      if (hash_hex(vocab.hash()) != set.header.vocab_hash) throw SchemaError("vocabulary file does not match training data");
      const IdfTable idf = IdfTable::load(sibling(train_data, set.header.idf_file));
      json cfg = json::object();
      if (!train_config.empty()) {
        std::ifstream f(train_config);
        if (!f) throw IoError("cannot open " + train_config);
        cfg = json::parse(f, nullptr, true, true);
      }
      ModelConfig mc = model_config_from_json(cfg.value("model", json::object()));
      mc.vocab_size = vocab.size();
      mc.max_seq_len = std::max(mc.max_seq_len, set.header.max_seq_len);
      const TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
      std::ofstream logf(train_out + ".log.jsonl");
      TrainResult r = train(set.instances, mc, tc, [&](const StepLog& s) {
        const json j = {{"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss}, {"lr", s.lr}, {"grad_norm", s.grad_norm}};
        logf << j.dump() << '\n';
        if (log_every && s.step % log_every == 0) std::cerr << j.dump() << '\n';
      });
      save_checkpoint(train_out, {mc, tc, set.header.emit_rtl, vocab, idf, r.steps, std::move(r.params)});
      std::cout << "trained " << r.steps << " steps; final loss " << (r.log.empty() ? 0.0 : r.log.back().loss)
                << "; wrote " << train_out << '\n';
      return 0;
    }

    if (ev->parsed()) {
      LanguageModel model = LanguageModel::load(eval_ckpt);
      TrainingSet set = load_training_set(eval_data);
      EvalReport rep = evaluate(model, set, eopts);
      rep.name = eval_name.empty() ? fs::path(eval_ckpt).stem().string() : eval_name;
      std::ofstream(eval_report, std::ios::app) << to_json(rep).dump() << '\n';
      const std::string table = format_report_table({rep});
      std::ofstream(eval_report + ".txt") << table;
      std::cout << table;
      return 0;
    }

    if (sw->parsed()) {
      const TemplateBank bank = load_bank(bank_path);
      SweepResult r = run_sweep(load_sweep_spec(sweep_spec), bank, sweep_out, &std::cerr);
      std::cout << format_report_table(r.reports);
      return 0;
    }

    if (chat->parsed()) {
      auto model = std::make_shared<const LanguageModel>(LanguageModel::load(chat_ckpt));
      ChatService svc(std::make_shared<CheckpointModel>(model), nullptr, service_config(top_k));
      const std::string user = "local";
      std::string session = svc.create_session(user);
      std::optional<Rtl> force;
      std::cout << "commands: /force prtl|crtl|off, /persona add <text>, /persona list, /persona del <id>, /reset, "
                   "/quit\n";
      std::string line;
      while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        if (line.empty()) continue;
        if (line == "/quit" || line == "/exit") break;
        if (line.rfind("/force", 0) == 0) {
          const std::string arg = line.size() > 7 ? line.substr(7) : "";
          if (arg == "off") {
            force.reset();
          } else {
            force = parse_rtl(arg);
          }
          std::cout << "force: " << (force ? std::string(to_string(*force)) : "off") << '\n';
          continue;
        }
        if (line.rfind("/persona add ", 0) == 0) {
          auto a = svc.add_persona(user, line.substr(13));
          std::cout << a.id << ": " << a.text << '\n';
          continue;
        }
        if (line == "/persona list") {
          try {
            for (const auto& a : svc.list_personas(user)) std::cout << a.id << ": " << a.text << '\n';
          } catch (const NotFoundError&) {
          }
          continue;
        }
        if (line.rfind("/persona del ", 0) == 0) {
          svc.delete_persona(user, line.substr(13));
          continue;
        }
        if (line == "/reset") {
          session = svc.create_session(user);
          continue;
        }
        TurnResult t = svc.post_message(session, line, force);
        std::cout << "[" << (t.rtl ? std::string(to_string(*t.rtl)) : "-") << "] " << t.response << '\n';
        std::cout << "  grounding " << to_string(t.diagnostics.grounding.level) << " sim "
                  << t.diagnostics.grounding.similarity << " f1 " << t.diagnostics.f1 << " p_cover "
                  << t.diagnostics.p_cover << '\n';
      }
      return 0;
    }

    if (serve->parsed()) {
      auto model = std::make_shared<const LanguageModel>(LanguageModel::load(serve_ckpt));
      auto journal = std::make_shared<Journal>(serve_store);
      if (journal->dropped_torn_tail()) std::cerr << "store: dropped a torn final record\n";
      ChatService svc(std::make_shared<CheckpointModel>(model), journal, service_config(top_k));
      std::optional<fs::path> ui;
      if (!ui_dir.empty()) ui = ui_dir;
      HttpServer server(svc, ui);
      const int port = server.bind(serve_host, serve_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on http://" << serve_host << ":" << port << "/v1\n";
      server.listen();
      g_server = nullptr;
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 3;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
