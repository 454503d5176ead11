#include "wwh/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "wwh/pipeline.hpp"

namespace wwh {

using nlohmann::json;

void check_compatible(const LanguageModel& model, const TrainingSet& set) {
  if (!set.header.vocab_hash.empty() && set.header.vocab_hash != hash_hex(model.vocab().hash())) {
    throw SchemaError("vocabulary mismatch: data " + set.header.vocab_hash + ", checkpoint " +
                      hash_hex(model.vocab().hash()));
  }
  if (set.header.emit_rtl != model.emit_rtl()) {
    throw SchemaError(std::string("label mode mismatch: data ") + (set.header.emit_rtl ? "with" : "without") +
                      " response type labels, checkpoint " + (model.emit_rtl() ? "with" : "without"));
  }
}

double perplexity(const LanguageModel& model, const TrainingSet& set) {
  check_compatible(model, set);
  if (set.instances.empty()) throw Error("perplexity of an empty set");
  return std::exp(mean_nll(model.net(), set.instances).first);
}

double perplexity_from_scores(const LanguageModel& model, const TrainingSet& set) {
  check_compatible(model, set);
  if (set.instances.empty()) throw Error("perplexity of an empty set");
  double sum = 0;
  std::size_t n = 0;
  for (const auto& x : set.instances) {
    for (double lp : model.score(x.input_ids, x.loss_mask)) {
      sum += lp;
      ++n;
    }
  }
  if (n == 0) throw Error("no target tokens");
  return std::exp(-sum / static_cast<double>(n));
}

namespace {

std::vector<int> prompt_of(const TrainingInstance& x) {
  return {x.input_ids.begin(), x.input_ids.begin() + static_cast<std::ptrdiff_t>(x.target_start())};
}

}  // namespace

RtlAccuracy rtl_accuracy(const LanguageModel& model, const TrainingSet& set, std::optional<Rtl> force) {
  check_compatible(model, set);
  if (!model.emit_rtl()) throw Error("model was trained without response type labels");
  RtlAccuracy acc;
  for (const auto& x : set.instances) {
    Rtl got;
    if (force) {
      DecodeConfig dc;
      dc.max_new_tokens = 0;
      got = *model.generate_from(prompt_of(x), force, dc).rtl;
    } else {
      auto [p, c] = model.rtl_logprobs(prompt_of(x));
      got = p > c ? Rtl::PRTL : Rtl::CRTL;
    }
    if (x.rtl == Rtl::PRTL) {
      ++acc.prtl_total;
      acc.prtl_correct += got == Rtl::PRTL;
    } else {
      ++acc.crtl_total;
      acc.crtl_correct += got == Rtl::CRTL;
    }
  }
  if (acc.prtl_total == 0 || acc.crtl_total == 0) throw Error("label accuracy needs both PRTL and CRTL instances");
  return acc;
}

EvalReport evaluate(const LanguageModel& model, const TrainingSet& set, const EvalOptions& opts,
                    std::vector<EvalItem>* items) {
  EvalReport r;
  r.ppl = perplexity(model, set);
  r.n_instances = set.instances.size();
  RtlAccuracy acc;
  double f1 = 0, f1_pos = 0, cover = 0;
  for (const auto& x : set.instances) {
    const DialogueInstance inst = deserialize(x.input_ids, model.vocab(), set.header.emit_rtl);
    std::vector<PersonaAttribute> attrs;
    std::vector<std::string> positives;
    for (std::size_t i = 0; i < inst.persona.size(); ++i) {
      const std::string id = i < x.meta.persona_ids.size() ? x.meta.persona_ids[i] : "a" + std::to_string(i);
      attrs.push_back({id, inst.persona[i], std::nullopt});
    }
    for (std::size_t p : x.meta.positive_positions) {
      if (p < inst.persona.size()) positives.push_back(inst.persona[p]);
    }
    Generation g = model.generate_from(prompt_of(x), std::nullopt, opts.decode);
    EvalItem item;
    item.response = g.text;
    item.gold = x.rtl;
    item.f1 = persona_f1(g.text, inst.persona);
    item.p_cover = p_cover(g.text, inst.persona, model.checkpoint().idf);
    Rtl emitted;
    if (g.rtl) {
      emitted = *g.rtl;
      item.rtl = g.rtl;
      if (x.rtl == Rtl::PRTL) {
        ++acc.prtl_total;
        acc.prtl_correct += emitted == Rtl::PRTL;
      } else {
        ++acc.crtl_total;
        acc.crtl_correct += emitted == Rtl::CRTL;
      }
    } else {
      emitted = classify_grounding(g.text, attrs, Rtl::PRTL, opts.tau_hard).similarity > 0 ? Rtl::PRTL : Rtl::CRTL;
    }
    item.grounding = classify_grounding(g.text, attrs, emitted, opts.tau_hard);
    switch (item.grounding.level) {
      case GroundingLevel::Hard: ++r.grounding.hard; break;
      case GroundingLevel::Soft: ++r.grounding.soft; break;
      case GroundingLevel::None: ++r.grounding.non_personalized; break;
    }
    r.prtl_emitted += emitted == Rtl::PRTL;
    f1 += item.f1;
    f1_pos += persona_f1(g.text, positives);
    cover += item.p_cover;
    if (items) items->push_back(std::move(item));
  }
  const double n = static_cast<double>(std::max<std::size_t>(r.n_instances, 1));
  r.f1 = f1 / n;
  r.f1_positive_only = f1_pos / n;
  r.p_cover = cover / n;
  if (model.emit_rtl()) r.rtl = acc;
  return r;
}

json to_json(const EvalReport& r) {
  json j = {{"name", r.name},
            {"ppl", r.ppl},
            {"f1", r.f1},
            {"f1_positive_only", r.f1_positive_only},
            {"p_cover", r.p_cover},
            {"grounding_counts",
             {{"hard", r.grounding.hard}, {"soft", r.grounding.soft}, {"non_personalized", r.grounding.non_personalized}}},
            {"n_instances", r.n_instances},
            {"prtl_emitted", r.prtl_emitted}};
  if (r.rtl) {
    j["rtl_accuracy"] = {{"prtl", r.rtl->prtl()},
                         {"crtl", r.rtl->crtl()},
                         {"prtl_total", r.rtl->prtl_total},
                         {"crtl_total", r.rtl->crtl_total}};
  } else {
    j["rtl_accuracy"] = nullptr;
  }
  return j;
}

std::string format_report_table(const std::vector<EvalReport>& rows) {
  std::vector<std::vector<std::string>> cells = {
      {"name", "ppl", "f1", "f1_pos", "p_cover", "acc_prtl", "acc_crtl", "hard", "soft", "none", "n"}};
  auto fmt = [](double v, int prec) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  for (const auto& r : rows) {
    cells.push_back({r.name, fmt(r.ppl, 3), fmt(r.f1, 4), fmt(r.f1_positive_only, 4), fmt(r.p_cover, 4),
                     r.rtl ? fmt(r.rtl->prtl(), 3) : "-", r.rtl ? fmt(r.rtl->crtl(), 3) : "-",
                     std::to_string(r.grounding.hard), std::to_string(r.grounding.soft),
                     std::to_string(r.grounding.non_personalized), std::to_string(r.n_instances)});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == 0) {
        out << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[i])) << row[i];
      }
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

GeneratorConfig generator_from_json(const json& j, GeneratorConfig g) {
  g.n_episodes = j.value("n_episodes", g.n_episodes);
  g.sessions_per_episode = j.value("sessions_per_episode", g.sessions_per_episode);
  g.turns_min = j.value("turns_min", g.turns_min);
  g.turns_max = j.value("turns_max", g.turns_max);
  g.personas_min = j.value("personas_min", g.personas_min);
  g.personas_max = j.value("personas_max", g.personas_max);
  g.new_persona_rate = j.value("new_persona_rate", g.new_persona_rate);
  g.distractor_rate = j.value("distractor_rate", g.distractor_rate);
  g.hard_probability = j.value("hard_probability", g.hard_probability);
  g.seed = j.value("seed", g.seed);
  g.threads = j.value("threads", g.threads);
  return g;
}

}  // namespace

SweepSpec sweep_spec_from_json(const json& j) {
  SweepSpec s;
  s.mspd.seed = 11;
  s.casual.seed = 12;
  s.eval.seed = 13;
  s.eval.n_episodes = 50;
  if (j.contains("mspd")) s.mspd = generator_from_json(j["mspd"], s.mspd);
  if (j.contains("casual")) s.casual = generator_from_json(j["casual"], s.casual);
  if (j.contains("eval")) s.eval = generator_from_json(j["eval"], s.eval);
  if (j.contains("model")) s.model = model_config_from_json(j["model"], s.model);
  if (j.contains("train")) s.train = train_config_from_json(j["train"], s.train);
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    s.augment.seed = a.value("seed", s.augment.seed);
    s.augment.k = a.value("k", s.augment.k);
    if (a.contains("negative_source")) s.augment.negative_source = parse_negative_source(a["negative_source"].get<std::string>());
  }
  s.blend_seed = j.value("blend_seed", s.blend_seed);
  s.max_seq_len = j.value("max_seq_len", s.max_seq_len);
  s.model.max_seq_len = s.max_seq_len;
  if (j.contains("decode")) {
    const auto& d = j["decode"];
    s.eval_options.decode.max_new_tokens = d.value("max_new_tokens", s.eval_options.decode.max_new_tokens);
    s.eval_options.decode.top_k = d.value("top_k", s.eval_options.decode.top_k);
    s.eval_options.decode.temperature = d.value("temperature", s.eval_options.decode.temperature);
    s.eval_options.decode.seed = d.value("seed", s.eval_options.decode.seed);
  }
  s.eval_options.tau_hard = j.value("tau_hard", s.eval_options.tau_hard);
  for (const auto& r : j.at("rows")) {
    SweepRow row;
    row.name = r.at("name").get<std::string>();
    const auto& w = r.at("weights");
    row.w_casual = w.value("casual", 0.0);
    row.w_pr = w.value("mspd_pr", 0.0);
    row.w_npr = w.value("mspd_npr", 0.0);
    row.k = r.value("k", s.augment.k);
    row.emit_rtl = r.value("emit_rtl", true);
    if (row.name.empty() || row.name.find('/') != std::string::npos) throw ConfigError("bad sweep row name");
    s.rows.push_back(std::move(row));
  }
  if (s.rows.empty()) throw ConfigError("sweep spec has no rows");
  return s;
}

SweepSpec load_sweep_spec(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open sweep spec " + path.string());
  try {
    return sweep_spec_from_json(json::parse(f, nullptr, true, true));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

SweepResult run_sweep(const SweepSpec& spec, const TemplateBank& bank, const std::filesystem::path& out_dir,
                      std::ostream* log) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  auto say = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };
  fs::create_directories(out_dir / "data");

  GeneratorConfig mg = spec.mspd;
  mg.id_prefix = "mspd";
  Corpus mspd = generate_mspd(mg, bank).corpus;
  Corpus casual;
  casual.header.kind = "casual";
  for (CasualFlavor f : {CasualFlavor::Daily, CasualFlavor::Knowledge, CasualFlavor::Empathy}) {
    GeneratorConfig cg = spec.casual;
    cg.id_prefix = std::string(to_string(f));
    cg.seed = derive_seed(spec.casual.seed, static_cast<std::uint64_t>(f));
    auto part = generate_casual(cg, f, bank).corpus;
    casual.episodes.insert(casual.episodes.end(), part.episodes.begin(), part.episodes.end());
  }
  GeneratorConfig eg = spec.eval;
  eg.id_prefix = "eval";
  Corpus eval_corpus = generate_mspd(eg, bank).corpus;
  const fs::path mspd_path = out_dir / "data" / "mspd.jsonl";
  const fs::path casual_path = out_dir / "data" / "casual.jsonl";
  const fs::path eval_path = out_dir / "data" / "eval.jsonl";
  save_corpus(mspd_path, mspd);
  save_corpus(casual_path, casual);
  save_corpus(eval_path, eval_corpus);

  SourceSet train_sources;
  train_sources.add("mspd", std::make_shared<const Corpus>(mspd));
  train_sources.add("casual", std::make_shared<const Corpus>(casual));
  const Vocabulary vocab = Vocabulary::build(train_sources.vocabulary_texts());
  const IdfTable idf = IdfTable::build(train_sources.idf_documents());
  vocab.save(out_dir / "data" / "vocab.txt");
  idf.save(out_dir / "data" / "idf.json");
  say("corpora: mspd " + std::to_string(mspd.episodes.size()) + " episodes, casual " +
      std::to_string(casual.episodes.size()) + ", eval " + std::to_string(eval_corpus.episodes.size()) +
      "; vocab " + std::to_string(vocab.size()));

  SourceSet eval_sources;
  eval_sources.add("eval", std::make_shared<const Corpus>(eval_corpus));
  const Manifest eval_manifest = corpus_manifest(eval_path, eval_corpus, "eval");

  SweepResult result;
  std::ofstream jsonl(out_dir / "sweep.jsonl");
  for (const auto& row : spec.rows) {
    const auto t0 = clock::now();
    const fs::path dir = out_dir / row.name;
    fs::create_directories(dir);
    std::vector<BlendSource> blend;
    if (row.w_casual > 0) blend.push_back({"casual", casual_path, row.w_casual, "all"});
    if (row.w_pr > 0) blend.push_back({"mspd_pr", mspd_path, row.w_pr, "pr"});
    if (row.w_npr > 0) blend.push_back({"mspd_npr", mspd_path, row.w_npr, "npr"});
    Manifest manifest = build_manifest(blend, spec.blend_seed);
    save_manifest(dir / "manifest.jsonl", manifest);

    PipelineOptions po;
    po.augment = spec.augment;
    po.augment.k = row.k;
    po.serialize.max_seq_len = spec.max_seq_len;
    po.serialize.emit_rtl = row.emit_rtl;
    TrainingSet train_set = build_training_set(manifest, SourceSet::load(manifest), bank, vocab, po);
    TrainingSet eval_set = build_training_set(eval_manifest, eval_sources, bank, vocab, po);

    ModelConfig mc = spec.model;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = spec.max_seq_len;
    say(row.name + ": training on " + std::to_string(train_set.instances.size()) + " instances");
    double last_loss = 0;
    TrainResult tr = train(train_set.instances, mc, spec.train, [&](const StepLog& s) { last_loss = s.loss; });
    Checkpoint ck{mc, spec.train, row.emit_rtl, vocab, idf, tr.steps, std::move(tr.params)};
    save_checkpoint(dir / "model.ckpt", ck);
    {
      std::ofstream lf(dir / "train_log.jsonl");
      for (const auto& s : tr.log) {
        lf << json{{"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss}, {"lr", s.lr}, {"grad_norm", s.grad_norm}}.dump()
           << '\n';
      }
    }
    LanguageModel model(std::move(ck));
    EvalReport rep = evaluate(model, eval_set, spec.eval_options);
    rep.name = row.name;
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    json j = to_json(rep);
    j["weights"] = {{"casual", row.w_casual}, {"mspd_pr", row.w_pr}, {"mspd_npr", row.w_npr}};
    j["k"] = row.k;
    j["emit_rtl"] = row.emit_rtl;
    j["train_instances"] = train_set.instances.size();
    j["steps"] = model.checkpoint().step;
    j["final_loss"] = last_loss;
    j["seconds"] = secs;
    jsonl << j.dump() << '\n' << std::flush;
    {
      std::ofstream rf(dir / "report.json");
      rf << j.dump(2) << '\n';
    }
    say(row.name + ": " + j.dump());
    result.reports.push_back(std::move(rep));
    result.seconds.push_back(secs);
  }
  std::ofstream(out_dir / "sweep.txt") << format_report_table(result.reports);
  return result;
}

}  // namespace wwh
