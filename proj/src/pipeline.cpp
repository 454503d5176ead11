#include "wwh/pipeline.hpp"

#include <set>

#include "wwh/error.hpp"

namespace wwh {

SourceSet SourceSet::load(const Manifest& m) {
  SourceSet s;
  std::map<std::filesystem::path, std::shared_ptr<const Corpus>> by_path;
  for (const auto& src : m.sources) {
    auto& c = by_path[src.source.path];
    if (!c) c = std::make_shared<const Corpus>(load_corpus(src.source.path));
    s.add(src.source.dataset_id, c);
  }
  return s;
}

void SourceSet::add(const std::string& dataset_id, std::shared_ptr<const Corpus> corpus) {
  Entry e{corpus, {}};
  for (std::size_t i = 0; i < corpus->episodes.size(); ++i) e.episode_index.emplace(corpus->episodes[i].user_id, i);
  if (std::find(order_.begin(), order_.end(), corpus) == order_.end()) order_.push_back(corpus);
  by_id_[dataset_id] = std::move(e);
}

const Corpus& SourceSet::corpus(const std::string& dataset_id) const {
  auto it = by_id_.find(dataset_id);
  if (it == by_id_.end()) throw NotFoundError("unknown dataset " + dataset_id);
  return *it->second.corpus;
}

const Episode& SourceSet::episode(const InstanceRef& ref) const {
  auto it = by_id_.find(ref.dataset_id);
  if (it == by_id_.end()) throw NotFoundError("unknown dataset " + ref.dataset_id);
  auto e = it->second.episode_index.find(ref.episode_id);
  if (e == it->second.episode_index.end()) {
    throw NotFoundError("episode " + ref.episode_id + " not in dataset " + ref.dataset_id);
  }
  return it->second.corpus->episodes[e->second];
}

std::vector<std::shared_ptr<const Corpus>> SourceSet::corpora() const { return order_; }

std::vector<std::string> SourceSet::idf_documents() const {
  std::vector<std::string> docs;
  for (const auto& c : order_) {
    for (const auto& e : c->episodes) {
      for (const auto& p : e.persona_pool) docs.push_back(p.text);
      for (const auto& s : e.sessions) {
        for (const auto& t : s.turns) docs.push_back(t.text);
      }
    }
  }
  return docs;
}

std::vector<std::string> SourceSet::vocabulary_texts() const {
  auto texts = idf_documents();
  for (const auto& c : order_) {
    texts.insert(texts.end(), c->header.genders.begin(), c->header.genders.end());
    texts.insert(texts.end(), c->header.age_bands.begin(), c->header.age_bands.end());
  }
  return texts;
}

DialogueInstance make_instance(const Episode& ep, std::size_t session, std::size_t turn, const PersonaSubset& rho) {
  const Session& s = ep.sessions.at(session);
  const Turn& t = s.turns.at(turn);
  if (t.speaker != Speaker::Agent) throw Error("instance must reference an agent turn");
  return {ep.demographics, rho.texts(), context_before(s, turn), t.rtl.value_or(Rtl::CRTL), t.text};
}

TrainingSet build_training_set(const Manifest& m, const SourceSet& sources, const TemplateBank& lexicon,
                               const Vocabulary& vocab, const PipelineOptions& opts) {
  Augmenter aug(lexicon, opts.augment);
  for (const auto& c : sources.corpora()) {
    if (c->header.is_mspd()) aug.add_foreign_pool(c->episodes);
  }
  std::map<std::string, std::string> kind_of;
  for (const auto& s : m.sources) kind_of[s.source.dataset_id] = sources.corpus(s.source.dataset_id).header.kind;

  TrainingSet set;
  set.header.vocab_hash = hash_hex(vocab.hash());
  set.header.emit_rtl = opts.serialize.emit_rtl;
  set.header.max_seq_len = opts.serialize.max_seq_len;
  set.header.k = opts.augment.k;
  set.instances.reserve(m.instances.size());
  std::map<InstanceRef, std::size_t> copies;
  for (const auto& ref : m.instances) {
    auto kind = kind_of.find(ref.dataset_id);
    if (kind == kind_of.end()) throw NotFoundError("manifest instance names unknown dataset " + ref.dataset_id);
    const Episode& ep = sources.episode(ref);
    const std::size_t copy = copies[ref]++;
    PersonaSubset rho = aug.augment(kind->second, ep, ref.session_index, ref.turn_index, augment_stream(ref, copy));
    TrainingInstance t = serialize(make_instance(ep, ref.session_index, ref.turn_index, rho), vocab, opts.serialize);
    t.meta.ref = ref;
    t.meta.copy_index = copy;
    t.meta.kind = rho.kind;
    for (std::size_t i = 0; i < rho.attributes.size(); ++i) {
      t.meta.persona_ids.push_back(rho.attributes[i].id);
      if (rho.is_positive(rho.attributes[i].id)) t.meta.positive_positions.push_back(i);
    }
    set.instances.push_back(std::move(t));
  }
  set.header.count = set.instances.size();
  return set;
}

Manifest corpus_manifest(const std::filesystem::path& path, const Corpus& corpus, const std::string& dataset_id) {
  Manifest m;
  m.shuffle = "none";
  ManifestSource src;
  src.source = {dataset_id, path, 1.0, "all"};
  src.corpus_kind = corpus.header.kind;
  m.instances = agent_instances(corpus.episodes, dataset_id);
  src.planned = {dataset_id, 1.0, m.instances.size(), m.instances.size(), SamplingMode::Exact};
  m.sources.push_back(std::move(src));
  return m;
}

}  // namespace wwh
