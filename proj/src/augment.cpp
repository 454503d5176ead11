#include "wwh/augment.hpp"

#include <algorithm>

#include "wwh/rng.hpp"

namespace wwh {

std::string_view to_string(SubsetKind k) {
  switch (k) {
    case SubsetKind::PR: return "PR";
    case SubsetKind::NPR: return "NPR";
    case SubsetKind::Casual: return "CASUAL";
  }
  return "CASUAL";
}

SubsetKind parse_subset_kind(std::string_view s) {
  if (s == "PR") return SubsetKind::PR;
  if (s == "NPR") return SubsetKind::NPR;
  if (s == "CASUAL") return SubsetKind::Casual;
  throw Error("unknown subset kind '" + std::string(s) + "'");
}

SubsetKind subset_kind_for(std::string_view corpus_kind, Rtl rtl) {
  if (corpus_kind != "mspd") return SubsetKind::Casual;
  return rtl == Rtl::PRTL ? SubsetKind::PR : SubsetKind::NPR;
}

std::vector<std::string> PersonaSubset::texts() const {
  std::vector<std::string> out;
  out.reserve(attributes.size());
  for (const auto& a : attributes) out.push_back(a.text);
  return out;
}

bool PersonaSubset::is_positive(std::string_view id) const {
  return std::find(positive_ids.begin(), positive_ids.end(), id) != positive_ids.end();
}

std::string_view to_string(NegativeSource s) {
  switch (s) {
    case NegativeSource::SameUserIrrelevant: return "same_user_irrelevant";
    case NegativeSource::OtherUser: return "other_user";
    case NegativeSource::Mixed: return "mixed";
  }
  return "same_user_irrelevant";
}

NegativeSource parse_negative_source(std::string_view s) {
  if (s == "same_user_irrelevant") return NegativeSource::SameUserIrrelevant;
  if (s == "other_user") return NegativeSource::OtherUser;
  if (s == "mixed") return NegativeSource::Mixed;
  throw ConfigError("unknown negative source '" + std::string(s) + "'");
}

std::uint64_t augment_stream(const InstanceRef& ref, std::size_t copy_index) {
  return derive_seed(ref.hash(), copy_index);
}

Augmenter::Augmenter(const TemplateBank& lexicon, AugmentConfig cfg) : lexicon_(lexicon), cfg_(cfg) {
  if (cfg_.k == 0) throw ConfigError("augmentation k must be at least 1");
}

void Augmenter::add_foreign_pool(const std::vector<Episode>& episodes) {
  for (const auto& e : episodes) {
    for (const auto& p : e.persona_pool) {
      Foreign f{e.user_id, p, lexicon_.topics_of(p.text)};
      f.attr.id = e.user_id + "/" + p.id;
      f.attr.source_turn.reset();
      foreign_.push_back(std::move(f));
    }
  }
}

std::set<std::string> Augmenter::context_topics(const Session& session, std::size_t turn) const {
  std::set<std::string> topics;
  std::size_t seen = 0;
  for (std::size_t i = std::min(turn, session.turns.size()); i-- > 0 && seen < cfg_.context_user_turns;) {
    if (session.turns[i].speaker != Speaker::User) continue;
    ++seen;
    auto t = lexicon_.topics_of(session.turns[i].text);
    topics.insert(t.begin(), t.end());
  }
  return topics;
}

std::set<std::string> Augmenter::session_grounded_ids(const Session& session) {
  std::set<std::string> ids;
  for (const auto& t : session.turns) ids.insert(t.grounded_persona_ids.begin(), t.grounded_persona_ids.end());
  return ids;
}

namespace {

bool disjoint(const std::set<std::string>& a, const std::set<std::string>& b) {
  return std::none_of(a.begin(), a.end(), [&](const std::string& x) { return b.count(x) > 0; });
}

bool known_at(const PersonaAttribute& p, std::size_t session, std::size_t turn) {
  if (!p.source_turn) return true;
  const auto& st = *p.source_turn;
  return st.session_index < session || (st.session_index == session && st.turn_index < turn);
}

}  // namespace

PersonaSubset Augmenter::build(const Episode& ep, std::size_t session, std::size_t turn, std::uint64_t stream,
                               const std::vector<std::string>& positives, SubsetKind kind) const {
  const Session& sess = ep.sessions.at(session);
  const auto grounded = session_grounded_ids(sess);
  const auto ctx_topics = context_topics(sess, turn);

  PersonaSubset out;
  out.kind = kind;
  std::set<std::string> used_texts;
  for (const auto& id : positives) {
    const PersonaAttribute* p = ep.find_persona(id);
    if (!p) throw Error("positive persona " + id + " missing from pool of " + ep.user_id);
    out.attributes.push_back(*p);
    out.positive_ids.push_back(id);
    used_texts.insert(p->text);
  }
  if (out.attributes.size() > cfg_.k) {
    throw InsufficientCandidates("instance grounds more attributes than k = " + std::to_string(cfg_.k));
  }
  const std::size_t needed = cfg_.k - out.attributes.size();

  std::vector<const PersonaAttribute*> own, foreign;
  if (cfg_.negative_source != NegativeSource::OtherUser) {
    for (const auto& p : ep.persona_pool) {
      if (grounded.count(p.id) || std::count(positives.begin(), positives.end(), p.id)) continue;
      if (!known_at(p, session, turn) || used_texts.count(p.text)) continue;
      if (!disjoint(lexicon_.topics_of(p.text), ctx_topics)) continue;
      own.push_back(&p);
    }
  }
  const bool want_foreign = cfg_.negative_source != NegativeSource::SameUserIrrelevant || own.size() < needed;
  if (want_foreign) {
    for (const auto& f : foreign_) {
      if (f.owner == ep.user_id || used_texts.count(f.attr.text) || !disjoint(f.topics, ctx_topics)) continue;
      foreign.push_back(&f.attr);
    }
  }

  Rng rng(derive_seed(cfg_.seed, stream));
  std::vector<const PersonaAttribute*> chosen;
  auto take = [&](std::vector<const PersonaAttribute*>& from, std::size_t count) {
    for (std::size_t i : rng.sample_indices(from.size(), std::min(count, from.size()))) {
      if (chosen.size() >= needed) break;
      if (used_texts.insert(from[i]->text).second) chosen.push_back(from[i]);
    }
  };
  switch (cfg_.negative_source) {
    case NegativeSource::SameUserIrrelevant:
      take(own, needed);
      if (chosen.size() < needed) take(foreign, foreign.size());
      break;
    case NegativeSource::OtherUser:
      take(foreign, foreign.size());
      break;
    case NegativeSource::Mixed: {
      std::vector<const PersonaAttribute*> all = own;
      all.insert(all.end(), foreign.begin(), foreign.end());
      take(all, all.size());
      break;
    }
  }
  if (chosen.size() < needed) {
    throw InsufficientCandidates("episode " + ep.user_id + " session " + std::to_string(session) + " turn " +
                                 std::to_string(turn) + ": need " + std::to_string(needed) +
                                 " irrelevant persona candidates, found " + std::to_string(chosen.size()));
  }
  for (const auto* p : chosen) out.attributes.push_back(*p);
  rng.shuffle(out.attributes);
  return out;
}

PersonaSubset Augmenter::augment_pr(const Episode& ep, std::size_t session, std::size_t turn,
                                    std::uint64_t stream) const {
  const Turn& t = ep.sessions.at(session).turns.at(turn);
  if (t.speaker != Speaker::Agent || t.rtl != Rtl::PRTL || t.grounded_persona_ids.empty()) {
    throw Error("augment_pr requires a PRTL agent turn with grounding ids");
  }
  return build(ep, session, turn, stream, t.grounded_persona_ids, SubsetKind::PR);
}

PersonaSubset Augmenter::augment_npr(const Episode& ep, std::size_t session, std::size_t turn,
                                     std::uint64_t stream) const {
  const Turn& t = ep.sessions.at(session).turns.at(turn);
  if (t.speaker != Speaker::Agent || t.rtl != Rtl::CRTL) throw Error("augment_npr requires a CRTL agent turn");
  return build(ep, session, turn, stream, {}, SubsetKind::NPR);
}

PersonaSubset Augmenter::augment_casual() { return PersonaSubset{SubsetKind::Casual, {}, {}}; }

PersonaSubset Augmenter::augment(std::string_view corpus_kind, const Episode& ep, std::size_t session,
                                 std::size_t turn, std::uint64_t stream) const {
  const Turn& t = ep.sessions.at(session).turns.at(turn);
  switch (subset_kind_for(corpus_kind, t.rtl.value_or(Rtl::CRTL))) {
    case SubsetKind::PR: return augment_pr(ep, session, turn, stream);
    case SubsetKind::NPR: return augment_npr(ep, session, turn, stream);
    case SubsetKind::Casual: break;
  }
  return augment_casual();
}

}  // namespace wwh
