#include "wwh/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "wwh/error.hpp"
#include "wwh/text.hpp"

namespace wwh {

using nlohmann::json;

std::string_view to_string(Speaker s) { return s == Speaker::User ? "USER" : "AGENT"; }
std::string_view to_string(Rtl r) { return r == Rtl::PRTL ? "PRTL" : "CRTL"; }
std::string_view to_string(Consistency c) {
  return c == Consistency::Consistent ? "CONSISTENT" : "INCONSISTENT";
}

Rtl parse_rtl(std::string_view s) {
  if (s == "PRTL" || s == "prtl") return Rtl::PRTL;
  if (s == "CRTL" || s == "crtl") return Rtl::CRTL;
  throw Error("unknown response type label '" + std::string(s) + "'");
}

namespace {

Speaker parse_speaker(std::string_view s) {
  if (s == "USER") return Speaker::User;
  if (s == "AGENT") return Speaker::Agent;
  throw Error("unknown speaker '" + std::string(s) + "'");
}

Consistency parse_consistency(std::string_view s) {
  if (s == "CONSISTENT") return Consistency::Consistent;
  if (s == "INCONSISTENT") return Consistency::Inconsistent;
  throw Error("unknown consistency annotation '" + std::string(s) + "'");
}

std::string where(const Episode& e, std::size_t s, std::size_t t) {
  return "episode " + e.user_id + " session " + std::to_string(s) + " turn " + std::to_string(t);
}

}  // namespace

const PersonaAttribute* Episode::find_persona(std::string_view id) const {
  for (const auto& p : persona_pool) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

DialogueContext context_before(const Session& session, std::size_t turn_index) {
  DialogueContext ctx;
  ctx.reserve(turn_index);
  for (std::size_t i = 0; i < turn_index && i < session.turns.size(); ++i) {
    ctx.push_back({session.turns[i].speaker, session.turns[i].text});
  }
  return ctx;
}

bool ValidationResult::mentions(std::string_view needle) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) {
    return v.invariant.find(needle) != std::string::npos;
  });
}

ValidationResult validate_episode(const Episode& e, const CorpusHeader& header,
                                  const ValidationOptions& opts) {
  ValidationResult r;
  auto add = [&](std::string inv, std::string loc) {
    r.violations.push_back({std::move(inv), std::move(loc)});
  };
  const std::string ep = "episode " + e.user_id;

  if (e.user_id.empty()) add("empty user id", ep);
  auto in = [](const std::vector<std::string>& set, const std::string& v) {
    return std::find(set.begin(), set.end(), v) != set.end();
  };
  if (!in(header.genders, e.demographics.gender)) {
    add("gender outside declared enumeration", ep);
  }
  if (!in(header.age_bands, e.demographics.age_band)) {
    add("age_band outside declared enumeration", ep);
  }

  std::set<std::string> ids;
  for (const auto& p : e.persona_pool) {
    if (p.id.empty()) add("empty persona id", ep);
    if (p.text.empty()) add("empty persona text", ep + " persona " + p.id);
    if (!ids.insert(p.id).second) add("duplicate persona id", ep + " persona " + p.id);
  }

  for (std::size_t s = 0; s < e.sessions.size(); ++s) {
    const auto& turns = e.sessions[s].turns;
    const std::string sloc = ep + " session " + std::to_string(s);
    if (opts.enforce_turn_range && (turns.size() < opts.min_turns || turns.size() > opts.max_turns)) {
      add("session length outside [" + std::to_string(opts.min_turns) + ", " +
              std::to_string(opts.max_turns) + "]",
          sloc);
    }
    std::size_t personalized = 0;
    for (std::size_t t = 0; t < turns.size(); ++t) {
      const Turn& turn = turns[t];
      const Speaker expected = (t % 2 == 0) ? Speaker::User : Speaker::Agent;
      if (turn.speaker != expected) add("turns must alternate starting with USER", where(e, s, t));
      if (turn.speaker == Speaker::User) {
        if (turn.rtl) add("USER turn carries rtl", where(e, s, t));
        if (!turn.grounded_persona_ids.empty()) {
          add("USER turn carries grounding ids", where(e, s, t));
        }
      } else {
        if (!turn.rtl) add("AGENT turn missing rtl", where(e, s, t));
        if (!turn.introduces_persona_ids.empty()) {
          add("AGENT turn introduces persona", where(e, s, t));
        }
        if (turn.rtl == Rtl::PRTL) {
          ++personalized;
          if (turn.grounded_persona_ids.empty()) {
            add("PRTL requires grounding ids", where(e, s, t));
          }
        } else if (turn.rtl == Rtl::CRTL && !turn.grounded_persona_ids.empty()) {
          add("CRTL must not carry grounding ids", where(e, s, t));
        }
      }
      for (const auto& id : turn.grounded_persona_ids) {
        if (!ids.count(id)) add("dangling persona reference", where(e, s, t) + " id " + id);
      }
      for (const auto& id : turn.introduces_persona_ids) {
        const PersonaAttribute* p = e.find_persona(id);
        if (!p) {
          add("dangling persona reference", where(e, s, t) + " id " + id);
        } else if (p->source_turn != TurnLocation{s, t}) {
          add("introduced persona source_turn mismatch", where(e, s, t) + " id " + id);
        }
      }
    }
    if (personalized > kMaxPersonalizedPerSession) {
      add("personalized responses per session exceed cap of 2 (found " +
              std::to_string(personalized) + ")",
          sloc);
    }
  }

  for (const auto& p : e.persona_pool) {
    if (!p.source_turn) continue;
    const auto [s, t] = *p.source_turn;
    const bool resolves = s < e.sessions.size() && t < e.sessions[s].turns.size();
    if (!resolves) {
      add("source_turn out of range", ep + " persona " + p.id);
      continue;
    }
    const auto& intro = e.sessions[s].turns[t].introduces_persona_ids;
    if (std::find(intro.begin(), intro.end(), p.id) == intro.end()) {
      add("source_turn does not introduce persona", ep + " persona " + p.id);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

json to_json(const Episode& e) {
  json pool = json::array();
  for (const auto& p : e.persona_pool) {
    json a = {{"id", p.id}, {"text", p.text}};
    if (p.source_turn) {
      a["source_turn"] = {p.source_turn->session_index, p.source_turn->turn_index};
    } else {
      a["source_turn"] = nullptr;
    }
    pool.push_back(std::move(a));
  }
  json sessions = json::array();
  for (const auto& s : e.sessions) {
    json turns = json::array();
    for (const auto& t : s.turns) {
      json jt = {{"speaker", to_string(t.speaker)}, {"text", t.text}};
      if (t.speaker == Speaker::Agent) {
        jt["rtl"] = t.rtl ? json(to_string(*t.rtl)) : json(nullptr);
        jt["grounded_persona_ids"] = t.grounded_persona_ids;
      } else {
        jt["introduces_persona_ids"] = t.introduces_persona_ids;
        if (t.rtl) jt["rtl"] = to_string(*t.rtl);
        if (!t.grounded_persona_ids.empty()) jt["grounded_persona_ids"] = t.grounded_persona_ids;
      }
      if (t.speaker == Speaker::Agent && !t.introduces_persona_ids.empty()) {
        jt["introduces_persona_ids"] = t.introduces_persona_ids;
      }
      if (t.consistency_annotation) {
        jt["consistency_annotation"] = to_string(*t.consistency_annotation);
      }
      turns.push_back(std::move(jt));
    }
    sessions.push_back({{"turns", std::move(turns)}});
  }
  return {{"user_id", e.user_id},
          {"demographics", {{"gender", e.demographics.gender}, {"age_band", e.demographics.age_band}}},
          {"persona_pool", std::move(pool)},
          {"sessions", std::move(sessions)}};
}

Episode episode_from_json(const json& j) {
  Episode e;
  e.user_id = j.at("user_id").get<std::string>();
  e.demographics.gender = j.at("demographics").at("gender").get<std::string>();
  e.demographics.age_band = j.at("demographics").at("age_band").get<std::string>();
  for (const auto& a : j.at("persona_pool")) {
    PersonaAttribute p;
    p.id = a.at("id").get<std::string>();
    p.text = a.at("text").get<std::string>();
    if (a.contains("source_turn") && !a["source_turn"].is_null()) {
      const auto& st = a["source_turn"];
      if (!st.is_array() || st.size() != 2) throw Error("source_turn must be [session, turn]");
      p.source_turn = TurnLocation{st[0].get<std::size_t>(), st[1].get<std::size_t>()};
    }
    e.persona_pool.push_back(std::move(p));
  }
  for (const auto& js : j.at("sessions")) {
    Session s;
    for (const auto& jt : js.at("turns")) {
      Turn t;
      t.speaker = parse_speaker(jt.at("speaker").get<std::string>());
      t.text = jt.at("text").get<std::string>();
      if (jt.contains("rtl") && !jt["rtl"].is_null()) t.rtl = parse_rtl(jt["rtl"].get<std::string>());
      if (jt.contains("grounded_persona_ids")) {
        t.grounded_persona_ids = jt["grounded_persona_ids"].get<std::vector<std::string>>();
      }
      if (jt.contains("introduces_persona_ids")) {
        t.introduces_persona_ids = jt["introduces_persona_ids"].get<std::vector<std::string>>();
      }
      if (jt.contains("consistency_annotation") && !jt["consistency_annotation"].is_null()) {
        t.consistency_annotation = parse_consistency(jt["consistency_annotation"].get<std::string>());
      }
      s.turns.push_back(std::move(t));
    }
    e.sessions.push_back(std::move(s));
  }
  return e;
}

json to_json(const CorpusHeader& h) {
  return {{"record", "header"},
          {"format", "wwh-corpus-v1"},
          {"kind", h.kind},
          {"genders", h.genders},
          {"age_bands", h.age_bands}};
}

CorpusHeader header_from_json(const json& j) {
  CorpusHeader h;
  h.kind = j.value("kind", h.kind);
  if (j.contains("genders")) h.genders = j["genders"].get<std::vector<std::string>>();
  if (j.contains("age_bands")) h.age_bands = j["age_bands"].get<std::vector<std::string>>();
  return h;
}

std::string serialize_episode(const Episode& e) { return to_json(e).dump(); }

Corpus read_corpus(std::istream& in, const ValidationOptions& opts) {
  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      throw ParseError(std::string("malformed record: ") + ex.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("record is not an object", lineno);
    if (j.value("record", "") == "header") {
      if (!first) throw ParseError("header record must be the first line", lineno);
      corpus.header = header_from_json(j);
      first = false;
      continue;
    }
    first = false;
    Episode e;
    try {
      e = episode_from_json(j);
    } catch (const std::exception& ex) {
      throw ParseError(std::string("malformed episode: ") + ex.what(), lineno);
    }
    if (!seen.insert(e.user_id).second) {
      throw SchemaError("episode " + e.user_id + " (line " + std::to_string(lineno) +
                        "): duplicate episode id");
    }
    auto result = validate_episode(e, corpus.header, opts);
    if (!result.ok()) {
      const auto& v = result.violations.front();
      throw SchemaError("episode " + e.user_id + " (line " + std::to_string(lineno) +
                        "): " + v.invariant + " at " + v.location);
    }
    corpus.episodes.push_back(std::move(e));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const ValidationOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  return read_corpus(in, opts);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << to_json(corpus.header).dump() << '\n';
  for (const auto& e : corpus.episodes) out << serialize_episode(e) << '\n';
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path.string());
  write_corpus(out, corpus);
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

CorpusStats corpus_stats(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw Error("corpus_stats requires at least one episode");
  CorpusStats s;
  s.episodes = episodes.size();
  std::size_t personalized = 0, personas = 0, introduced = 0;
  std::size_t user_turns = 0, user_words = 0, agent_turns = 0, agent_words = 0;
  for (const auto& e : episodes) {
    s.sessions += e.sessions.size();
    personas += e.persona_pool.size();
    for (const auto& p : e.persona_pool) introduced += p.source_turn.has_value();
    for (const auto& sess : e.sessions) {
      s.utterances += sess.turns.size();
      for (const auto& t : sess.turns) {
        const std::size_t words = text::tokenize(t.text).size();
        if (t.speaker == Speaker::User) {
          ++user_turns;
          user_words += words;
        } else {
          ++agent_turns;
          agent_words += words;
          personalized += (t.rtl == Rtl::PRTL);
        }
      }
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0;
  };
  s.avg_turns_per_session = ratio(s.utterances, s.sessions);
  s.avg_personalized_per_session = ratio(personalized, s.sessions);
  s.avg_persona_per_episode = ratio(personas, s.episodes);
  s.avg_new_persona_per_episode = ratio(introduced, s.episodes);
  s.avg_user_utterance_words = ratio(user_words, user_turns);
  s.avg_agent_response_words = ratio(agent_words, agent_turns);
  return s;
}

json to_json(const CorpusStats& s) {
  return {{"episodes", s.episodes},
          {"sessions", s.sessions},
          {"utterances", s.utterances},
          {"avg_turns_per_session", s.avg_turns_per_session},
          {"avg_personalized_per_session", s.avg_personalized_per_session},
          {"avg_persona_per_episode", s.avg_persona_per_episode},
          {"avg_new_persona_per_episode", s.avg_new_persona_per_episode},
          {"avg_user_utterance_words", s.avg_user_utterance_words},
          {"avg_agent_response_words", s.avg_agent_response_words}};
}

}  // namespace wwh
