#include "wwh/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include <boost/crc.hpp>

#include "wwh/text.hpp"

namespace wwh {

using nlohmann::json;

// ---------------------------------------------------------------------------
// PersonaIndex

void PersonaIndex::rebuild(std::vector<PersonaAttribute> pool) {
  pool_ = std::move(pool);
  postings_.clear();
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    std::map<std::string, std::size_t> tf;
    for (auto& w : text::content_words(pool_[i].text)) ++tf[std::move(w)];
    for (const auto& [w, n] : tf) postings_[w].emplace_back(i, n);
  }
  norms_.assign(pool_.size(), 0.0);
  for (const auto& [w, list] : postings_) {
    const double v = idf(w);
    for (const auto& [i, n] : list) norms_[i] += (static_cast<double>(n) * v) * (static_cast<double>(n) * v);
  }
  for (double& n : norms_) n = std::sqrt(n);
}

double PersonaIndex::idf(const std::string& word) const {
  auto it = postings_.find(word);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  return std::log((static_cast<double>(pool_.size()) + 1.0) / (df + 1.0)) + 1.0;
}

std::size_t PersonaIndex::postings_count() const {
  std::size_t n = 0;
  for (const auto& [w, list] : postings_) n += list.size();
  return n;
}

std::string PersonaIndex::query_text(const DialogueContext& context, std::size_t window) {
  std::vector<const std::string*> turns;
  for (auto it = context.rbegin(); it != context.rend() && turns.size() < window; ++it) {
    if (it->speaker == Speaker::User) turns.push_back(&it->text);
  }
  std::string q;
  for (auto it = turns.rbegin(); it != turns.rend(); ++it) {
    if (!q.empty()) q += ' ';
    q += **it;
  }
  return q;
}

std::vector<ScoredAttribute> PersonaIndex::retrieve(const DialogueContext& context, std::size_t top_k,
                                                    std::size_t window) const {
  std::map<std::string, std::size_t> qtf;
  for (auto& w : text::content_words(query_text(context, window))) ++qtf[std::move(w)];
  double qnorm = 0;
  std::vector<double> dot(pool_.size(), 0.0);
  for (const auto& [w, n] : qtf) {
    const double v = idf(w);
    const double qw = static_cast<double>(n) * v;
    qnorm += qw * qw;
    auto it = postings_.find(w);
    if (it == postings_.end()) continue;
    for (const auto& [i, an] : it->second) dot[i] += qw * static_cast<double>(an) * v;
  }
  qnorm = std::sqrt(qnorm);
  std::vector<ScoredAttribute> scored;
  scored.reserve(pool_.size());
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    const double s = (qnorm > 0 && norms_[i] > 0) ? dot[i] / (qnorm * norms_[i]) : 0.0;
    scored.push_back({pool_[i], s});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredAttribute& a, const ScoredAttribute& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.attribute.id < b.attribute.id;
  });
  if (scored.size() > top_k) scored.resize(top_k);
  return scored;
}

// ---------------------------------------------------------------------------

json CheckpointModel::describe() const {
  const auto& c = model_->checkpoint();
  return {{"vocab_hash", hash_hex(c.vocab.hash())}, {"step", c.step}, {"emit_rtl", c.emit_rtl},
          {"config", to_json(c.config)}};
}

// ---------------------------------------------------------------------------
// Journal

namespace {

std::string crc_hex(std::string_view s) {
  boost::crc_32_type crc;
  crc.process_bytes(s.data(), s.size());
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
  return buf;
}

}  // namespace

std::string Journal::encode(const json& record) {
  const std::string body = record.dump();
  return crc_hex(body) + " " + body + "\n";
}

Journal::Journal(std::filesystem::path path) : path_(std::move(path)) {
  std::uintmax_t good_bytes = 0;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw IoError("cannot open store " + path_.string());
    std::string line;
    std::size_t lineno = 0;
    std::optional<std::size_t> bad_line;
    while (std::getline(in, line)) {
      ++lineno;
      const bool complete = !in.eof();
      if (bad_line) throw ParseError(path_.string() + ": damaged record", *bad_line);
      bool ok = complete && line.size() > 9 && line[8] == ' ' && crc_hex(std::string_view(line).substr(9)) == line.substr(0, 8);
      if (ok) {
        try {
          recovered_.push_back(json::parse(line.substr(9)));
        } catch (const json::exception&) {
          ok = false;
        }
      }
      if (!ok) {
        bad_line = lineno;
        continue;
      }
      good_bytes += line.size() + 1;
    }
    if (bad_line) dropped_tail_ = true;
  }
  if (dropped_tail_) std::filesystem::resize_file(path_, good_bytes);
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw IoError("cannot open store " + path_.string() + " for writing");
}

void Journal::append(const json& record) {
  const std::string line = encode(record);
  std::lock_guard lock(mu_);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw IoError("store write failed: " + path_.string());
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json scored_json(const std::vector<ScoredAttribute>& v) {
  json a = json::array();
  for (const auto& s : v) a.push_back({{"id", s.attribute.id}, {"text", s.attribute.text}, {"score", s.score}});
  return a;
}

json rtl_json(const std::optional<Rtl>& r) { return r ? json(std::string(to_string(*r))) : json(nullptr); }

std::optional<Rtl> rtl_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return parse_rtl(j.get<std::string>());
}

}  // namespace

json to_json(const TurnResult& t) {
  return {{"turn_index", t.turn_index},
          {"user_text", t.user_text},
          {"force_rtl", rtl_json(t.force_rtl)},
          {"response", t.response},
          {"rtl", rtl_json(t.rtl)},
          {"retrieved", scored_json(t.retrieved)},
          {"diagnostics",
           {{"f1", t.diagnostics.f1}, {"p_cover", t.diagnostics.p_cover}, {"grounding", to_json(t.diagnostics.grounding)}}}};
}

TurnResult turn_result_from_json(const json& j) {
  TurnResult t;
  t.turn_index = j.at("turn_index").get<std::size_t>();
  t.user_text = j.at("user_text").get<std::string>();
  t.force_rtl = rtl_from(j.at("force_rtl"));
  t.response = j.at("response").get<std::string>();
  t.rtl = rtl_from(j.at("rtl"));
  for (const auto& r : j.at("retrieved")) {
    t.retrieved.push_back({{r.at("id").get<std::string>(), r.at("text").get<std::string>(), std::nullopt},
                           r.at("score").get<double>()});
  }
  const auto& d = j.at("diagnostics");
  t.diagnostics.f1 = d.at("f1").get<double>();
  t.diagnostics.p_cover = d.at("p_cover").get<double>();
  const auto& g = d.at("grounding");
  t.diagnostics.grounding.level = parse_grounding_level(g.at("level").get<std::string>());
  t.diagnostics.grounding.similarity = g.at("similarity").get<double>();
  if (!g.at("matched_id").is_null()) t.diagnostics.grounding.matched_persona_id = g.at("matched_id").get<std::string>();
  return t;
}

json to_json(const SessionView& s) {
  json turns = json::array();
  for (const auto& t : s.log) turns.push_back(to_json(t));
  return {{"session_id", s.session_id},
          {"user_id", s.user_id},
          {"demographics", {{"gender", s.demographics.gender}, {"age_band", s.demographics.age_band}}},
          {"turns", std::move(turns)}};
}

// ---------------------------------------------------------------------------
// ChatService

ChatService::ChatService(std::shared_ptr<const ResponseModel> model, std::shared_ptr<Journal> journal,
                         ServiceConfig cfg)
    : model_(std::move(model)), journal_(std::move(journal)), cfg_(cfg) {
  if (!model_) throw ConfigError("chat service needs a model");
  if (journal_) {
    std::size_t n = 0;
    for (const auto& r : journal_->recovered()) {
      ++n;
      try {
        apply(r);
      } catch (const std::exception& e) {
        throw SchemaError("store record " + std::to_string(n) + ": " + e.what());
      }
    }
  }
}

void ChatService::write(const json& record) {
  if (journal_) journal_->append(record);
}

std::shared_ptr<ChatService::User> ChatService::user(const std::string& id, bool create) {
  std::lock_guard lock(registry_mu_);
  auto it = users_.find(id);
  if (it != users_.end()) return it->second;
  if (!create) throw NotFoundError("unknown user " + id);
  auto u = std::make_shared<User>();
  users_.emplace(id, u);
  return u;
}

std::shared_ptr<ChatService::User> ChatService::find_user(const std::string& id) const {
  std::lock_guard lock(registry_mu_);
  auto it = users_.find(id);
  if (it == users_.end()) throw NotFoundError("unknown user " + id);
  return it->second;
}

std::shared_ptr<ChatService::Session> ChatService::find_session(const std::string& id) const {
  std::lock_guard lock(registry_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + id);
  return it->second;
}

void ChatService::apply(const json& r) {
  const std::string op = r.at("op").get<std::string>();
  if (op == "persona_add") {
    auto u = user(r.at("user_id").get<std::string>(), true);
    PersonaAttribute a{r.at("id").get<std::string>(), r.at("text").get<std::string>(), std::nullopt};
    if (a.id.size() > 1 && a.id[0] == 'p') u->next_id = std::max(u->next_id, std::stoul(a.id.substr(1)) + 1);
    u->pool.push_back(std::move(a));
    u->index.rebuild(u->pool);
  } else if (op == "persona_delete") {
    auto u = user(r.at("user_id").get<std::string>(), false);
    const auto id = r.at("id").get<std::string>();
    std::erase_if(u->pool, [&](const PersonaAttribute& a) { return a.id == id; });
    u->index.rebuild(u->pool);
  } else if (op == "session_create") {
    auto s = std::make_shared<Session>();
    s->id = r.at("session_id").get<std::string>();
    s->user_id = r.at("user_id").get<std::string>();
    s->demographics = {r.at("gender").get<std::string>(), r.at("age_band").get<std::string>()};
    user(s->user_id, true);
    if (s->id.size() > 1 && s->id[0] == 's') next_session_ = std::max(next_session_, std::stoul(s->id.substr(1)) + 1);
    sessions_[s->id] = s;
  } else if (op == "turn") {
    auto s = find_session(r.at("session_id").get<std::string>());
    TurnResult t = turn_result_from_json(r.at("turn"));
    s->context.push_back({Speaker::User, t.user_text});
    s->context.push_back({Speaker::Agent, t.response});
    s->log.push_back(std::move(t));
  } else {
    throw SchemaError("unknown store op '" + op + "'");
  }
}

std::string ChatService::create_session(const std::string& user_id, std::optional<Demographics> demographics) {
  if (user_id.empty()) throw Error("user_id must not be empty");
  const Demographics d = demographics.value_or(cfg_.default_demographics);
  if (text::tokenize(d.gender).size() != 1 || text::tokenize(d.age_band).size() != 1) {
    throw Error("demographic values must be single words");
  }
  std::lock_guard lock(registry_mu_);
  const std::string id = "s" + std::to_string(next_session_);
  json rec = {{"op", "session_create"}, {"session_id", id}, {"user_id", user_id},
              {"gender", d.gender},     {"age_band", d.age_band}};
  write(rec);
  ++next_session_;
  if (!users_.count(user_id)) users_.emplace(user_id, std::make_shared<User>());
  auto s = std::make_shared<Session>();
  s->id = id;
  s->user_id = user_id;
  s->demographics = d;
  sessions_.emplace(id, s);
  return id;
}

TurnResult ChatService::run_turn(const User& u, const Demographics& d, const DialogueContext& context,
                                 const std::string& text, std::optional<Rtl> force, std::size_t index) const {
  DialogueContext ctx = context;
  ctx.push_back({Speaker::User, text});
  TurnResult t;
  t.turn_index = index;
  t.user_text = text;
  t.force_rtl = force;
  {
    std::shared_lock lock(u.mu);
    t.retrieved = u.index.retrieve(ctx, cfg_.top_k, cfg_.retrieval_window);
  }
  std::vector<std::string> persona;
  std::vector<PersonaAttribute> attrs;
  for (const auto& s : t.retrieved) {
    persona.push_back(s.attribute.text);
    attrs.push_back(s.attribute);
  }
  Generation g = model_->respond(d, persona, ctx, force);
  t.response = g.text;
  t.rtl = g.rtl;
  t.diagnostics.f1 = persona_f1(g.text, persona);
  t.diagnostics.p_cover = p_cover(g.text, persona, model_->idf());
  Rtl emitted = g.rtl.value_or(
      classify_grounding(g.text, attrs, Rtl::PRTL).similarity > 0 ? Rtl::PRTL : Rtl::CRTL);
  t.diagnostics.grounding = classify_grounding(g.text, attrs, emitted);
  return t;
}

TurnResult ChatService::post_message(const std::string& session_id, const std::string& text,
                                     std::optional<Rtl> force_rtl) {
  auto s = find_session(session_id);
  std::lock_guard lock(s->mu);
  auto u = find_user(s->user_id);
  TurnResult t = run_turn(*u, s->demographics, s->context, text, force_rtl, s->log.size());
  write({{"op", "turn"}, {"session_id", session_id}, {"turn", to_json(t)}});
  s->context.push_back({Speaker::User, t.user_text});
  s->context.push_back({Speaker::Agent, t.response});
  s->log.push_back(t);
  return t;
}

SessionView ChatService::session(const std::string& session_id) const {
  auto s = find_session(session_id);
  std::lock_guard lock(s->mu);
  return {s->id, s->user_id, s->demographics, s->context, s->log};
}

PersonaAttribute ChatService::add_persona(const std::string& user_id, const std::string& text) {
  if (user_id.empty()) throw Error("user_id must not be empty");
  if (text::tokenize(text).empty()) throw Error("persona text must contain a word");
  auto u = user(user_id, true);
  std::unique_lock lock(u->mu);
  PersonaAttribute a{"p" + std::to_string(u->next_id), text, std::nullopt};
  write({{"op", "persona_add"}, {"user_id", user_id}, {"id", a.id}, {"text", a.text}});
  ++u->next_id;
  u->pool.push_back(a);
  u->index.rebuild(u->pool);
  return a;
}

void ChatService::delete_persona(const std::string& user_id, const std::string& persona_id) {
  auto u = find_user(user_id);
  std::unique_lock lock(u->mu);
  auto it = std::find_if(u->pool.begin(), u->pool.end(), [&](const PersonaAttribute& a) { return a.id == persona_id; });
  if (it == u->pool.end()) throw NotFoundError("user " + user_id + " has no persona " + persona_id);
  write({{"op", "persona_delete"}, {"user_id", user_id}, {"id", persona_id}});
  u->pool.erase(it);
  u->index.rebuild(u->pool);
}

std::vector<PersonaAttribute> ChatService::list_personas(const std::string& user_id) const {
  auto u = find_user(user_id);
  std::shared_lock lock(u->mu);
  return u->pool;
}

std::vector<ScoredAttribute> ChatService::retrieve(const std::string& user_id, const DialogueContext& context) const {
  auto u = find_user(user_id);
  std::shared_lock lock(u->mu);
  return u->index.retrieve(context, cfg_.top_k, cfg_.retrieval_window);
}

std::vector<bool> ChatService::replay(const std::string& session_id) const {
  const SessionView v = session(session_id);
  auto u = find_user(v.user_id);
  DialogueContext ctx;
  std::vector<bool> same;
  for (std::size_t i = 0; i < v.log.size(); ++i) {
    const auto& logged = v.log[i];
    TurnResult t = run_turn(*u, v.demographics, ctx, logged.user_text, logged.force_rtl, i);
    same.push_back(t.response == logged.response && t.rtl == logged.rtl);
    ctx.push_back({Speaker::User, t.user_text});
    ctx.push_back({Speaker::Agent, t.response});
  }
  return same;
}

std::size_t ChatService::session_count() const {
  std::lock_guard lock(registry_mu_);
  return sessions_.size();
}

std::size_t ChatService::user_count() const {
  std::lock_guard lock(registry_mu_);
  return users_.size();
}

}  // namespace wwh
