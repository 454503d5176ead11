#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "wwh/checkpoint.hpp"
#include "wwh/corpus.hpp"
#include "wwh/metrics.hpp"

namespace wwh {

// ---------------------------------------------------------------------------
// Retrieval

struct ScoredAttribute {
  PersonaAttribute attribute;
  double score = 0;
};

/// Inverted index over one user's attributes. Term weights are
/// tf * idf with idf(w) = ln((N + 1) / (df(w) + 1)) + 1 over the N attributes
/// of the pool; the query is the content words of the last `window` user
/// turns, weighted the same way. Score is the cosine of the two weight
/// vectors (0 when either is empty).
class PersonaIndex {
 public:
  PersonaIndex() = default;
  explicit PersonaIndex(std::vector<PersonaAttribute> pool) { rebuild(std::move(pool)); }

  void rebuild(std::vector<PersonaAttribute> pool);

  const std::vector<PersonaAttribute>& pool() const { return pool_; }
  double idf(const std::string& word) const;
  /// term -> (attribute index, term frequency)
  const std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>>& postings() const { return postings_; }
  std::size_t postings_count() const;

  /// Top min(top_k, |pool|) attributes by score, then by id. Zero-score
  /// attributes are included when the pool has fewer matches than top_k.
  std::vector<ScoredAttribute> retrieve(const DialogueContext& context, std::size_t top_k,
                                        std::size_t window = 2) const;

  /// Query text: the last `window` user turns, oldest first.
  static std::string query_text(const DialogueContext& context, std::size_t window = 2);

 private:
  std::vector<PersonaAttribute> pool_;
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;
  std::vector<double> norms_;
};

// ---------------------------------------------------------------------------
// Model seam

/// What the chat service needs from a model. Implementations must be safe for
/// concurrent calls.
class ResponseModel {
 public:
  virtual ~ResponseModel() = default;
  virtual Generation respond(const Demographics& d, const std::vector<std::string>& persona,
                             const DialogueContext& context, std::optional<Rtl> force) const = 0;
  virtual const IdfTable& idf() const = 0;
  virtual nlohmann::json describe() const = 0;
};

/// Greedy decoding with a loaded checkpoint.
class CheckpointModel : public ResponseModel {
 public:
  explicit CheckpointModel(std::shared_ptr<const LanguageModel> model, DecodeConfig dc = {})
      : model_(std::move(model)), dc_(dc) {}
  Generation respond(const Demographics& d, const std::vector<std::string>& persona, const DialogueContext& context,
                     std::optional<Rtl> force) const override {
    return model_->generate(d, persona, context, force, dc_);
  }
  const IdfTable& idf() const override { return model_->checkpoint().idf; }
  nlohmann::json describe() const override;

 private:
  std::shared_ptr<const LanguageModel> model_;
  DecodeConfig dc_;
};

// ---------------------------------------------------------------------------
// Journal

/// Append-only JSONL store. Each line is "<crc32 as 8 hex digits> <json>".
/// A damaged final line (a torn write) is dropped on open; damage anywhere
/// else is an error.
class Journal {
 public:
  explicit Journal(std::filesystem::path path);

  /// Records read at open time, in order.
  const std::vector<nlohmann::json>& recovered() const { return recovered_; }
  bool dropped_torn_tail() const { return dropped_tail_; }

  /// Writes and flushes one record. Thread-safe.
  void append(const nlohmann::json& record);

  const std::filesystem::path& path() const { return path_; }

  static std::string encode(const nlohmann::json& record);

 private:
  std::filesystem::path path_;
  std::vector<nlohmann::json> recovered_;
  bool dropped_tail_ = false;
  std::mutex mu_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Chat service

struct TurnDiagnostics {
  double f1 = 0;
  double p_cover = 0;
  GroundingJudgment grounding;
};

struct TurnResult {
  std::size_t turn_index = 0;  // agent-turn count before this turn
  std::string user_text;
  std::optional<Rtl> force_rtl;
  std::string response;
  std::optional<Rtl> rtl;
  std::vector<ScoredAttribute> retrieved;
  TurnDiagnostics diagnostics;
};

nlohmann::json to_json(const TurnResult& t);
TurnResult turn_result_from_json(const nlohmann::json& j);

struct SessionView {
  std::string session_id;
  std::string user_id;
  Demographics demographics;
  DialogueContext context;
  std::vector<TurnResult> log;
};

nlohmann::json to_json(const SessionView& s);

struct ServiceConfig {
  std::size_t top_k = 5;
  std::size_t retrieval_window = 2;
  Demographics default_demographics{"female", "20s"};
};

class ChatService {
 public:
  /// `journal` may be null for an in-memory service. An existing journal is
  /// replayed to restore users, personas and sessions.
  ChatService(std::shared_ptr<const ResponseModel> model, std::shared_ptr<Journal> journal, ServiceConfig cfg = {});

  /// Creates the user on first sight.
  std::string create_session(const std::string& user_id, std::optional<Demographics> demographics = std::nullopt);

  /// Throws NotFoundError for an unknown session. A failed generation
  /// propagates and leaves the session exactly as it was.
  TurnResult post_message(const std::string& session_id, const std::string& text,
                          std::optional<Rtl> force_rtl = std::nullopt);

  SessionView session(const std::string& session_id) const;

  /// Creates the user on first add. Returns the stored attribute.
  PersonaAttribute add_persona(const std::string& user_id, const std::string& text);
  /// Throws NotFoundError for an unknown user or id.
  void delete_persona(const std::string& user_id, const std::string& persona_id);
  /// Throws NotFoundError for an unknown user.
  std::vector<PersonaAttribute> list_personas(const std::string& user_id) const;

  std::vector<ScoredAttribute> retrieve(const std::string& user_id, const DialogueContext& context) const;

  /// Re-runs a session's logged (text, force_rtl) sequence on a scratch copy
  /// and reports, per turn, whether response and label came out identical.
  std::vector<bool> replay(const std::string& session_id) const;

  std::size_t session_count() const;
  std::size_t user_count() const;
  const ResponseModel& model() const { return *model_; }

 private:
  struct User {
    mutable std::shared_mutex mu;
    std::vector<PersonaAttribute> pool;
    PersonaIndex index;
    std::size_t next_id = 1;
  };
  struct Session {
    std::mutex mu;  // one in-flight turn per session
    std::string id, user_id;
    Demographics demographics;
    DialogueContext context;
    std::vector<TurnResult> log;
  };

  std::shared_ptr<User> user(const std::string& id, bool create);
  std::shared_ptr<User> find_user(const std::string& id) const;
  std::shared_ptr<Session> find_session(const std::string& id) const;
  TurnResult run_turn(const User& u, const Demographics& d, const DialogueContext& context, const std::string& text,
                      std::optional<Rtl> force, std::size_t index) const;
  void apply(const nlohmann::json& record);
  void write(const nlohmann::json& record);

  std::shared_ptr<const ResponseModel> model_;
  std::shared_ptr<Journal> journal_;
  ServiceConfig cfg_;
  mutable std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<User>> users_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;
};

}  // namespace wwh
