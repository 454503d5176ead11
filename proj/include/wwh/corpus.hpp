#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace wwh {

enum class Speaker { User, Agent };
enum class Rtl { PRTL, CRTL };
enum class Consistency { Consistent, Inconsistent };

std::string_view to_string(Speaker s);
std::string_view to_string(Rtl r);
std::string_view to_string(Consistency c);
Rtl parse_rtl(std::string_view s);

struct Demographics {
  std::string gender;
  std::string age_band;
  bool operator==(const Demographics&) const = default;
};

struct TurnLocation {
  std::size_t session_index = 0;
  std::size_t turn_index = 0;
  bool operator==(const TurnLocation&) const = default;
};

struct PersonaAttribute {
  std::string id;
  std::string text;
  std::optional<TurnLocation> source_turn;
  bool operator==(const PersonaAttribute&) const = default;
};

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;
  std::optional<Rtl> rtl;  // agent turns only
  std::vector<std::string> grounded_persona_ids;
  std::vector<std::string> introduces_persona_ids;
  std::optional<Consistency> consistency_annotation;  // manual field, never auto-filled
  bool operator==(const Turn&) const = default;
};

struct Session {
  std::vector<Turn> turns;
  bool operator==(const Session&) const = default;
};

struct Episode {
  std::string user_id;
  Demographics demographics;
  std::vector<PersonaAttribute> persona_pool;
  std::vector<Session> sessions;

  const PersonaAttribute* find_persona(std::string_view id) const;
  bool operator==(const Episode&) const = default;
};

/// One utterance of a running dialogue, without annotations.
struct ContextTurn {
  Speaker speaker = Speaker::User;
  std::string text;
  bool operator==(const ContextTurn&) const = default;
};

/// Alternating u_1, a_1, ..., u_m; the last element is a user turn.
using DialogueContext = std::vector<ContextTurn>;

/// Context preceding the agent turn at `turn_index` of a session.
DialogueContext context_before(const Session& session, std::size_t turn_index);

/// Enumerations and provenance declared by the first record of a corpus file.
struct CorpusHeader {
  std::string kind = "mspd";  // mspd | daily | knowledge | empathy | casual
  std::vector<std::string> genders = {"female", "male"};
  std::vector<std::string> age_bands = {"10s", "20s", "30s", "40s", "50s", "60s", "70s"};
  bool operator==(const CorpusHeader&) const = default;

  bool is_mspd() const { return kind == "mspd"; }
};

struct Corpus {
  CorpusHeader header;
  std::vector<Episode> episodes;
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string invariant;  // short stable message, e.g. "dangling persona reference"
  std::string location;   // e.g. "episode u12 session 0 turn 3"
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  /// True when some violation's invariant contains `needle`.
  bool mentions(std::string_view needle) const;
};

struct ValidationOptions {
  bool enforce_turn_range = true;
  std::size_t min_turns = 10;
  std::size_t max_turns = 12;
};

inline constexpr std::size_t kMaxPersonalizedPerSession = 2;

ValidationResult validate_episode(const Episode& e, const CorpusHeader& header = {},
                                  const ValidationOptions& opts = {});

// ---------------------------------------------------------------------------
// Serialization. One JSON object per line; the first line is the header.

nlohmann::json to_json(const Episode& e);
Episode episode_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorpusHeader& h);
CorpusHeader header_from_json(const nlohmann::json& j);

/// Canonical single-line form of an episode (sorted keys, no whitespace).
std::string serialize_episode(const Episode& e);

/// Reads and validates a corpus file. Throws IoError, ParseError (with the
/// line number) or SchemaError (with episode id and invariant).
Corpus load_corpus(const std::filesystem::path& path, const ValidationOptions& opts = {});
Corpus read_corpus(std::istream& in, const ValidationOptions& opts = {});

void write_corpus(std::ostream& out, const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

// ---------------------------------------------------------------------------
// Statistics

struct CorpusStats {
  std::size_t episodes = 0;
  std::size_t sessions = 0;
  std::size_t utterances = 0;
  double avg_turns_per_session = 0;
  double avg_personalized_per_session = 0;
  double avg_persona_per_episode = 0;
  double avg_new_persona_per_episode = 0;
  double avg_user_utterance_words = 0;
  double avg_agent_response_words = 0;
};

/// Throws Error on an empty list.
CorpusStats corpus_stats(const std::vector<Episode>& episodes);

nlohmann::json to_json(const CorpusStats& s);

}  // namespace wwh
