#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wwh/augment.hpp"
#include "wwh/blend.hpp"
#include "wwh/corpus.hpp"
#include "wwh/vocab.hpp"

namespace wwh {

/// The (d, rho, c, rtl, y) tuple before tokenization.
struct DialogueInstance {
  Demographics demographics;
  std::vector<std::string> persona;  // attribute texts in presentation order
  DialogueContext context;           // ends with a user turn
  Rtl rtl = Rtl::CRTL;
  std::string response;

  bool operator==(const DialogueInstance&) const = default;
};

struct SerializeOptions {
  std::size_t max_seq_len = 256;
  /// When false the RTL slot is omitted entirely (the no-label baseline).
  bool emit_rtl = true;
};

struct InstanceMeta {
  InstanceRef ref;
  std::size_t copy_index = 0;
  SubsetKind kind = SubsetKind::Casual;
  std::vector<std::string> persona_ids;
  std::vector<std::size_t> positive_positions;  // indices into persona_ids
  std::size_t dropped_turns = 0;                // context turns removed by truncation
};

struct TrainingInstance {
  std::vector<int> input_ids;
  std::vector<bool> loss_mask;
  Rtl rtl = Rtl::CRTL;
  InstanceMeta meta;

  /// Index of the first masked position.
  std::size_t target_start() const;
  std::size_t masked_count() const;
};

/// Layout:
///   <BOS> <DEMO> gender age <SEP> [<PERSONA> a_1 <SEP> ... a_k <SEP>]
///   (<USR>|<AGT> words)* <AGT> <PRTL|CRTL> y <EOS>
/// The loss mask covers the label, the response and <EOS>. The oldest context
/// turns are dropped (keeping the context starting with a user turn) until the
/// sequence fits. Throws Error if it does not fit with no context at all, or if
/// the context does not alternate starting with a user turn.
TrainingInstance serialize(const DialogueInstance& x, const Vocabulary& vocab, const SerializeOptions& opts = {});

/// Prompt for decoding: the layout up to and including the final <AGT>, plus
/// the label token when `forced` is set. Truncates like serialize, reserving
/// `reserve` positions for the generated part.
std::vector<int> serialize_prompt(const Demographics& d, const std::vector<std::string>& persona,
                                  const DialogueContext& context, const Vocabulary& vocab,
                                  std::size_t max_seq_len, std::size_t reserve,
                                  std::optional<Rtl> forced = std::nullopt);

/// Inverse of serialize. Texts come back in normalized (tokenized, space
/// joined) form. Throws ParseError on a malformed layout.
DialogueInstance deserialize(const std::vector<int>& ids, const Vocabulary& vocab, bool expect_rtl = true);

/// Normalized form of a text, as it survives a round trip.
std::string normalize_text(std::string_view text);

// ---------------------------------------------------------------------------
// Training files: a header line, then one record per instance.

struct TrainingHeader {
  std::string vocab_file;
  std::string vocab_hash;
  std::string idf_file;
  bool emit_rtl = true;
  std::size_t max_seq_len = 256;
  std::size_t k = 5;
  std::size_t count = 0;
};

struct TrainingSet {
  TrainingHeader header;
  std::vector<TrainingInstance> instances;
};

nlohmann::json to_json(const TrainingInstance& t);
TrainingInstance training_instance_from_json(const nlohmann::json& j);

void write_training_set(std::ostream& out, const TrainingSet& set);
void save_training_set(const std::filesystem::path& path, const TrainingSet& set);
TrainingSet read_training_set(std::istream& in);
TrainingSet load_training_set(const std::filesystem::path& path);

}  // namespace wwh
