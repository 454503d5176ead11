#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "wwh/blend.hpp"
#include "wwh/error.hpp"
#include "wwh/corpus.hpp"
#include "wwh/template_bank.hpp"

namespace wwh {

/// Which augmentation rule produced a persona subset.
enum class SubsetKind { PR, NPR, Casual };

std::string_view to_string(SubsetKind k);
SubsetKind parse_subset_kind(std::string_view s);

/// Kind is a pure function of the source corpus and the turn label:
/// personalized corpus + PRTL -> PR, personalized corpus + CRTL -> NPR,
/// any casual corpus -> Casual.
SubsetKind subset_kind_for(std::string_view corpus_kind, Rtl rtl);

/// The per-turn persona input rho.
struct PersonaSubset {
  SubsetKind kind = SubsetKind::Casual;
  std::vector<PersonaAttribute> attributes;  // in presentation order
  std::vector<std::string> positive_ids;     // ground truth, PR only

  std::vector<std::string> texts() const;
  bool is_positive(std::string_view id) const;
};

enum class NegativeSource { SameUserIrrelevant, OtherUser, Mixed };

std::string_view to_string(NegativeSource s);
NegativeSource parse_negative_source(std::string_view s);

struct AugmentConfig {
  std::size_t k = 5;
  NegativeSource negative_source = NegativeSource::SameUserIrrelevant;
  std::uint64_t seed = 0;
  std::size_t context_user_turns = 2;  // window used for topical irrelevance
};

class InsufficientCandidates : public Error {
 public:
  using Error::Error;
};

/// Builds persona subsets for agent turns of personalized corpora.
///
/// A candidate negative for an instance is an attribute that is not a
/// positive, is not grounded by any agent turn of the instance's session, and
/// shares no topic with the last `context_user_turns` user turns of the
/// context. Same-user candidates must also already be known at that turn.
/// In same_user_irrelevant mode other users' attributes are only used once the
/// user's own candidates run out.
class Augmenter {
 public:
  Augmenter(const TemplateBank& lexicon, AugmentConfig cfg);

  /// Registers attributes of other users as fallback negatives.
  void add_foreign_pool(const std::vector<Episode>& episodes);

  const AugmentConfig& config() const { return cfg_; }

  /// rho_pr: all grounded attributes plus sampled negatives, k in total,
  /// uniformly shuffled. `stream` selects the random stream.
  PersonaSubset augment_pr(const Episode& ep, std::size_t session, std::size_t turn, std::uint64_t stream) const;

  /// rho_npr: k contextually irrelevant attributes, no positives.
  PersonaSubset augment_npr(const Episode& ep, std::size_t session, std::size_t turn, std::uint64_t stream) const;

  /// rho_c: always empty.
  static PersonaSubset augment_casual();

  /// Dispatches on subset_kind_for(corpus_kind, turn rtl).
  PersonaSubset augment(std::string_view corpus_kind, const Episode& ep, std::size_t session, std::size_t turn,
                        std::uint64_t stream) const;

  /// Topics mentioned by the last `context_user_turns` user turns before `turn`.
  std::set<std::string> context_topics(const Session& session, std::size_t turn) const;

  /// Ids grounded by any agent turn of the session.
  static std::set<std::string> session_grounded_ids(const Session& session);

 private:
  struct Foreign {
    std::string owner;
    PersonaAttribute attr;
    std::set<std::string> topics;
  };

  PersonaSubset build(const Episode& ep, std::size_t session, std::size_t turn, std::uint64_t stream,
                      const std::vector<std::string>& positives, SubsetKind kind) const;

  const TemplateBank& lexicon_;
  AugmentConfig cfg_;
  std::vector<Foreign> foreign_;
};

/// Per-instance stream key: the instance identity plus its copy number in an
/// oversampled manifest.
std::uint64_t augment_stream(const InstanceRef& ref, std::size_t copy_index);

}  // namespace wwh
