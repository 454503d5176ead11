#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace wwh {

/// Slot name -> candidate values. Templates reference slots as `{name}`.
using SlotTable = std::map<std::string, std::vector<std::string>>;
using SlotBinding = std::map<std::string, std::string>;

/// A persona topic: how attributes about it are stated, how the user cues it
/// and how the agent grounds it (hard = near-verbatim echo, soft = oblique).
struct Topic {
  std::string name;
  std::vector<std::string> keywords;
  SlotTable slots;
  std::vector<std::string> persona_templates;
  std::vector<std::string> cue_templates;
  std::vector<std::string> hard_templates;  // may use {echo}
  std::vector<std::string> soft_templates;
};

struct CasualPair {
  std::string user;
  std::string agent;
};

/// A family of non-personal exchanges (daily, knowledge, empathy).
struct CasualFamily {
  std::string name;
  SlotTable slots;
  std::vector<CasualPair> pairs;
  std::vector<std::string> acks;  // generic agent replies to personal remarks
};

/// Parsed template bank. See docs/template_bank.md for the file format.
class TemplateBank {
 public:
  static TemplateBank parse(std::istream& in);
  static TemplateBank parse_string(std::string_view text);
  static TemplateBank load(const std::filesystem::path& path);

  const std::vector<Topic>& topics() const { return topics_; }
  const std::vector<CasualFamily>& families() const { return families_; }
  const Topic& topic(std::string_view name) const;
  const CasualFamily& family(std::string_view name) const;
  bool has_family(std::string_view name) const;

  /// Topics whose keywords occur in `text`.
  std::set<std::string> topics_of(std::string_view text) const;

  /// FNV-1a of the source bytes; identifies the bank in generated output.
  std::uint64_t hash() const { return hash_; }

  /// Structural and lexical problems; empty when the bank is usable.
  /// Checks: every topic has persona/cue/hard/soft variants, keywords are
  /// exclusive to their topic, every persona and cue rendering mentions its
  /// topic, hard renderings have content-word Jaccard >= 0.5 with the persona
  /// and soft renderings fall in (0, 0.5).
  std::vector<std::string> lint() const;

  /// Throws ConfigError listing lint() problems.
  void require_valid() const;

 private:
  std::vector<Topic> topics_;
  std::vector<CasualFamily> families_;
  std::map<std::string, std::string> keyword_topic_;
  std::uint64_t hash_ = 0;
};

/// Slot names referenced by `tmpl`, excluding {echo}.
std::set<std::string> template_slots(std::string_view tmpl);

/// Replaces {slot} occurrences; {echo} is replaced by `echo`.
std::string fill_template(std::string_view tmpl, const SlotBinding& binding,
                          std::string_view echo = {});

/// First-person statement turned to second person ("i love my dog" ->
/// "you love your dog").
std::string second_person(std::string_view statement);

/// Every binding of the given slots (cartesian product, deterministic order).
std::vector<SlotBinding> all_bindings(const SlotTable& slots, const std::set<std::string>& names);

}  // namespace wwh
