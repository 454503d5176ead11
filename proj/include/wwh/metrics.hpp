#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wwh/corpus.hpp"

namespace wwh {

/// Inverse document frequency over content words:
/// idf(w) = ln((N + 1) / (df(w) + 1)) + 1, so unseen words get the maximum.
class IdfTable {
 public:
  IdfTable() = default;

  static IdfTable build(const std::vector<std::string>& documents);
  static IdfTable from_counts(std::size_t n_documents, std::map<std::string, std::size_t> df);

  double idf(std::string_view word) const;
  std::size_t documents() const { return n_; }
  const std::map<std::string, std::size_t>& document_frequencies() const { return df_; }

  nlohmann::json to_json() const;
  static IdfTable from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static IdfTable load(const std::filesystem::path& path);

 private:
  std::size_t n_ = 0;
  std::map<std::string, std::size_t> df_;
};

/// Set-level F1 between the response's distinct content words and the union
/// of the attributes' distinct content words. 0 when either side is empty.
double persona_f1(std::string_view response, const std::vector<std::string>& attributes);

/// max_j  sum_{w in response and a_j} idf(w) / sum_{w in a_j} idf(w), over
/// distinct content words. Attributes without content words score 0.
double p_cover(std::string_view response, const std::vector<std::string>& attributes, const IdfTable& idf);

enum class GroundingLevel { Hard, Soft, None };
std::string_view to_string(GroundingLevel g);
GroundingLevel parse_grounding_level(std::string_view s);

struct GroundingJudgment {
  GroundingLevel level = GroundingLevel::None;
  double similarity = 0;
  std::optional<std::string> matched_persona_id;
};

inline constexpr double kHardGroundingThreshold = 0.5;

/// NONE for CRTL. Otherwise the attribute with the highest content-word
/// Jaccard similarity (ties to the lexicographically smallest id) decides:
/// HARD at or above `tau_hard`, SOFT below.
GroundingJudgment classify_grounding(std::string_view response, const std::vector<PersonaAttribute>& attributes,
                                     Rtl rtl_emitted, double tau_hard = kHardGroundingThreshold);

nlohmann::json to_json(const GroundingJudgment& g);

}  // namespace wwh
