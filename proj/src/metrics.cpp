#include "wwh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "wwh/error.hpp"
#include "wwh/text.hpp"

namespace wwh {

using nlohmann::json;

IdfTable IdfTable::build(const std::vector<std::string>& documents) {
  std::map<std::string, std::size_t> df;
  for (const auto& d : documents) {
    for (const auto& w : text::content_word_set(d)) ++df[w];
  }
  return from_counts(documents.size(), std::move(df));
}

IdfTable IdfTable::from_counts(std::size_t n_documents, std::map<std::string, std::size_t> df) {
  IdfTable t;
  t.n_ = n_documents;
  t.df_ = std::move(df);
  return t;
}

double IdfTable::idf(std::string_view word) const {
  auto it = df_.find(std::string(word));
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((static_cast<double>(n_) + 1.0) / (df + 1.0)) + 1.0;
}

json IdfTable::to_json() const { return json{{"documents", n_}, {"df", df_}}; }

IdfTable IdfTable::from_json(const json& j) {
  return from_counts(j.at("documents").get<std::size_t>(), j.at("df").get<std::map<std::string, std::size_t>>());
}

void IdfTable::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json().dump() << '\n';
}

IdfTable IdfTable::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return from_json(json::parse(f));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

double persona_f1(std::string_view response, const std::vector<std::string>& attributes) {
  const auto r = text::content_word_set(response);
  std::set<std::string> p;
  for (const auto& a : attributes) {
    auto s = text::content_word_set(a);
    p.insert(s.begin(), s.end());
  }
  if (r.empty() || p.empty()) return 0.0;
  std::size_t overlap = 0;
  for (const auto& w : r) overlap += p.count(w);
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(r.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(p.size());
  return 2 * precision * recall / (precision + recall);
}

double p_cover(std::string_view response, const std::vector<std::string>& attributes, const IdfTable& idf) {
  const auto r = text::content_word_set(response);
  double best = 0.0;
  for (const auto& a : attributes) {
    double num = 0, den = 0;
    for (const auto& w : text::content_word_set(a)) {
      const double v = idf.idf(w);
      den += v;
      if (r.count(w)) num += v;
    }
    if (den > 0) best = std::max(best, num / den);
  }
  return best;
}

std::string_view to_string(GroundingLevel g) {
  switch (g) {
    case GroundingLevel::Hard: return "HARD";
    case GroundingLevel::Soft: return "SOFT";
    case GroundingLevel::None: return "NONE";
  }
  return "NONE";
}

GroundingLevel parse_grounding_level(std::string_view s) {
  if (s == "HARD") return GroundingLevel::Hard;
  if (s == "SOFT") return GroundingLevel::Soft;
  if (s == "NONE") return GroundingLevel::None;
  throw Error("unknown grounding level '" + std::string(s) + "'");
}

GroundingJudgment classify_grounding(std::string_view response, const std::vector<PersonaAttribute>& attributes,
                                     Rtl rtl_emitted, double tau_hard) {
  GroundingJudgment g;
  if (rtl_emitted == Rtl::CRTL) return g;
  g.level = GroundingLevel::Soft;
  const auto r = text::content_word_set(response);
  for (const auto& a : attributes) {
    const double s = text::jaccard(r, text::content_word_set(a.text));
    if (!g.matched_persona_id || s > g.similarity || (s == g.similarity && a.id < *g.matched_persona_id)) {
      g.similarity = s;
      g.matched_persona_id = a.id;
    }
  }
  if (g.similarity >= tau_hard) g.level = GroundingLevel::Hard;
  return g;
}

json to_json(const GroundingJudgment& g) {
  return json{{"level", to_string(g.level)},
              {"similarity", g.similarity},
              {"matched_id", g.matched_persona_id ? json(*g.matched_persona_id) : json(nullptr)}};
}

}  // namespace wwh
