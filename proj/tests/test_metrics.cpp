#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "wwh/metrics.hpp"
#include "wwh/rng.hpp"

using namespace wwh;

namespace {

std::string random_sentence(Rng& rng, const std::vector<std::string>& lex, std::size_t max_len) {
  std::string s;
  const std::size_t n = rng.below(max_len + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!s.empty()) s += rng.bernoulli(0.1) ? ", " : " ";
    s += rng.pick(lex);
  }
  return s;
}

const std::vector<std::string> kLex = {"dog", "cat", "pasta", "hiking", "the", "a", "i", "love", "my",
                                       "guitar", "and", "mountain", "run", "Coffee", "coffee", "is", "to"};

}  // namespace

TEST(Metrics, F1HandExample) {
  // Response words {a,b,c}, persona words {b,c,d}: P = R = F1 = 2/3.
  EXPECT_NEAR(persona_f1("apple banana cherry", {"banana cherry durian"}), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, F1Boundaries) {
  EXPECT_DOUBLE_EQ(persona_f1("i love hiking", {"i love hiking"}), 1.0);
  EXPECT_DOUBLE_EQ(persona_f1("guitar music", {"i love hiking"}), 0.0);
  EXPECT_DOUBLE_EQ(persona_f1("", {"i love hiking"}), 0.0);
  EXPECT_DOUBLE_EQ(persona_f1("hiking", {}), 0.0);
}

TEST(Metrics, PCoverBoundariesAndHandExample) {
  auto idf = IdfTable::from_counts(4, {{"apple", 1}, {"banana", 3}, {"cherry", 0}, {"durian", 2}, {"elder", 1}});
  EXPECT_DOUBLE_EQ(p_cover("apple banana", {"apple banana"}, idf), 1.0);
  EXPECT_DOUBLE_EQ(p_cover("fig", {"apple banana"}, idf), 0.0);
  // Attribute 1 {apple, banana}: covered apple. Attribute 2 {cherry, durian, elder}: covered durian, elder.
  const double ia = std::log(5.0 / 2.0) + 1, ib = std::log(5.0 / 4.0) + 1, ic = std::log(5.0) + 1,
               id = std::log(5.0 / 3.0) + 1, ie = std::log(5.0 / 2.0) + 1;
  const double want = std::max(ia / (ia + ib), (id + ie) / (ic + id + ie));
  EXPECT_NEAR(p_cover("apple durian elder", {"apple banana", "cherry durian elder"}, idf), want, 1e-15);
}

TEST(Metrics, IdfFormulaAndSerialization) {
  auto idf = IdfTable::build({"dog park", "dog", "cat"});
  EXPECT_EQ(idf.documents(), 3u);
  EXPECT_DOUBLE_EQ(idf.idf("dog"), std::log(4.0 / 3.0) + 1);
  EXPECT_DOUBLE_EQ(idf.idf("unseen"), std::log(4.0) + 1);
  auto back = IdfTable::from_json(idf.to_json());
  EXPECT_EQ(back.document_frequencies(), idf.document_frequencies());
  EXPECT_EQ(back.documents(), idf.documents());
}

TEST(Metrics, MatchBruteForceOracles) {
  Rng rng(99);
  std::vector<std::string> docs;
  for (int i = 0; i < 40; ++i) docs.push_back(random_sentence(rng, kLex, 8));
  auto idf = IdfTable::build(docs);
  auto oracle_idf = [&](const std::string& w) { return oracle::idf_of(docs, w); };
  for (int i = 0; i < 1000; ++i) {
    const auto r = random_sentence(rng, kLex, 10);
    std::vector<std::string> attrs;
    for (std::size_t j = 0, n = rng.below(5); j < n; ++j) attrs.push_back(random_sentence(rng, kLex, 6));
    EXPECT_EQ(persona_f1(r, attrs), oracle::f1(r, attrs)) << r;
    EXPECT_EQ(p_cover(r, attrs, idf), oracle::p_cover(r, attrs, oracle_idf)) << r;
  }
}

TEST(Grounding, CrtlIsNone) {
  auto g = classify_grounding("you love hiking", {{"p1", "i love hiking", std::nullopt}}, Rtl::CRTL);
  EXPECT_EQ(g.level, GroundingLevel::None);
  EXPECT_FALSE(g.matched_persona_id);
}

TEST(Grounding, VerbatimEchoIsHard) {
  auto g = classify_grounding("I love hiking!", {{"p1", "i love hiking", std::nullopt}}, Rtl::PRTL);
  EXPECT_EQ(g.level, GroundingLevel::Hard);
  EXPECT_DOUBLE_EQ(g.similarity, 1.0);
  EXPECT_EQ(g.matched_persona_id, "p1");
}

TEST(Grounding, ZeroOverlapIsSoftWithLowestId) {
  std::vector<PersonaAttribute> a = {{"p2", "i play guitar", std::nullopt}, {"p10", "i like chess", std::nullopt}};
  auto g = classify_grounding("nice weather", a, Rtl::PRTL);
  EXPECT_EQ(g.level, GroundingLevel::Soft);
  EXPECT_DOUBLE_EQ(g.similarity, 0.0);
  EXPECT_EQ(g.matched_persona_id, "p10");  // lexicographic
}

TEST(Grounding, ThresholdAndOrderInvariance) {
  std::vector<PersonaAttribute> a = {{"p1", "cooking pasta sunday family", std::nullopt}};
  // Jaccard 2/4 = 0.5 sits on the threshold.
  EXPECT_EQ(classify_grounding("pasta sunday", a, Rtl::PRTL).level, GroundingLevel::Hard);
  EXPECT_EQ(classify_grounding("pasta", a, Rtl::PRTL).level, GroundingLevel::Soft);
  auto x = classify_grounding("sunday, pasta!", a, Rtl::PRTL);
  auto y = classify_grounding("pasta sunday", a, Rtl::PRTL);
  EXPECT_EQ(x.similarity, y.similarity);
  EXPECT_EQ(x.level, y.level);
}
