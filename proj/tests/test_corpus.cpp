#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"
#include "wwh/corpus.hpp"
#include "wwh/error.hpp"
#include "wwh/text.hpp"

using namespace wwh;

namespace {

Turn user(std::string t) { return {Speaker::User, std::move(t)}; }
Turn agent(std::string t, Rtl r, std::vector<std::string> grounded = {}) {
  Turn a{Speaker::Agent, std::move(t)};
  a.rtl = r;
  a.grounded_persona_ids = std::move(grounded);
  return a;
}

// Ten alternating turns with one personalized response at turn 3.
Episode tiny_episode() {
  Episode e;
  e.user_id = "u1";
  e.demographics = {"female", "20s"};
  e.persona_pool = {{"p1", "i love hiking in the mountains", std::nullopt}};
  Session s;
  for (int i = 0; i < 5; ++i) {
    s.turns.push_back(user("hello there number " + std::to_string(i)));
    s.turns.push_back(i == 1 ? agent("you love hiking in the mountains", Rtl::PRTL, {"p1"})
                             : agent("that sounds nice", Rtl::CRTL));
  }
  e.sessions.push_back(s);
  return e;
}

}  // namespace

TEST(Text, TokenizeLowercasesAndSplits) {
  EXPECT_EQ(text::tokenize("Hello, World! don't"), (std::vector<std::string>{"hello", "world", "dont"}));
  EXPECT_TRUE(text::tokenize("  ,,  ").empty());
}

TEST(Text, ContentWordsSkipStopwords) {
  auto w = text::content_words("I love my dog and my dog loves me");
  for (const auto& x : w) EXPECT_FALSE(text::is_stopword(x)) << x;
  EXPECT_EQ(text::content_word_set("the dog the dog"), (std::set<std::string>{"dog"}));
}

TEST(Text, StopwordListIsSorted) {
  const auto& s = text::stopwords();
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_FALSE(s.empty());
}

TEST(Text, Jaccard) {
  EXPECT_DOUBLE_EQ(text::jaccard({}, {}), 0.0);
  EXPECT_DOUBLE_EQ(text::jaccard({"a", "b"}, {"b", "c"}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(text::jaccard({"a"}, {"a"}), 1.0);
}

TEST(Corpus, TinyEpisodeValidates) {
  auto r = validate_episode(tiny_episode());
  EXPECT_TRUE(r.ok()) << (r.ok() ? "" : r.violations.front().invariant);
}

TEST(Corpus, DanglingPersonaReference) {
  Episode e = tiny_episode();
  e.sessions[0].turns[3].grounded_persona_ids = {"p9"};
  auto r = validate_episode(e);
  EXPECT_TRUE(r.mentions("dangling persona reference"));
}

TEST(Corpus, PrtlWithoutGroundingAndCrtlWithGrounding) {
  Episode e = tiny_episode();
  e.sessions[0].turns[3].grounded_persona_ids.clear();
  EXPECT_TRUE(validate_episode(e).mentions("PRTL requires grounding ids"));
  e = tiny_episode();
  e.sessions[0].turns[1].grounded_persona_ids = {"p1"};
  EXPECT_TRUE(validate_episode(e).mentions("CRTL must not carry grounding ids"));
}

TEST(Corpus, AlternationAndAgentLabel) {
  Episode e = tiny_episode();
  std::swap(e.sessions[0].turns[0], e.sessions[0].turns[1]);
  EXPECT_TRUE(validate_episode(e).mentions("alternate"));
  e = tiny_episode();
  e.sessions[0].turns[1].rtl.reset();
  EXPECT_TRUE(validate_episode(e).mentions("AGENT turn missing rtl"));
}

TEST(Corpus, PersonalizedCapPerSession) {
  Episode e = tiny_episode();
  for (std::size_t t : {1u, 5u, 7u}) {
    e.sessions[0].turns[t].rtl = Rtl::PRTL;
    e.sessions[0].turns[t].grounded_persona_ids = {"p1"};
  }
  EXPECT_TRUE(validate_episode(e).mentions("exceed cap"));
}

TEST(Corpus, SessionLengthRange) {
  Episode e = tiny_episode();
  e.sessions[0].turns.resize(8);
  EXPECT_TRUE(validate_episode(e).mentions("session length"));
  ValidationOptions loose;
  loose.enforce_turn_range = false;
  EXPECT_TRUE(validate_episode(e, {}, loose).ok());
}

TEST(Corpus, DemographicsMustBeDeclared) {
  Episode e = tiny_episode();
  e.demographics.age_band = "90s";
  EXPECT_TRUE(validate_episode(e).mentions("age_band"));
}

TEST(Corpus, IntroducedPersonaNeedsMatchingSourceTurn) {
  Episode e = tiny_episode();
  e.persona_pool.push_back({"p2", "i have a cat", TurnLocation{0, 2}});
  e.sessions[0].turns[2].introduces_persona_ids = {"p2"};
  EXPECT_TRUE(validate_episode(e).ok());
  e.persona_pool.back().source_turn = TurnLocation{0, 4};
  EXPECT_FALSE(validate_episode(e).ok());
}

TEST(Corpus, JsonRoundTripIsIdentity) {
  Corpus c = wwh::testing::mspd_corpus(5, 3);
  std::stringstream ss;
  write_corpus(ss, c);
  Corpus back = read_corpus(ss);
  EXPECT_EQ(back.header, c.header);
  ASSERT_EQ(back.episodes.size(), c.episodes.size());
  for (std::size_t i = 0; i < c.episodes.size(); ++i) {
    EXPECT_EQ(back.episodes[i], c.episodes[i]);
    EXPECT_EQ(serialize_episode(back.episodes[i]), serialize_episode(c.episodes[i]));
  }
}

TEST(Corpus, ParseErrorCarriesLineNumber) {
  Corpus c = wwh::testing::mspd_corpus(2, 3);
  std::stringstream ss;
  write_corpus(ss, c);
  std::string s = ss.str() + "{not json\n";
  std::istringstream in(s);
  try {
    read_corpus(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(Corpus, SchemaErrorNamesEpisodeAndInvariant) {
  Corpus c;
  c.episodes.push_back(tiny_episode());
  c.episodes[0].sessions[0].turns[3].grounded_persona_ids = {"ghost"};
  std::stringstream ss;
  write_corpus(ss, c);
  try {
    read_corpus(ss);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("u1"), std::string::npos);
    EXPECT_NE(msg.find("dangling persona reference"), std::string::npos);
  }
}

TEST(Corpus, MissingFileIsIoError) {
  EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), IoError);
}

TEST(Corpus, ContextBeforeEndsWithUser) {
  Episode e = tiny_episode();
  auto ctx = context_before(e.sessions[0], 3);
  ASSERT_EQ(ctx.size(), 3u);
  EXPECT_EQ(ctx.back().speaker, Speaker::User);
  EXPECT_EQ(ctx.front().text, e.sessions[0].turns[0].text);
}

TEST(Corpus, StatsOfTinyEpisode) {
  auto s = corpus_stats({tiny_episode()});
  EXPECT_EQ(s.episodes, 1u);
  EXPECT_EQ(s.sessions, 1u);
  EXPECT_EQ(s.utterances, 10u);
  EXPECT_DOUBLE_EQ(s.avg_turns_per_session, 10.0);
  EXPECT_DOUBLE_EQ(s.avg_personalized_per_session, 1.0);
  EXPECT_DOUBLE_EQ(s.avg_persona_per_episode, 1.0);
  EXPECT_THROW(corpus_stats({}), Error);
}
