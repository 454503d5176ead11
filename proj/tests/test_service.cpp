#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "oracles.hpp"
#include "support.hpp"
#include "wwh/service.hpp"

using namespace wwh;

namespace {

/// Echoes the first retrieved attribute, or a fixed line. Can be told to fail.
class FakeModel : public ResponseModel {
 public:
  mutable std::atomic<bool> fail{false};
  mutable std::atomic<int> calls{0};
  IdfTable table = IdfTable::build({"i love hiking", "my dog"});

  Generation respond(const Demographics&, const std::vector<std::string>& persona, const DialogueContext& context,
                     std::optional<Rtl> force) const override {
    ++calls;
    if (fail) throw Error("injected failure");
    Generation g;
    const bool personal = force ? *force == Rtl::PRTL : !persona.empty();
    g.rtl = personal ? Rtl::PRTL : Rtl::CRTL;
    g.text = personal && !persona.empty() ? persona.front() : "tell me more (" + std::to_string(context.size()) + ")";
    return g;
  }
  const IdfTable& idf() const override { return table; }
  nlohmann::json describe() const override { return {{"fake", true}}; }
};

std::shared_ptr<const LanguageModel> tiny_language_model() {
  static auto lm = [] {
    wwh::testing::MiniWorld w(6, 3);
    Checkpoint c;
    c.config.n_layers = 1;
    c.config.d_model = 16;
    c.config.n_heads = 2;
    c.config.max_seq_len = 128;
    c.config.vocab_size = w.vocab.size();
    c.config.dropout = 0;
    c.vocab = w.vocab;
    c.idf = w.idf;
    c.params = init_parameters(c.config);
    return std::make_shared<const LanguageModel>(c);
  }();
  return lm;
}

DialogueContext user_turns(std::initializer_list<const char*> texts) {
  DialogueContext c;
  for (const char* t : texts) {
    if (!c.empty()) c.push_back({Speaker::Agent, "ok"});
    c.push_back({Speaker::User, t});
  }
  return c;
}

}  // namespace

TEST(Retrieval, MatchesExhaustiveCosine) {
  const auto corpus = wwh::testing::mspd_corpus(20, 8);
  Rng rng(4);
  std::size_t queries = 0;
  for (const auto& ep : corpus.episodes) {
    PersonaIndex index(ep.persona_pool);
    std::vector<std::string> docs;
    for (const auto& a : ep.persona_pool) docs.push_back(a.text);
    auto idf = [&](const std::string& w) { return oracle::idf_of(docs, w); };
    for (const auto& s : ep.sessions) {
      for (std::size_t t = 2; t < s.turns.size(); t += 4) {
        const DialogueContext ctx = context_before(s, t + 1);
        const auto got = index.retrieve(ctx, 5);
        const std::string q = PersonaIndex::query_text(ctx);
        std::vector<std::pair<double, std::string>> want;
        for (const auto& a : ep.persona_pool) want.emplace_back(oracle::cosine(q, a.text, idf), a.id);
        std::sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
          return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        ASSERT_EQ(got.size(), std::min<std::size_t>(5, want.size()));
        for (std::size_t i = 0; i < got.size(); ++i) {
          EXPECT_NEAR(got[i].score, want[i].first, 1e-12);
          // Ids agree unless two scores tie within rounding.
          if (i + 1 < want.size() && std::abs(want[i].first - want[i + 1].first) > 1e-12 &&
              (i == 0 || std::abs(want[i].first - want[i - 1].first) > 1e-12)) {
            EXPECT_EQ(got[i].attribute.id, want[i].second);
          }
        }
        ++queries;
      }
    }
  }
  EXPECT_GE(queries, 100u);
}

TEST(Retrieval, WindowAndEdgeCases) {
  PersonaIndex empty;
  EXPECT_TRUE(empty.retrieve(user_turns({"hiking"}), 5).empty());
  PersonaIndex idx({{"p1", "i love hiking", std::nullopt}, {"p2", "my dog is a beagle", std::nullopt},
                    {"p3", "the the the", std::nullopt}});
  auto ctx = user_turns({"my dog barks", "what about the weather", "and hiking"});
  EXPECT_EQ(PersonaIndex::query_text(ctx), "what about the weather and hiking");
  auto r = idx.retrieve(ctx, 5);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].attribute.id, "p1");
  EXPECT_EQ(r[1].score, 0.0);  // dog is outside the window
  EXPECT_EQ(r[1].attribute.id, "p2");
  EXPECT_EQ(idx.retrieve(ctx, 5, 3)[1].attribute.id, "p2");
  EXPECT_GT(idx.retrieve(ctx, 5, 3)[1].score, 0.0);
  EXPECT_EQ(idx.retrieve(ctx, 1).size(), 1u);
  EXPECT_EQ(idx.postings_count(), 4u);  // love, hiking, dog, beagle
}

TEST(Journal, EncodesAndRecovers) {
  wwh::testing::TempDir dir;
  const auto p = dir / "store.jsonl";
  {
    Journal j(p);
    EXPECT_TRUE(j.recovered().empty());
    j.append({{"op", "a"}});
    j.append({{"op", "b"}});
  }
  Journal j(p);
  ASSERT_EQ(j.recovered().size(), 2u);
  EXPECT_EQ(j.recovered()[1]["op"], "b");
  EXPECT_FALSE(j.dropped_torn_tail());
  const auto line = Journal::encode({{"x", 1}});
  EXPECT_EQ(line[8], ' ');
  EXPECT_EQ(line.back(), '\n');
}

TEST(Journal, DropsTornTail) {
  wwh::testing::TempDir dir;
  const auto p = dir / "store.jsonl";
  {
    Journal j(p);
    j.append({{"op", "a"}});
  }
  const auto good = std::filesystem::file_size(p);
  {
    std::ofstream f(p, std::ios::app | std::ios::binary);
    const auto line = Journal::encode({{"op", "b"}});
    f << line.substr(0, line.size() / 2);  // no newline: torn
  }
  {
    Journal j(p);
    EXPECT_TRUE(j.dropped_torn_tail());
    EXPECT_EQ(j.recovered().size(), 1u);
    EXPECT_EQ(std::filesystem::file_size(p), good);
    j.append({{"op", "c"}});
  }
  Journal j(p);
  ASSERT_EQ(j.recovered().size(), 2u);
  EXPECT_EQ(j.recovered()[1]["op"], "c");
}

TEST(Journal, MidFileDamageIsAnError) {
  wwh::testing::TempDir dir;
  const auto p = dir / "store.jsonl";
  {
    Journal j(p);
    j.append({{"op", "a"}});
    j.append({{"op", "b"}});
  }
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12);
    f.put('Z');
  }
  EXPECT_THROW(Journal{p}, ParseError);
}

TEST(Service, PersonaIdsAndDeletion) {
  ChatService svc(std::make_shared<FakeModel>(), nullptr);
  EXPECT_EQ(svc.add_persona("u", "i love hiking").id, "p1");
  EXPECT_EQ(svc.add_persona("u", "my dog is a beagle").id, "p2");
  EXPECT_EQ(svc.add_persona("v", "i bake bread").id, "p1");
  svc.delete_persona("u", "p1");
  EXPECT_EQ(svc.add_persona("u", "i swim").id, "p3");  // ids are never reused
  auto list = svc.list_personas("u");
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0].id, "p2");
  EXPECT_THROW(svc.delete_persona("u", "p1"), NotFoundError);
  EXPECT_THROW(svc.list_personas("nobody"), NotFoundError);
  EXPECT_THROW(svc.add_persona("u", "  ... "), Error);
  EXPECT_THROW(svc.add_persona("", "x"), Error);
}

TEST(Service, TurnsUseRetrievedPersona) {
  auto model = std::make_shared<FakeModel>();
  ChatService svc(model, nullptr);
  svc.add_persona("u", "i love hiking in the mountains");
  svc.add_persona("u", "my dog is a beagle");
  const auto s = svc.create_session("u");
  EXPECT_EQ(s, "s1");
  auto t = svc.post_message(s, "do you like hiking");
  EXPECT_EQ(t.retrieved.front().attribute.id, "p1");
  EXPECT_EQ(t.response, "i love hiking in the mountains");
  EXPECT_EQ(t.rtl, Rtl::PRTL);
  EXPECT_EQ(t.diagnostics.grounding.level, GroundingLevel::Hard);
  auto c = svc.post_message(s, "ok", Rtl::CRTL);
  EXPECT_EQ(c.turn_index, 1u);
  EXPECT_EQ(c.diagnostics.grounding.level, GroundingLevel::None);
  auto v = svc.session(s);
  EXPECT_EQ(v.context.size(), 4u);
  EXPECT_EQ(v.log.size(), 2u);
  EXPECT_THROW(svc.post_message("s99", "hi"), NotFoundError);
  EXPECT_THROW(svc.create_session("u", Demographics{"two words", "20s"}), Error);
}

TEST(Service, FailedGenerationLeavesNoTrace) {
  wwh::testing::TempDir dir;
  auto model = std::make_shared<FakeModel>();
  auto journal = std::make_shared<Journal>(dir / "store.jsonl");
  ChatService svc(model, journal);
  svc.add_persona("u", "i love hiking");
  const auto s = svc.create_session("u");
  svc.post_message(s, "hello");
  const auto bytes = std::filesystem::file_size(journal->path());
  model->fail = true;
  EXPECT_THROW(svc.post_message(s, "will this fail"), Error);
  EXPECT_EQ(std::filesystem::file_size(journal->path()), bytes);
  auto v = svc.session(s);
  EXPECT_EQ(v.context.size(), 2u);
  EXPECT_EQ(v.log.size(), 1u);
  model->fail = false;
  auto t = svc.post_message(s, "again");
  EXPECT_EQ(t.turn_index, 1u);
  EXPECT_EQ(svc.session(s).context[2].text, "again");
}

TEST(Service, RestartRestoresState) {
  wwh::testing::TempDir dir;
  auto model = std::make_shared<FakeModel>();
  std::string s1, s2;
  {
    ChatService svc(model, std::make_shared<Journal>(dir / "store.jsonl"));
    svc.add_persona("u", "i love hiking");
    svc.add_persona("u", "my dog is a beagle");
    svc.delete_persona("u", "p1");
    s1 = svc.create_session("u", Demographics{"male", "40s"});
    svc.post_message(s1, "tell me about your dog");
    s2 = svc.create_session("w");
  }
  ChatService svc(model, std::make_shared<Journal>(dir / "store.jsonl"));
  EXPECT_EQ(svc.session_count(), 2u);
  EXPECT_EQ(svc.user_count(), 2u);
  auto list = svc.list_personas("u");
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].id, "p2");
  EXPECT_EQ(svc.add_persona("u", "i swim").id, "p3");
  auto v = svc.session(s1);
  EXPECT_EQ(v.demographics.age_band, "40s");
  ASSERT_EQ(v.log.size(), 1u);
  EXPECT_EQ(v.log[0].response, "my dog is a beagle");
  EXPECT_EQ(svc.create_session("u"), "s3");
}

TEST(Service, ReplayIsBitExactWithACheckpoint) {
  wwh::testing::TempDir dir;
  DecodeConfig dc;
  dc.max_new_tokens = 12;
  auto model = std::make_shared<CheckpointModel>(tiny_language_model(), dc);
  std::string s;
  std::vector<TurnResult> logged;
  {
    ChatService svc(model, std::make_shared<Journal>(dir / "store.jsonl"));
    svc.add_persona("u", "i love hiking in the mountains");
    svc.add_persona("u", "i have a beagle dog");
    s = svc.create_session("u");
    svc.post_message(s, "do you like hiking");
    svc.post_message(s, "what about dogs", Rtl::CRTL);
    svc.post_message(s, "tell me more", Rtl::PRTL);
    auto r = svc.replay(s);
    EXPECT_EQ(r, std::vector<bool>(3, true));
    logged = svc.session(s).log;
  }
  ChatService again(model, std::make_shared<Journal>(dir / "store.jsonl"));
  EXPECT_EQ(again.replay(s), std::vector<bool>(3, true));
  const auto v = again.session(s);
  for (std::size_t i = 0; i < logged.size(); ++i) {
    EXPECT_EQ(v.log[i].response, logged[i].response);
    EXPECT_EQ(v.log[i].rtl, logged[i].rtl);
  }
}

TEST(Service, ConcurrentSessions) {
  wwh::testing::TempDir dir;
  auto model = std::make_shared<FakeModel>();
  auto journal = std::make_shared<Journal>(dir / "store.jsonl");
  ChatService svc(model, journal);
  constexpr int kThreads = 8, kTurns = 20;
  std::vector<std::string> sessions;
  for (int i = 0; i < kThreads; ++i) {
    svc.add_persona("u" + std::to_string(i % 3), "i like topic " + std::to_string(i));
    sessions.push_back(svc.create_session("u" + std::to_string(i % 3)));
  }
  std::vector<std::thread> pool;
  for (int i = 0; i < kThreads; ++i) {
    pool.emplace_back([&, i] {
      for (int k = 0; k < kTurns; ++k) {
        svc.post_message(sessions[static_cast<std::size_t>(i)], "message " + std::to_string(k));
        if (k % 5 == 0) svc.add_persona("u" + std::to_string(i % 3), "extra " + std::to_string(i * 100 + k));
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& s : sessions) {
    auto v = svc.session(s);
    ASSERT_EQ(v.log.size(), static_cast<std::size_t>(kTurns));
    for (int k = 0; k < kTurns; ++k) EXPECT_EQ(v.log[static_cast<std::size_t>(k)].user_text, "message " + std::to_string(k));
  }
  ChatService reloaded(model, std::make_shared<Journal>(dir / "store.jsonl"));
  for (const auto& s : sessions) EXPECT_EQ(reloaded.session(s).log.size(), static_cast<std::size_t>(kTurns));
  std::size_t total = 0;
  for (int u = 0; u < 3; ++u) total += reloaded.list_personas("u" + std::to_string(u)).size();
  EXPECT_EQ(total, static_cast<std::size_t>(kThreads + kThreads * 4));
}
