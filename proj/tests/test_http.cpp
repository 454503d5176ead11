#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "support.hpp"
#include "wwh/http.hpp"

// After the library headers: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>
#include <json.hpp>

using namespace wwh;
using nlohmann::json;

namespace {

class ParrotModel : public ResponseModel {
 public:
  IdfTable table = IdfTable::build({"hello"});
  Generation respond(const Demographics&, const std::vector<std::string>& persona, const DialogueContext& context,
                     std::optional<Rtl> force) const override {
    if (context.back().text == "explode") throw Error("boom");
    Generation g;
    g.rtl = force.value_or(persona.empty() ? Rtl::CRTL : Rtl::PRTL);
    g.text = g.rtl == Rtl::PRTL && !persona.empty() ? persona.front() : "sure";
    return g;
  }
  const IdfTable& idf() const override { return table; }
  json describe() const override { return {{"name", "parrot"}}; }
};

/// A live server on an ephemeral port.
struct Live {
  wwh::testing::TempDir dir;
  ChatService svc{std::make_shared<ParrotModel>(), std::make_shared<Journal>(dir / "store.jsonl")};
  std::unique_ptr<HttpServer> server;
  std::thread thread;
  int port = 0;

  Live() {
    std::filesystem::create_directories(dir / "ui");
    std::ofstream(dir / "ui" / "index.html") << "<html>chat</html>";
    server = std::make_unique<HttpServer>(svc, dir / "ui");
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->listen(); });
    while (!server->running()) std::this_thread::yield();
  }
  ~Live() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json body(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST(Http, FullConversation) {
  Live live;
  auto cli = live.client();

  auto h = cli.Get("/v1/healthz");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(body(h)["model"]["name"], "parrot");

  auto p = cli.Post("/v1/users/alice/personas", R"({"text": "i love hiking"})", "application/json");
  ASSERT_TRUE(p);
  EXPECT_EQ(p->status, 201);
  EXPECT_EQ(body(p)["id"], "p1");
  cli.Post("/v1/users/alice/personas", R"({"text": "my cat is grey"})", "application/json");

  auto s = cli.Post("/v1/sessions", R"({"user_id": "alice", "demographics": {"gender": "female", "age_band": "30s"}})",
                    "application/json");
  ASSERT_TRUE(s);
  EXPECT_EQ(s->status, 201);
  const std::string sid = body(s)["session_id"];

  auto m = cli.Post("/v1/sessions/" + sid + "/messages", R"({"text": "any hiking plans"})", "application/json");
  ASSERT_TRUE(m);
  ASSERT_EQ(m->status, 200);
  auto mj = body(m);
  EXPECT_EQ(mj["response"], "i love hiking");
  EXPECT_EQ(mj["rtl"], "PRTL");
  EXPECT_EQ(mj["retrieved"][0]["id"], "p1");
  EXPECT_EQ(mj["diagnostics"]["grounding"]["level"], "HARD");

  auto forced = cli.Post("/v1/sessions/" + sid + "/messages", R"({"text": "ok", "force_rtl": "CRTL"})",
                         "application/json");
  ASSERT_TRUE(forced);
  EXPECT_EQ(body(forced)["rtl"], "CRTL");

  auto log = cli.Get("/v1/sessions/" + sid + "/log");
  ASSERT_TRUE(log);
  auto lj = body(log);
  EXPECT_EQ(lj["turns"].size(), 2u);
  EXPECT_EQ(lj["demographics"]["age_band"], "30s");

  auto list = cli.Get("/v1/users/alice/personas");
  EXPECT_EQ(body(list)["personas"].size(), 2u);
  auto d = cli.Delete("/v1/users/alice/personas/p1");
  ASSERT_TRUE(d);
  EXPECT_EQ(d->status, 200);
  EXPECT_EQ(body(cli.Get("/v1/users/alice/personas"))["personas"].size(), 1u);
  auto d2 = cli.Delete("/v1/users/alice/personas", R"({"id": "p2"})", "application/json");
  EXPECT_EQ(d2->status, 200);
  EXPECT_TRUE(body(cli.Get("/v1/users/alice/personas"))["personas"].empty());
}

TEST(Http, ErrorStatuses) {
  Live live;
  auto cli = live.client();
  EXPECT_EQ(cli.Post("/v1/sessions", "not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/v1/sessions", R"({"user": "x"})", "application/json")->status, 400);
  EXPECT_EQ(cli.Get("/v1/sessions/s42/log")->status, 404);
  EXPECT_EQ(cli.Post("/v1/sessions/s42/messages", R"({"text": "hi"})", "application/json")->status, 404);
  EXPECT_EQ(cli.Get("/v1/users/ghost/personas")->status, 404);
  EXPECT_EQ(cli.Delete("/v1/users/ghost/personas/p1")->status, 404);
  EXPECT_EQ(cli.Post("/v1/users/bob/personas", R"({"text": "!!!"})", "application/json")->status, 400);

  const std::string sid = body(cli.Post("/v1/sessions", R"({"user_id": "bob"})", "application/json"))["session_id"];
  EXPECT_EQ(cli.Post("/v1/sessions/" + sid + "/messages", R"({"text": "hi", "force_rtl": "MAYBE"})",
                     "application/json")->status, 400);
  auto boom = cli.Post("/v1/sessions/" + sid + "/messages", R"({"text": "explode"})", "application/json");
  EXPECT_EQ(boom->status, 500);
  EXPECT_TRUE(body(boom).contains("error"));
  EXPECT_TRUE(body(cli.Get("/v1/sessions/" + sid + "/log"))["turns"].empty());
}

TEST(Http, ServesStaticUi) {
  Live live;
  auto cli = live.client();
  auto r = cli.Get("/ui/index.html");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "<html>chat</html>");
  EXPECT_EQ(cli.Get("/ui/missing.html")->status, 404);
}
