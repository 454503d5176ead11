#include "wwh/http.hpp"

#include <httplib.h>

namespace wwh {

using nlohmann::json;

struct HttpServer::Impl {
  ChatService& service;
  httplib::Server server;
  explicit Impl(ChatService& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  return j;
}

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw std::invalid_argument(std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

json persona_json(const PersonaAttribute& a) { return {{"id", a.id}, {"text", a.text}}; }

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const IoError& e) {
      reply(res, 500, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", std::string("generation failed: ") + e.what()}});
    }
  };
}

std::optional<Rtl> force_from(const json& body) {
  if (!body.contains("force_rtl") || body["force_rtl"].is_null()) return std::nullopt;
  const auto s = body["force_rtl"].get<std::string>();
  if (s == "PRTL" || s == "prtl") return Rtl::PRTL;
  if (s == "CRTL" || s == "crtl") return Rtl::CRTL;
  throw std::invalid_argument("force_rtl must be PRTL, CRTL or null");
}

}  // namespace

HttpServer::HttpServer(ChatService& service, std::optional<std::filesystem::path> ui_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  ChatService& svc = service;

  srv.Post("/v1/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const std::string user = required_string(body, "user_id");
             std::optional<Demographics> d;
             if (body.contains("demographics") && !body["demographics"].is_null()) {
               const auto& dj = body["demographics"];
               d = Demographics{required_string(dj, "gender"), required_string(dj, "age_band")};
             }
             std::string id;
             try {
               id = svc.create_session(user, d);
             } catch (const IoError&) {
               throw;
             } catch (const Error& e) {
               throw std::invalid_argument(e.what());
             }
             const SessionView v = svc.session(id);
             reply(res, 201,
                   {{"session_id", id},
                    {"user_id", v.user_id},
                    {"demographics", {{"gender", v.demographics.gender}, {"age_band", v.demographics.age_band}}}});
           }));

  srv.Post(R"(/v1/sessions/([^/]+)/messages)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const std::string text = required_string(body, "text");
             const auto force = force_from(body);
             const TurnResult t = svc.post_message(req.matches[1].str(), text, force);
             json out = to_json(t);
             out["session_id"] = req.matches[1].str();
             reply(res, 200, out);
           }));

  srv.Get(R"(/v1/sessions/([^/]+)/log)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            reply(res, 200, to_json(svc.session(req.matches[1].str())));
          }));

  srv.Get(R"(/v1/users/([^/]+)/personas)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            json list = json::array();
            for (const auto& a : svc.list_personas(req.matches[1].str())) list.push_back(persona_json(a));
            reply(res, 200, {{"user_id", req.matches[1].str()}, {"personas", list}});
          }));

  srv.Post(R"(/v1/users/([^/]+)/personas)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const std::string text = required_string(body, "text");
             PersonaAttribute a;
             try {
               a = svc.add_persona(req.matches[1].str(), text);
             } catch (const IoError&) {
               throw;
             } catch (const Error& e) {
               throw std::invalid_argument(e.what());
             }
             reply(res, 201, persona_json(a));
           }));

  auto del = [&svc](const std::string& user, const std::string& pid, httplib::Response& res) {
    svc.delete_persona(user, pid);
    reply(res, 200, {{"deleted", pid}});
  };
  srv.Delete(R"(/v1/users/([^/]+)/personas/([^/]+))",
             guarded([del](const httplib::Request& req, httplib::Response& res) {
               del(req.matches[1].str(), req.matches[2].str(), res);
             }));
  srv.Delete(R"(/v1/users/([^/]+)/personas)", guarded([del](const httplib::Request& req, httplib::Response& res) {
               del(req.matches[1].str(), required_string(parse_body(req), "id"), res);
             }));

  srv.Get("/v1/healthz", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            reply(res, 200,
                  {{"status", "ok"},
                   {"model", svc.model().describe()},
                   {"sessions", svc.session_count()},
                   {"users", svc.user_count()}});
          }));

  if (ui_dir) {
    if (!srv.set_mount_point("/ui", ui_dir->string())) {
      throw IoError("cannot serve UI from " + ui_dir->string());
    }
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace wwh
