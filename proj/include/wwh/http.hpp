#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "wwh/service.hpp"

namespace wwh {

/// JSON API under /v1 plus optional static files under /ui.
///
///   POST   /v1/sessions                       {user_id, demographics?}
///   POST   /v1/sessions/{id}/messages         {text, force_rtl?}
///   GET    /v1/sessions/{id}/log
///   GET    /v1/users/{id}/personas
///   POST   /v1/users/{id}/personas            {text}
///   DELETE /v1/users/{id}/personas/{pid}      (or DELETE .../personas {id})
///   GET    /v1/healthz
///
/// Errors are {"error": message} with 400 (bad request), 404 (unknown
/// session, user or persona) or 500 (generation or store failure).
class HttpServer {
 public:
  HttpServer(ChatService& service, std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wwh
