#pragma once

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "advdist/service/session_manager.hpp"

namespace advdist {

inline int http_status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::lookup: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::io:
    case ErrorKind::adapter:
    case ErrorKind::degenerate_data:
    case ErrorKind::init_failure: return 500;
    default: return 400;
  }
}

inline std::string error_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::lookup: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::exhaustion: return "exhausted";
    case ErrorKind::io: return "io";
    case ErrorKind::adapter: return "adapter";
    default: return "validation";
  }
}

/// JSON API over a SessionManager. Every error body is {code, message}.
class SessionServer {
public:
  explicit SessionServer(SessionManager& manager) : manager_(manager) { routes(); }
  ~SessionServer() { stop(); }

  /// Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

private:
  using Handler = std::function<nlohmann::json(const httplib::Request&)>;

  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  }

  template <typename T>
  static T field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    try {
      return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(std::string("field '") + key + "' has the wrong type");
    }
  }

  static httplib::Server::Handler wrap(Handler h, int ok = 200) {
    return [h = std::move(h), ok](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, ok, h(req));
      } catch (const Error& e) {
        send(res, http_status_for(e.kind()), {{"code", error_code_for(e.kind())}, {"message", e.what()}});
      } catch (const std::exception& e) {
        send(res, 500, {{"code", "internal"}, {"message", e.what()}});
      }
    };
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get("/api/capabilities", wrap([this](const httplib::Request&) { return manager_.capabilities(); }));
    server_.Post("/api/sessions", wrap(
                                      [this](const httplib::Request& req) {
                                        const auto b = body_of(req);
                                        const auto id = manager_.create(field<std::string>(b, "strategy"),
                                                                        field<long long>(b, "budget"),
                                                                        b.contains("seed") ? field<std::uint64_t>(b, "seed") : 0);
                                        return nlohmann::json{{"session_id", id}};
                                      },
                                      201));
    server_.Get(R"(/api/sessions/([^/]+)/next)",
                wrap([this](const httplib::Request& req) { return manager_.next(req.matches[1]); }));
    server_.Post(R"(/api/sessions/([^/]+)/labels)", wrap([this](const httplib::Request& req) {
                   const auto b = body_of(req);
                   return manager_.submit(req.matches[1], field<InstanceId>(b, "instance_id"),
                                          field<long long>(b, "label"));
                 }));
    server_.Get(R"(/api/sessions/([^/]+)/summary)",
                wrap([this](const httplib::Request& req) { return manager_.summary(req.matches[1]); }));
    server_.Get(R"(/api/sessions/([^/]+)/errors)",
                wrap([this](const httplib::Request& req) { return manager_.errors(req.matches[1]); }));
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send(res, res.status, {{"code", "not_found"}, {"message", "no such endpoint"}});
    });
  }

  SessionManager& manager_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace advdist
