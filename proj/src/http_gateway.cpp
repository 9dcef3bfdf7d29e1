#include <httplib.h>

#include <semaphore>

#include "casegpt/service.hpp"

namespace casegpt {

using nlohmann::json;

struct HttpGateway::Impl {
  CaseService& service;
  httplib::Server server;
  std::thread thread;
  std::counting_semaphore<> insight_slots;

  explicit Impl(CaseService& s)
      : service(s),
        insight_slots(static_cast<std::ptrdiff_t>(s.config().max_concurrent_insights)) {
    routes();
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void reply_error(httplib::Response& res, const Error& e) {
    reply(res, http_status_for(e.code()), error_body(e));
  }

  static json parse_body(const httplib::Request& req) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kMalformedRecord, std::string("invalid JSON: ") + e.what());
    }
    if (!body.is_object()) {
      throw Error(ErrorCode::kMalformedRecord, "request body must be an object");
    }
    return body;
  }

  static void reject_unknown(const json& body, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : body.items()) {
      if (!allowed.count(key)) {
        throw Error(ErrorCode::kMalformedRecord, "unknown field '" + key + "'");
      }
    }
  }

  static std::string query_of(const json& body) {
    auto it = body.find("query");
    if (it == body.end()) throw Error(ErrorCode::kMissingField, "missing field 'query'");
    if (!it->is_string()) throw Error(ErrorCode::kMalformedRecord, "'query' must be a string");
    return it->get<std::string>();
  }

  template <typename F>
  static httplib::Server::Handler guarded(F&& fn) {
    return [fn = std::forward<F>(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        reply_error(res, e);
      } catch (const std::exception& e) {
        reply(res, 500, json{{"error", {{"code", "internal"}, {"message", e.what()}}}});
      }
    };
  }

  void routes() {
    const auto& cfg = service.config();
    const auto timeout = std::chrono::duration<double>(cfg.request_timeout_seconds);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
    server.set_read_timeout(usec.count() / 1000000, usec.count() % 1000000);
    server.set_write_timeout(usec.count() / 1000000, usec.count() % 1000000);

    if (!cfg.auth_token.empty()) {
      const std::string expected = "Bearer " + cfg.auth_token;
      server.set_pre_routing_handler(
          [expected](const httplib::Request& req, httplib::Response& res) {
            if (req.get_header_value("Authorization") == expected) {
              return httplib::Server::HandlerResponse::Unhandled;
            }
            reply(res, 401,
                  json{{"error", {{"code", "unauthorized"},
                                  {"message", "missing or invalid bearer token"}}}});
            return httplib::Server::HandlerResponse::Handled;
          });
    }

    static const std::set<std::string> retrieval_keys{
        "query", "k", "n", "lambda", "weights", "jurisdiction", "now", "ef_search",
        "exclude_ids"};

    server.Post("/v1/cases", guarded([this](const httplib::Request& req, httplib::Response& res) {
      parse_body(req);
      const bool upsert = req.has_param("upsert") && req.get_param_value("upsert") == "true";
      auto doc = parse_case_record(req.body);
      const std::string id = doc.id;
      service.add_case(std::move(doc), upsert ? PutMode::kUpsert : PutMode::kInsert);
      reply(res, 201, json{{"id", id}, {"indexed", true}});
    }));

    server.Get(R"(/v1/cases/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, case_to_json(service.store().get_case(req.matches[1])));
               }));

    server.Post("/v1/search", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      reject_unknown(body, retrieval_keys);
      const auto query = query_of(body);
      const auto opts = retrieval_options_from_json(body, service.config().retrieval);
      reply(res, 200, service.search_json(query, opts));
    }));

    server.Post("/v1/insights",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  auto allowed = retrieval_keys;
                  allowed.insert({"context_limit", "temperature", "expansion_terms",
                                  "sentence_budget", "threshold", "max_rounds", "template",
                                  "max_tokens"});
                  reject_unknown(body, allowed);
                  const auto query = query_of(body);
                  InsightOptions defaults = service.config().insight;
                  defaults.retrieval = service.config().retrieval;
                  const auto opts = insight_options_from_json(body, defaults);
                  if (!insight_slots.try_acquire()) {
                    throw Error(ErrorCode::kBackendUnavailable,
                                "too many concurrent insight requests");
                  }
                  struct Release {
                    std::counting_semaphore<>& s;
                    ~Release() { s.release(); }
                  } release{insight_slots};
                  const auto report = service.insight(query, opts);
                  reply(res, report.error ? 503 : 200, to_json(report));
                }));

    server.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, service.health());
    }));

    server.Get("/v1/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, service.stats());
    }));
  }
};

HttpGateway::HttpGateway(CaseService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpGateway::~HttpGateway() { stop(); }

int HttpGateway::start(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                        : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error(ErrorCode::kConfigError,
                "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpGateway::listen(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorCode::kConfigError, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->server.listen_after_bind();
}

void HttpGateway::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace casegpt
