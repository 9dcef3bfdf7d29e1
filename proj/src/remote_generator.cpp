#include <httplib.h>

#include <nlohmann/json.hpp>

#include "casegpt/error.hpp"
#include "casegpt/http_util.hpp"
#include "casegpt/insight.hpp"

namespace casegpt {

RemoteGenerator::RemoteGenerator(RemoteGeneratorConfig config) : config_(std::move(config)) {
  detail::parse_url(config_.url);
}

std::string RemoteGenerator::generate(const std::string& prompt, std::size_t max_tokens,
                                      double temperature) {
  const auto url = detail::parse_url(config_.url);
  const nlohmann::json request{{"model", config_.model},
                               {"prompt", prompt},
                               {"max_tokens", max_tokens},
                               {"temperature", temperature}};
  const std::string body = request.dump();

  httplib::Client client(url.origin);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - double(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + config_.auth_token);

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (res->status != 200 || j.is_discarded() || !j.contains("text") || !j["text"].is_string()) {
      throw Error(ErrorCode::kBackendUnavailable,
                  "generation service returned an unusable response (HTTP " +
                      std::to_string(res->status) + ")");
    }
    return j["text"].get<std::string>();
  }
  throw Error(ErrorCode::kBackendUnavailable,
              "generation service unavailable after " + std::to_string(config_.max_retries + 1) +
                  " attempts: " + last_error);
}

}  // namespace casegpt
