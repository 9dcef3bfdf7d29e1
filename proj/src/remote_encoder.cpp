#include <httplib.h>

#include <algorithm>
#include <semaphore>

#include <nlohmann/json.hpp>

#include "casegpt/encoder.hpp"
#include "casegpt/error.hpp"
#include "casegpt/http_util.hpp"

namespace casegpt {

struct RemoteEncoder::Limiter {
  explicit Limiter(std::ptrdiff_t n) : slots(n) {}
  std::counting_semaphore<1024> slots;
};

RemoteEncoder::RemoteEncoder(RemoteEncoderConfig config)
    : config_(std::move(config)) {
  if (config_.dim == 0 || config_.batch_size == 0 || config_.max_in_flight == 0 ||
      config_.max_in_flight > 1024) {
    throw Error(ErrorCode::kConfigError, "invalid remote encoder configuration");
  }
  detail::parse_url(config_.url);  // validate early
  limiter_ = std::make_unique<Limiter>(
      static_cast<std::ptrdiff_t>(config_.max_in_flight));
}

RemoteEncoder::~RemoteEncoder() = default;

EmbeddingVector RemoteEncoder::encode(std::string_view text) const {
  const std::string t(text);
  return request_chunk(std::span<const std::string>(&t, 1)).front();
}

std::vector<EmbeddingVector> RemoteEncoder::encode_batch(
    std::span<const std::string> texts) const {
  for (const auto& t : texts) {
    if (t.empty()) throw Error(ErrorCode::kEmptyText, "batch contains an empty text");
  }
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += config_.batch_size) {
    const auto n = std::min(config_.batch_size, texts.size() - start);
    auto chunk = request_chunk(texts.subspan(start, n));
    std::move(chunk.begin(), chunk.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<EmbeddingVector> RemoteEncoder::request_chunk(
    std::span<const std::string> texts) const {
  for (const auto& t : texts) {
    if (t.empty()) throw Error(ErrorCode::kEmptyText, "text is empty");
  }
  const auto url = detail::parse_url(config_.url);
  nlohmann::json request{{"model", config_.model}, {"input", texts}};
  const std::string body = request.dump();

  httplib::Client client(url.origin);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs =
      static_cast<time_t>((config_.timeout_seconds - double(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.auth_token.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.auth_token);
  }

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    limiter_->slots.acquire();
    auto res = client.Post(url.path, headers, body, "application/json");
    limiter_->slots.release();
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kBackendUnavailable,
                  "embedding service returned HTTP " + std::to_string(res->status));
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("data") || !j["data"].is_array()) {
      throw Error(ErrorCode::kEncoderFailure, "embedding response is malformed");
    }
    std::vector<std::vector<float>> raw(texts.size());
    std::vector<bool> seen(texts.size(), false);
    std::size_t fallback_index = 0;
    for (const auto& item : j["data"]) {
      const std::size_t idx = item.value("index", fallback_index);
      ++fallback_index;
      if (idx >= texts.size() || seen[idx] || !item.contains("embedding")) {
        throw Error(ErrorCode::kEncoderFailure, "embedding response is malformed");
      }
      seen[idx] = true;
      raw[idx] = item["embedding"].get<std::vector<float>>();
      if (raw[idx].size() != config_.dim) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "embedding service returned dim " +
                        std::to_string(raw[idx].size()) + ", expected " +
                        std::to_string(config_.dim));
      }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw Error(ErrorCode::kEncoderFailure,
                  "embedding response is missing entries");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    for (const auto& v : raw) out.push_back(EmbeddingVector::normalize(std::span<const float>(v)));
    return out;
  }
  throw Error(ErrorCode::kBackendUnavailable,
              "embedding service unavailable after " +
                  std::to_string(config_.max_retries + 1) +
                  " attempts: " + last_error);
}

}  // namespace casegpt
