#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "casegpt/corpus.hpp"
#include "casegpt/encoder.hpp"
#include "casegpt/error.hpp"
#include "casegpt/hnsw.hpp"
#include "casegpt/insight.hpp"
#include "casegpt/ranker.hpp"

namespace casegpt {

inline constexpr const char* kVersion = "0.3.0";

/// Every tunable of the service. Loaded from an INI-style key-value file,
/// then CASEGPT_* environment variables (section.key -> SECTION_KEY), then
/// command-line flags.
struct ServiceConfig {
  std::filesystem::path store_path = "casegpt-data/store.jsonl";
  std::filesystem::path index_path = "casegpt-data/index.hnsw";

  std::string encoder_backend = "reference";  // reference | remote
  std::size_t encoder_dim = kDefaultEmbeddingDim;
  std::uint64_t encoder_seed = 0;
  RemoteEncoderConfig remote_encoder;

  std::string generator_backend = "none";  // none | scripted | remote
  std::filesystem::path generator_script;
  RemoteGeneratorConfig remote_generator;

  HnswParams hnsw;
  RetrievalOptions retrieval;
  InsightOptions insight;

  std::string host = "127.0.0.1";
  int port = 8080;
  double request_timeout_seconds = 30.0;
  std::size_t max_concurrent_insights = 4;
  std::string auth_token;

  /// Applies one `section.key` setting. Throws ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Throws ConfigError for out-of-range values.
  void validate() const;

  static ServiceConfig load(
      const std::optional<std::filesystem::path>& file,
      const std::function<std::optional<std::string>(const std::string&)>& getenv =
          nullptr);

  static std::vector<std::string> keys();
  static std::string env_name(const std::string& key);
};

// Wire format helpers shared by the CLI and the HTTP API.
nlohmann::json to_json(const RankedResult& r);
nlohmann::json to_json(const StageTimings& t);
nlohmann::json to_json(const InsightReport& r);
nlohmann::json to_json(const CorpusStats& s);
nlohmann::json to_json(const HnswParams& p);
nlohmann::json error_body(const Error& e);

/// Applies request fields over defaults. Ill-typed fields throw
/// MalformedRecord; out-of-range values throw InvalidParams. Keys it does
/// not know are left to the caller.
RetrievalOptions retrieval_options_from_json(const nlohmann::json& body,
                                             const RetrievalOptions& defaults);
InsightOptions insight_options_from_json(const nlohmann::json& body,
                                         const InsightOptions& defaults);

int http_status_for(ErrorCode code);
int exit_code_for(ErrorCode code);

struct IngestSummary {
  std::size_t read = 0;
  std::size_t inserted = 0;
  std::size_t replaced = 0;
};

struct BuildSummary {
  std::size_t inserted = 0;
  std::size_t reindexed = 0;
  std::size_t live = 0;
};

/// Shared application core behind the CLI and the HTTP gateway. Reads run
/// in parallel; writes go through one writer lock.
class CaseService {
 public:
  explicit CaseService(ServiceConfig config);
  CaseService(ServiceConfig config, std::unique_ptr<EncoderBackend> encoder);

  const ServiceConfig& config() const { return config_; }
  const CorpusStore& store() const { return store_; }
  const EncoderBackend& encoder() const { return *encoder_; }

  /// Current index, or null before build-index / load.
  std::shared_ptr<const HnswIndex> index() const;
  bool index_ready() const;

  IngestSummary ingest_file(const std::filesystem::path& corpus, PutMode mode);
  /// Stores the case and indexes it immediately.
  void add_case(CaseDocument doc, PutMode mode);
  /// Embeds every stored case that is missing from the index or stale.
  BuildSummary build_index(bool save = true);
  /// Rebuilds the graph without tombstoned nodes.
  BuildSummary compact(bool save = true);
  void save_index() const;

  RetrievalResult search(const std::string& query, const RetrievalOptions& opts) const;
  nlohmann::json search_json(const std::string& query, const RetrievalOptions& opts,
                             bool include_timings = true) const;
  InsightReport insight(const std::string& query, const InsightOptions& opts) const;

  nlohmann::json health() const;
  nlohmann::json stats() const;

  std::unique_ptr<GenerationBackend> make_generator() const;
  /// Cached; rebuilt lazily after writes.
  std::shared_ptr<const TermVocabulary> vocabulary() const;

 private:
  std::string embedding_text(const CaseDocument& doc) const;
  void set_index(std::shared_ptr<HnswIndex> index);
  std::shared_ptr<HnswIndex> writable_index();
  void invalidate_vocabulary();

  ServiceConfig config_;
  CorpusStore store_;
  std::unique_ptr<EncoderBackend> encoder_;

  mutable std::mutex index_mutex_;  // guards the pointer only
  std::shared_ptr<HnswIndex> index_;

  std::mutex writer_;

  mutable std::mutex vocab_mutex_;
  mutable std::shared_ptr<const TermVocabulary> vocabulary_;
};

std::unique_ptr<EncoderBackend> make_encoder(const ServiceConfig& config);

/// HTTP/1.1 JSON API under /v1. Runs on its own thread pool.
class HttpGateway {
 public:
  explicit HttpGateway(CaseService& service);
  ~HttpGateway();

  /// Binds and serves on a background thread; returns the bound port
  /// (pass 0 for an ephemeral port).
  int start(const std::string& host, int port);
  /// Blocks serving on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace casegpt
