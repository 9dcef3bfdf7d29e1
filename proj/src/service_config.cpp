#include <CLI11.hpp>

#include <cctype>
#include <cstdlib>
#include <map>

#include "casegpt/service.hpp"

namespace casegpt {

namespace {

using Setter = std::function<void(ServiceConfig&, const std::string&)>;

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
  throw Error(ErrorCode::kConfigError,
              "config '" + key + "' = '" + value + "': " + why);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(value, &used));
    } else if constexpr (std::is_signed_v<T>) {
      out = static_cast<T>(std::stoll(value, &used));
    } else {
      if (!value.empty() && value.front() == '-') bad_value(key, value, "must be non-negative");
      out = static_cast<T>(std::stoull(value, &used));
    }
    if (used != value.size()) bad_value(key, value, "trailing characters");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, value, "not a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  std::string v;
  for (char c : value) v += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "expected a boolean");
}

const std::vector<std::pair<std::string, Setter>>& setters() {
  using C = ServiceConfig;
  auto str = [](auto get) {
    return Setter([get](C& c, const std::string& v) { get(c) = v; });
  };
  auto num = [](auto get) {
    return Setter([get](C& c, const std::string& v) {
      auto& field = get(c);
      using T = std::remove_reference_t<decltype(field)>;
      field = parse_number<T>("", v);
    });
  };
  auto boolean = [](auto get) {
    return Setter([get](C& c, const std::string& v) { get(c) = parse_bool("", v); });
  };
  static const std::vector<std::pair<std::string, Setter>> table{
      {"store.path", str([](C& c) -> std::filesystem::path& { return c.store_path; })},
      {"index.path", str([](C& c) -> std::filesystem::path& { return c.index_path; })},
      {"encoder.backend", str([](C& c) -> std::string& { return c.encoder_backend; })},
      {"encoder.dim", num([](C& c) -> std::size_t& { return c.encoder_dim; })},
      {"encoder.seed", num([](C& c) -> std::uint64_t& { return c.encoder_seed; })},
      {"encoder.url", str([](C& c) -> std::string& { return c.remote_encoder.url; })},
      {"encoder.model", str([](C& c) -> std::string& { return c.remote_encoder.model; })},
      {"encoder.auth_token", str([](C& c) -> std::string& { return c.remote_encoder.auth_token; })},
      {"encoder.timeout", num([](C& c) -> double& { return c.remote_encoder.timeout_seconds; })},
      {"encoder.retries", num([](C& c) -> int& { return c.remote_encoder.max_retries; })},
      {"encoder.batch_size", num([](C& c) -> std::size_t& { return c.remote_encoder.batch_size; })},
      {"encoder.max_in_flight", num([](C& c) -> std::size_t& { return c.remote_encoder.max_in_flight; })},
      {"generator.backend", str([](C& c) -> std::string& { return c.generator_backend; })},
      {"generator.script", str([](C& c) -> std::filesystem::path& { return c.generator_script; })},
      {"generator.url", str([](C& c) -> std::string& { return c.remote_generator.url; })},
      {"generator.model", str([](C& c) -> std::string& { return c.remote_generator.model; })},
      {"generator.auth_token", str([](C& c) -> std::string& { return c.remote_generator.auth_token; })},
      {"generator.timeout", num([](C& c) -> double& { return c.remote_generator.timeout_seconds; })},
      {"generator.retries", num([](C& c) -> int& { return c.remote_generator.max_retries; })},
      {"hnsw.m", num([](C& c) -> std::size_t& { return c.hnsw.m; })},
      {"hnsw.m0", num([](C& c) -> std::size_t& { return c.hnsw.m0; })},
      {"hnsw.ef_construction", num([](C& c) -> std::size_t& { return c.hnsw.ef_construction; })},
      {"hnsw.ef_search", num([](C& c) -> std::size_t& { return c.hnsw.ef_search; })},
      {"hnsw.ml", num([](C& c) -> double& { return c.hnsw.ml; })},
      {"hnsw.seed", num([](C& c) -> std::uint64_t& { return c.hnsw.rng_seed; })},
      {"hnsw.heuristic", boolean([](C& c) -> bool& { return c.hnsw.heuristic_pruning; })},
      {"retrieval.k", num([](C& c) -> std::size_t& { return c.retrieval.k; })},
      {"retrieval.n", num([](C& c) -> std::size_t& { return c.retrieval.n; })},
      {"retrieval.lambda", num([](C& c) -> double& { return c.retrieval.lambda; })},
      {"retrieval.w_similarity", num([](C& c) -> double& { return c.retrieval.weights.similarity; })},
      {"retrieval.w_recency", num([](C& c) -> double& { return c.retrieval.weights.recency; })},
      {"retrieval.w_citation", num([](C& c) -> double& { return c.retrieval.weights.citation; })},
      {"retrieval.w_jurisdiction", num([](C& c) -> double& { return c.retrieval.weights.jurisdiction; })},
      {"retrieval.half_life_days", num([](C& c) -> double& { return c.retrieval.weights.half_life_days; })},
      {"retrieval.now", Setter([](C& c, const std::string& v) {
         c.retrieval.now = v.empty() ? Date{} : parse_iso_date(v);
       })},
      {"insight.threshold", num([](C& c) -> double& { return c.insight.refine.threshold; })},
      {"insight.max_rounds", num([](C& c) -> int& { return c.insight.refine.max_rounds; })},
      {"insight.context_limit", num([](C& c) -> std::size_t& { return c.insight.context_limit; })},
      {"insight.temperature", num([](C& c) -> double& { return c.insight.temperature; })},
      {"insight.expansion_terms", num([](C& c) -> std::size_t& { return c.insight.expansion_terms; })},
      {"insight.template", str([](C& c) -> std::string& { return c.insight.refine.template_id; })},
      {"insight.max_tokens", num([](C& c) -> std::size_t& { return c.insight.refine.max_tokens; })},
      {"server.host", str([](C& c) -> std::string& { return c.host; })},
      {"server.port", num([](C& c) -> int& { return c.port; })},
      {"server.request_timeout", num([](C& c) -> double& { return c.request_timeout_seconds; })},
      {"server.max_concurrent_insights", num([](C& c) -> std::size_t& { return c.max_concurrent_insights; })},
      {"server.auth_token", str([](C& c) -> std::string& { return c.auth_token; })},
  };
  return table;
}

}  // namespace

std::vector<std::string> ServiceConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : setters()) out.push_back(k);
  return out;
}

std::string ServiceConfig::env_name(const std::string& key) {
  std::string out = "CASEGPT_";
  for (char c : key) {
    out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

void ServiceConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [k, setter] : setters()) {
    if (k != key) continue;
    try {
      setter(*this, value);
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfigError, "config '" + key + "' = '" + value + "': " + e.what());
    }
    return;
  }
  throw Error(ErrorCode::kConfigError, "unknown config key '" + key + "'");
}

void ServiceConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfigError, msg); };
  if (encoder_backend != "reference" && encoder_backend != "remote") {
    fail("encoder.backend must be 'reference' or 'remote'");
  }
  if (encoder_dim < kMinEmbeddingDim || encoder_dim > kMaxEmbeddingDim) {
    fail("encoder.dim must lie in [8, 4096]");
  }
  if (encoder_backend == "remote" && remote_encoder.url.empty()) fail("encoder.url is required");
  if (generator_backend != "none" && generator_backend != "scripted" &&
      generator_backend != "remote") {
    fail("generator.backend must be 'none', 'scripted' or 'remote'");
  }
  if (generator_backend == "scripted" && generator_script.empty()) {
    fail("generator.script is required for the scripted backend");
  }
  if (generator_backend == "remote" && remote_generator.url.empty()) {
    fail("generator.url is required");
  }
  if (port < 0 || port > 65535) fail("server.port out of range");
  if (!(request_timeout_seconds > 0.0)) fail("server.request_timeout must be positive");
  if (max_concurrent_insights == 0) fail("server.max_concurrent_insights must be >= 1");
  try {
    hnsw.validate();
    retrieval.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  const auto& r = insight.refine;
  if (!(r.threshold > 0.0 && r.threshold <= 1.0)) fail("insight.threshold must lie in (0, 1]");
  if (r.max_rounds < 0) fail("insight.max_rounds must be >= 0");
  if (!(insight.temperature > 0.0)) fail("insight.temperature must be positive");
  const auto templates = registered_templates();
  if (std::find(templates.begin(), templates.end(), r.template_id) == templates.end()) {
    fail("insight.template '" + r.template_id + "' is not registered");
  }
}

ServiceConfig ServiceConfig::load(
    const std::optional<std::filesystem::path>& file,
    const std::function<std::optional<std::string>(const std::string&)>& getenv) {
  ServiceConfig config;
  config.remote_encoder.dim = config.encoder_dim;
  if (file) {
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigINI().from_file(file->string());
    } catch (const CLI::Error& e) {
      throw Error(ErrorCode::kConfigError,
                  "cannot read config " + file->string() + ": " + e.what());
    }
    for (const auto& item : items) {
      // CLI11 emits section markers as items named "++" / "--".
      if (item.name == "++" || item.name == "--") continue;
      std::string value;
      for (std::size_t i = 0; i < item.inputs.size(); ++i) {
        value += (i ? "," : "") + item.inputs[i];
      }
      config.set(item.fullname(), value);
    }
  }
  auto env = getenv ? getenv : [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
  for (const auto& key : keys()) {
    if (auto v = env(env_name(key))) config.set(key, *v);
  }
  config.remote_encoder.dim = config.encoder_dim;
  return config;
}

}  // namespace casegpt
