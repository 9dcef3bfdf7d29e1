#include "casegpt/service.hpp"

#include <algorithm>
#include <cmath>

namespace casegpt {

using nlohmann::json;

json to_json(const RankedResult& r) {
  return json{{"id", r.id},
              {"rank", r.rank},
              {"cosine", r.cosine},
              {"recency", r.factors.recency},
              {"citation", r.factors.citation},
              {"jurisdiction", r.factors.jurisdiction},
              {"final_score", r.final_score}};
}

json to_json(const StageTimings& t) {
  return json{{"encode_ms", t.encode_ms}, {"ann_ms", t.ann_ms},
              {"rescore_ms", t.rescore_ms}, {"rerank_ms", t.rerank_ms},
              {"mmr_ms", t.mmr_ms}, {"total_ms", t.total_ms}};
}

json to_json(const InsightReport& r) {
  json verdicts = json::array();
  for (const auto& v : r.claim_verdicts) {
    verdicts.push_back(json{
        {"sentence", v.sentence},
        {"verified", v.verified},
        {"stripped", v.stripped},
        {"cited_ids", v.cited_ids},
        {"unknown_citations", v.unknown_citations},
        {"best_case_id", v.best_case_id ? json(*v.best_case_id) : json(nullptr)},
        {"overlap", v.overlap}});
  }
  json retrieval = json::array();
  for (const auto& res : r.retrieval) retrieval.push_back(to_json(res));
  return json{{"text", r.text},
              {"citations", r.citations},
              {"claim_verdicts", verdicts},
              {"stripped_sentences", r.stripped_sentences},
              {"refinement_rounds_used", r.refinement_rounds_used},
              {"status", grounding_status_name(r.status)},
              {"retrieval", retrieval},
              {"retrieval_timings", to_json(r.retrieval_timings)},
              {"error", r.error ? json(*r.error) : json(nullptr)}};
}

json to_json(const CorpusStats& s) {
  return json{{"doc_count", s.doc_count},
              {"max_citation_count", s.max_citation_count},
              {"jurisdiction_set", s.jurisdiction_set},
              {"medical_count", s.medical_count},
              {"legal_count", s.legal_count}};
}

json to_json(const HnswParams& p) {
  return json{{"m", p.m},
              {"m0", p.m0},
              {"ef_construction", p.ef_construction},
              {"ef_search", p.ef_search},
              {"ml", p.level_multiplier()},
              {"rng_seed", p.rng_seed},
              {"heuristic_pruning", p.heuristic_pruning}};
}

json error_body(const Error& e) {
  return json{{"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}};
}

namespace {

[[noreturn]] void ill_typed(const std::string& field, const char* want) {
  throw Error(ErrorCode::kMalformedRecord, "field '" + field + "' must be " + want);
}

template <typename T>
void read_field(const json& body, const std::string& key, T& out) {
  auto it = body.find(key);
  if (it == body.end() || it->is_null()) return;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) ill_typed(key, "a boolean");
    out = it->get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) ill_typed(key, "an integer");
    const auto v = it->get<std::int64_t>();
    if (std::is_unsigned_v<T> && v < 0) {
      throw Error(ErrorCode::kInvalidParams, "'" + key + "' must be non-negative");
    }
    out = static_cast<T>(v);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) ill_typed(key, "a number");
    out = it->get<double>();
    if (!std::isfinite(out)) throw Error(ErrorCode::kInvalidParams, "'" + key + "' is not finite");
  } else {
    if (!it->is_string()) ill_typed(key, "a string");
    out = it->get<std::string>();
  }
}

}  // namespace

RetrievalOptions retrieval_options_from_json(const json& body,
                                             const RetrievalOptions& defaults) {
  if (!body.is_object()) throw Error(ErrorCode::kMalformedRecord, "request body must be an object");
  RetrievalOptions o = defaults;
  read_field(body, "k", o.k);
  read_field(body, "n", o.n);
  read_field(body, "lambda", o.lambda);
  if (auto it = body.find("weights"); it != body.end()) {
    if (!it->is_object()) ill_typed("weights", "an object");
    for (const auto& [key, _] : it->items()) {
      static const std::set<std::string> known{"similarity", "recency", "citation",
                                               "jurisdiction", "half_life_days"};
      if (!known.count(key)) {
        throw Error(ErrorCode::kMalformedRecord, "unknown weight '" + key + "'");
      }
    }
    read_field(*it, "similarity", o.weights.similarity);
    read_field(*it, "recency", o.weights.recency);
    read_field(*it, "citation", o.weights.citation);
    read_field(*it, "jurisdiction", o.weights.jurisdiction);
    read_field(*it, "half_life_days", o.weights.half_life_days);
  }
  if (body.contains("jurisdiction")) {
    std::string j;
    read_field(body, "jurisdiction", j);
    o.query_jurisdiction = j.empty() ? std::nullopt : std::optional(j);
  }
  if (body.contains("now")) {
    std::string d;
    read_field(body, "now", d);
    try {
      o.now = d.empty() ? Date{} : parse_iso_date(d);
    } catch (const Error&) {
      ill_typed("now", "an ISO date");
    }
  }
  if (body.contains("ef_search")) {
    std::size_t ef = 0;
    read_field(body, "ef_search", ef);
    if (ef == 0) throw Error(ErrorCode::kInvalidParams, "'ef_search' must be >= 1");
    o.ef_search = ef;
  }
  if (auto it = body.find("exclude_ids"); it != body.end()) {
    if (!it->is_array()) ill_typed("exclude_ids", "an array of strings");
    for (const auto& id : *it) {
      if (!id.is_string()) ill_typed("exclude_ids", "an array of strings");
      o.exclude_ids.insert(id.get<std::string>());
    }
  }
  o.validate();
  return o;
}

InsightOptions insight_options_from_json(const json& body, const InsightOptions& defaults) {
  InsightOptions o = defaults;
  o.retrieval = retrieval_options_from_json(body, defaults.retrieval);
  read_field(body, "context_limit", o.context_limit);
  read_field(body, "temperature", o.temperature);
  read_field(body, "expansion_terms", o.expansion_terms);
  if (body.contains("sentence_budget")) {
    std::size_t b = 0;
    read_field(body, "sentence_budget", b);
    o.sentence_budget = b;
  }
  read_field(body, "threshold", o.refine.threshold);
  read_field(body, "max_rounds", o.refine.max_rounds);
  read_field(body, "template", o.refine.template_id);
  read_field(body, "max_tokens", o.refine.max_tokens);
  if (!(o.temperature > 0.0)) throw Error(ErrorCode::kInvalidParams, "temperature must be > 0");
  if (!(o.refine.threshold > 0.0 && o.refine.threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "threshold must lie in (0, 1]");
  }
  if (o.refine.max_rounds < 0) throw Error(ErrorCode::kInvalidParams, "max_rounds must be >= 0");
  return o;
}

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord:
    case ErrorCode::kMissingField:
    case ErrorCode::kEmptyText:
      return 400;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kDuplicateId:
      return 409;
    case ErrorCode::kInvalidParams:
    case ErrorCode::kInvalidCode:
    case ErrorCode::kBudgetTooSmall:
    case ErrorCode::kUnknownTemplate:
      return 422;
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kEncoderFailure:
    case ErrorCode::kEmptyIndex:
    case ErrorCode::kNoCases:
      return 503;
    default:
      return 500;
  }
}

int exit_code_for(ErrorCode code) { return 10 + static_cast<int>(code); }

std::unique_ptr<EncoderBackend> make_encoder(const ServiceConfig& config) {
  if (config.encoder_backend == "remote") {
    RemoteEncoderConfig rc = config.remote_encoder;
    rc.dim = config.encoder_dim;
    return std::make_unique<RemoteEncoder>(rc);
  }
  return std::make_unique<ReferenceEncoder>(config.encoder_dim, config.encoder_seed);
}

// ---------------------------------------------------------------------------

namespace {

// Makes sure the store directory exists; an empty path keeps the store in memory.
std::filesystem::path prepare_store_path(const std::filesystem::path& path) {
  if (!path.empty() && path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) {
      throw Error(ErrorCode::kConfigError,
                  "cannot create " + path.parent_path().string() + ": " + ec.message());
    }
  }
  return path;
}

}  // namespace

CaseService::CaseService(ServiceConfig config)
    : CaseService(config, make_encoder(config)) {}

CaseService::CaseService(ServiceConfig config, std::unique_ptr<EncoderBackend> encoder)
    : config_(std::move(config)),
      store_(prepare_store_path(config_.store_path)),
      encoder_(std::move(encoder)) {
  config_.validate();
  if (!config_.index_path.empty() && std::filesystem::exists(config_.index_path)) {
    auto loaded = std::make_shared<HnswIndex>(HnswIndex::load_snapshot(config_.index_path));
    if (loaded->dim() != encoder_->dim()) {
      throw Error(ErrorCode::kConfigError,
                  "index snapshot has dim " + std::to_string(loaded->dim()) +
                      " but the encoder produces " + std::to_string(encoder_->dim()));
    }
    index_ = std::move(loaded);
  }
}

std::shared_ptr<const HnswIndex> CaseService::index() const {
  std::lock_guard lock(index_mutex_);
  return index_;
}

bool CaseService::index_ready() const { return index() != nullptr; }

void CaseService::set_index(std::shared_ptr<HnswIndex> index) {
  std::lock_guard lock(index_mutex_);
  index_ = std::move(index);
}

std::shared_ptr<HnswIndex> CaseService::writable_index() {
  std::lock_guard lock(index_mutex_);
  if (!index_) index_ = std::make_shared<HnswIndex>(encoder_->dim(), config_.hnsw);
  return index_;
}

void CaseService::invalidate_vocabulary() {
  std::lock_guard lock(vocab_mutex_);
  vocabulary_.reset();
}

std::string CaseService::embedding_text(const CaseDocument& doc) const {
  return doc.title.empty() ? doc.body : doc.title + "\n" + doc.body;
}

IngestSummary CaseService::ingest_file(const std::filesystem::path& corpus, PutMode mode) {
  auto docs = read_corpus_file(corpus);
  std::lock_guard writer(writer_);
  IngestSummary summary;
  summary.read = docs.size();
  for (auto& doc : docs) {
    const bool existed = store_.contains(doc.id);
    store_.put_case(std::move(doc), mode);
    ++(existed ? summary.replaced : summary.inserted);
  }
  invalidate_vocabulary();
  return summary;
}

void CaseService::add_case(CaseDocument doc, PutMode mode) {
  validate_case(doc);
  // Embed before touching the store so an encoder failure leaves no trace.
  const auto vec = encoder_->encode(embedding_text(doc));
  std::lock_guard writer(writer_);
  const std::string id = doc.id;
  store_.put_case(std::move(doc), mode);
  auto idx = writable_index();
  if (idx->contains(id)) idx->tombstone(id);
  idx->insert(id, vec);
  store_.clear_stale({id});
  invalidate_vocabulary();
}

BuildSummary CaseService::build_index(bool save) {
  std::lock_guard writer(writer_);
  auto idx = writable_index();
  const auto stale = store_.stale_ids();
  std::vector<std::string> todo;
  BuildSummary summary;
  for (const auto& id : store_.list_ids()) {
    if (!idx->contains(id)) {
      todo.push_back(id);
      ++summary.inserted;
    } else if (stale.count(id)) {
      todo.push_back(id);
      ++summary.reindexed;
    }
  }
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < todo.size(); start += kChunk) {
    const std::size_t end = std::min(todo.size(), start + kChunk);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) {
      texts.push_back(embedding_text(store_.get_case(todo[i])));
    }
    const auto vecs = encoder_->encode_batch(texts);
    for (std::size_t i = start; i < end; ++i) {
      if (idx->contains(todo[i])) idx->tombstone(todo[i]);
      idx->insert(todo[i], vecs[i - start]);
    }
  }
  if (!stale.empty()) store_.clear_stale({stale.begin(), stale.end()});
  summary.live = idx->live_count();
  if (save) save_index();
  return summary;
}

BuildSummary CaseService::compact(bool save) {
  std::lock_guard writer(writer_);
  auto current = index();
  if (!current) throw Error(ErrorCode::kEmptyIndex, "no index to compact");
  auto fresh = std::make_shared<HnswIndex>(current->compacted());
  BuildSummary summary;
  summary.live = fresh->live_count();
  summary.inserted = summary.live;
  set_index(std::move(fresh));
  if (save) save_index();
  return summary;
}

void CaseService::save_index() const {
  auto idx = index();
  if (!idx || config_.index_path.empty()) return;
  if (config_.index_path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(config_.index_path.parent_path(), ec);
  }
  idx->save_snapshot(config_.index_path);
}

RetrievalResult CaseService::search(const std::string& query,
                                    const RetrievalOptions& opts) const {
  auto idx = index();
  if (!idx) throw Error(ErrorCode::kEmptyIndex, "index not built; run build-index first");
  return retrieve_cases(query, opts, *idx, store_, *encoder_);
}

json CaseService::search_json(const std::string& query, const RetrievalOptions& opts,
                              bool include_timings) const {
  const auto result = search(query, opts);
  json results = json::array();
  for (const auto& r : result.results) results.push_back(to_json(r));
  json out{{"query", query}, {"results", results}};
  if (include_timings) out["timings"] = to_json(result.timings);
  return out;
}

std::shared_ptr<const TermVocabulary> CaseService::vocabulary() const {
  std::lock_guard lock(vocab_mutex_);
  if (!vocabulary_) vocabulary_ = std::make_shared<const TermVocabulary>(build_vocabulary(store_));
  return vocabulary_;
}

std::unique_ptr<GenerationBackend> CaseService::make_generator() const {
  if (config_.generator_backend == "scripted") {
    return ScriptedBackend::from_file(config_.generator_script);
  }
  if (config_.generator_backend == "remote") {
    return std::make_unique<RemoteGenerator>(config_.remote_generator);
  }
  throw Error(ErrorCode::kBackendUnavailable, "no generation backend configured");
}

InsightReport CaseService::insight(const std::string& query, const InsightOptions& opts) const {
  auto idx = index();
  if (!idx) throw Error(ErrorCode::kEmptyIndex, "index not built; run build-index first");
  auto generator = make_generator();
  auto vocab = vocabulary();
  InsightDeps deps{*idx, store_, *encoder_, *generator, vocab.get()};
  return generate_insights(query, opts, deps);
}

json CaseService::health() const {
  auto idx = index();
  json index_info = nullptr;
  if (idx) {
    index_info = json{{"live_count", idx->live_count()},
                      {"node_count", idx->node_count()},
                      {"dim", idx->dim()}};
  }
  return json{{"status", idx ? "ok" : "degraded"},
              {"version", kVersion},
              {"encoder", encoder_->name()},
              {"generator", config_.generator_backend},
              {"documents", store_.size()},
              {"index_loaded", idx != nullptr},
              {"index", index_info}};
}

json CaseService::stats() const {
  auto idx = index();
  json index_info = nullptr;
  if (idx) {
    index_info = json{{"params", to_json(idx->params())},
                      {"live_count", idx->live_count()},
                      {"node_count", idx->node_count()},
                      {"dim", idx->dim()}};
  }
  return json{{"corpus", to_json(store_.stats())}, {"index", index_info}};
}

}  // namespace casegpt
