#include "casegpt/ranker.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "casegpt/error.hpp"

namespace casegpt {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool by_score_then_id(const RankedResult& a, const RankedResult& b) {
  return a.final_score > b.final_score ||
         (a.final_score == b.final_score && a.id < b.id);
}

bool is_path_prefix(const std::string& prefix, const std::string& full) {
  if (prefix.size() >= full.size()) return false;
  if (full.compare(0, prefix.size(), prefix) != 0) return false;
  const char sep = full[prefix.size()];
  return sep == '.' || sep == '/';
}

Date today() {
  return std::chrono::floor<std::chrono::days>(std::chrono::system_clock::now());
}

}  // namespace

void RerankWeights::validate() const {
  for (double w : {similarity, recency, citation, jurisdiction}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::kInvalidParams, "re-rank weights must be non-negative");
    }
  }
  if (similarity + recency + citation + jurisdiction <= 0.0) {
    throw Error(ErrorCode::kInvalidParams, "re-rank weights must not all be zero");
  }
  if (!(half_life_days > 0.0) || !std::isfinite(half_life_days)) {
    throw Error(ErrorCode::kInvalidParams, "half_life_days must be positive");
  }
}

void RetrievalOptions::validate() const {
  if (n < 1) throw Error(ErrorCode::kInvalidParams, "n must be >= 1");
  if (k < n) throw Error(ErrorCode::kInvalidParams, "k must be >= n");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "lambda must lie in [0, 1]");
  }
  if (ef_search && *ef_search < 1) {
    throw Error(ErrorCode::kInvalidParams, "ef_search must be >= 1");
  }
  weights.validate();
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine of vectors with dims " + std::to_string(a.dim()) + " and " +
                    std::to_string(b.dim()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

double recency_score(Date timestamp, Date now, double half_life_days) {
  const double age = std::max(0.0, double((now - timestamp).count()));
  return std::exp2(-age / half_life_days);
}

double citation_score(std::int64_t citations, std::int64_t max_citations) {
  if (max_citations <= 0) return 0.0;
  const double c = double(std::clamp<std::int64_t>(citations, 0, max_citations));
  return std::log1p(c) / std::log1p(double(max_citations));
}

double jurisdiction_score(const std::optional<std::string>& query,
                          const std::optional<std::string>& doc) {
  if (!query) return 1.0;
  if (!doc) return 0.0;
  if (*query == *doc) return 1.0;
  if (is_path_prefix(*query, *doc) || is_path_prefix(*doc, *query)) return 0.5;
  return 0.0;
}

std::vector<RankedResult> rerank(
    const std::vector<Candidate>& candidates,
    const std::function<std::optional<CaseMetadata>(const std::string&)>& metadata,
    const CorpusStats& stats, const RetrievalOptions& opts) {
  opts.weights.validate();
  const auto& w = opts.weights;
  const double total = w.similarity + w.recency + w.citation + w.jurisdiction;
  const Date now = opts.now == Date{} ? today() : opts.now;

  std::vector<RankedResult> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    auto meta = metadata(c.id);
    if (!meta) {
      throw Error(ErrorCode::kMissingMetadata, "no metadata for case '" + c.id + "'");
    }
    RankedResult r;
    r.id = c.id;
    r.cosine = c.cosine;
    r.factors.recency = recency_score(meta->timestamp, now, w.half_life_days);
    r.factors.citation = citation_score(meta->citation_count, stats.max_citation_count);
    r.factors.jurisdiction = jurisdiction_score(opts.query_jurisdiction, meta->jurisdiction);
    const double cosine01 = (c.cosine + 1.0) / 2.0;
    r.final_score = (w.similarity * cosine01 + w.recency * r.factors.recency +
                     w.citation * r.factors.citation +
                     w.jurisdiction * r.factors.jurisdiction) /
                    total;
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), by_score_then_id);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = int(i) + 1;
  return out;
}

std::vector<std::size_t> mmr_select(
    const std::vector<std::string>& ids, const std::vector<double>& relevance,
    const std::function<double(std::size_t, std::size_t)>& similarity,
    std::size_t n, double lambda) {
  const std::size_t pool = ids.size();
  std::vector<std::size_t> selected;
  if (pool == 0 || n == 0) return selected;
  std::vector<bool> taken(pool, false);
  // Highest similarity to anything selected so far, per candidate.
  std::vector<double> redundancy(pool, -std::numeric_limits<double>::infinity());

  auto better = [&](std::size_t a, double score_a, std::size_t b, double score_b) {
    return score_a > score_b || (score_a == score_b && ids[a] < ids[b]);
  };

  std::size_t first = 0;
  for (std::size_t i = 1; i < pool; ++i) {
    if (better(i, relevance[i], first, relevance[first])) first = i;
  }
  selected.push_back(first);
  taken[first] = true;

  while (selected.size() < std::min(n, pool)) {
    const std::size_t last = selected.back();
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (std::size_t i = 0; i < pool; ++i) {
      if (taken[i]) continue;
      redundancy[i] = std::max(redundancy[i], similarity(i, last));
      const double score = lambda * relevance[i] - (1.0 - lambda) * redundancy[i];
      if (!best || better(i, score, *best, best_score)) {
        best = i;
        best_score = score;
      }
    }
    selected.push_back(*best);
    taken[*best] = true;
  }
  return selected;
}

std::vector<RankedResult> apply_mmr(const std::vector<RankedResult>& ranked,
                                    const std::vector<EmbeddingVector>& vectors,
                                    std::size_t n, double lambda) {
  if (n < 1) throw Error(ErrorCode::kInvalidParams, "MMR needs n >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "lambda must lie in [0, 1]");
  }
  if (vectors.size() != ranked.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one vector per ranked result required");
  }
  if (ranked.empty()) return {};

  double lo = ranked.front().final_score, hi = lo;
  for (const auto& r : ranked) {
    lo = std::min(lo, r.final_score);
    hi = std::max(hi, r.final_score);
  }
  std::vector<double> relevance(ranked.size(), 1.0);
  if (hi > lo) {
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      relevance[i] = (ranked[i].final_score - lo) / (hi - lo);
    }
  }
  std::vector<std::string> ids;
  ids.reserve(ranked.size());
  for (const auto& r : ranked) ids.push_back(r.id);

  const auto order = mmr_select(
      ids, relevance,
      [&](std::size_t i, std::size_t j) { return cosine_similarity(vectors[i], vectors[j]); },
      n, lambda);
  std::vector<RankedResult> out;
  out.reserve(order.size());
  for (std::size_t i : order) {
    out.push_back(ranked[i]);
    out.back().rank = int(out.size());
  }
  return out;
}

RetrievalResult retrieve_cases(const std::string& query_text,
                               const RetrievalOptions& opts,
                               const HnswIndex& index, const CorpusStore& store,
                               const EncoderBackend& encoder) {
  opts.validate();
  RetrievalResult result;
  const auto start = Clock::now();

  auto t = Clock::now();
  EmbeddingVector query;
  try {
    query = encoder.encode(query_text);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEmptyText || e.code() == ErrorCode::kBackendUnavailable) throw;
    throw Error(ErrorCode::kEncoderFailure, std::string("query encoding failed: ") + e.what());
  }
  result.timings.encode_ms = ms_since(t);

  t = Clock::now();
  auto hits = index.search(query, opts.k + opts.exclude_ids.size(), opts.ef_search);
  result.timings.ann_ms = ms_since(t);

  // Exact re-score against the stored vectors.
  t = Clock::now();
  std::vector<Candidate> candidates;
  std::vector<EmbeddingVector> vectors_by_candidate;
  for (const auto& hit : hits) {
    if (candidates.size() == opts.k) break;
    if (opts.exclude_ids.count(hit.id)) continue;
    auto v = index.vector_of(hit.id);
    if (!v) continue;  // tombstoned since the search
    candidates.push_back({hit.id, cosine_similarity(query, *v)});
    vectors_by_candidate.push_back(std::move(*v));
  }
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].cosine > candidates[b].cosine ||
           (candidates[a].cosine == candidates[b].cosine && candidates[a].id < candidates[b].id);
  });
  std::vector<Candidate> sorted;
  sorted.reserve(order.size());
  for (std::size_t i : order) sorted.push_back(candidates[i]);
  result.timings.rescore_ms = ms_since(t);
  if (sorted.empty()) return result;

  t = Clock::now();
  auto ranked = rerank(
      sorted,
      [&](const std::string& id) -> std::optional<CaseMetadata> {
        auto doc = store.find_case(id);
        if (!doc) return std::nullopt;
        return CaseMetadata{doc->timestamp, doc->citation_count, doc->jurisdiction};
      },
      store.stats(), opts);
  result.timings.rerank_ms = ms_since(t);

  t = Clock::now();
  std::vector<EmbeddingVector> ranked_vectors;
  ranked_vectors.reserve(ranked.size());
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < candidates.size(); ++i) position.emplace(candidates[i].id, i);
  for (const auto& r : ranked) ranked_vectors.push_back(vectors_by_candidate[position.at(r.id)]);
  result.results = apply_mmr(ranked, ranked_vectors, opts.n, opts.lambda);
  result.timings.mmr_ms = ms_since(t);
  result.timings.total_ms = ms_since(start);
  return result;
}

}  // namespace casegpt
