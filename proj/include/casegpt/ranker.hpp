#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "casegpt/corpus.hpp"
#include "casegpt/encoder.hpp"
#include "casegpt/hnsw.hpp"

namespace casegpt {

struct RerankWeights {
  double similarity = 0.7;
  double recency = 0.1;
  double citation = 0.1;
  double jurisdiction = 0.1;
  double half_life_days = 1825.0;

  void validate() const;  // throws InvalidParams
};

struct RetrievalOptions {
  std::size_t k = 100;   // ANN candidate pool
  std::size_t n = 10;    // final result count
  double lambda = 0.7;   // MMR relevance/diversity trade-off
  RerankWeights weights;
  std::optional<std::string> query_jurisdiction;
  Date now{};            // reference date for recency; epoch means "today"
  std::optional<std::size_t> ef_search;
  std::set<std::string> exclude_ids;  // never returned (held-out sources)

  void validate() const;  // throws InvalidParams
};

struct FactorScores {
  double recency = 0.0;
  double citation = 0.0;
  double jurisdiction = 0.0;
};

struct RankedResult {
  std::string id;
  double cosine = 0.0;
  FactorScores factors;
  double final_score = 0.0;
  int rank = 0;
};

struct StageTimings {
  double encode_ms = 0.0;
  double ann_ms = 0.0;
  double rescore_ms = 0.0;
  double rerank_ms = 0.0;
  double mmr_ms = 0.0;
  double total_ms = 0.0;
};

struct RetrievalResult {
  std::vector<RankedResult> results;
  StageTimings timings;
};

struct CaseMetadata {
  Date timestamp{};
  std::int64_t citation_count = 0;
  std::optional<std::string> jurisdiction;
};

/// Cosine of two vectors, clamped to [-1, 1]. Throws DimensionMismatch.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

double recency_score(Date timestamp, Date now, double half_life_days);
double citation_score(std::int64_t citations, std::int64_t max_citations);
/// 1 for an exact match or when the query has no jurisdiction, 0.5 when one
/// code is a dot-path prefix of the other, else 0.
double jurisdiction_score(const std::optional<std::string>& query,
                          const std::optional<std::string>& doc);

struct Candidate {
  std::string id;
  double cosine = 0.0;
};

/// Weighted blend of cosine and metadata factors; output sorted by final
/// score descending, then id. Throws MissingMetadata.
std::vector<RankedResult> rerank(
    const std::vector<Candidate>& candidates,
    const std::function<std::optional<CaseMetadata>(const std::string&)>& metadata,
    const CorpusStats& stats, const RetrievalOptions& opts);

/// Greedy MMR over precomputed relevance in [0, 1]. Returns indices into
/// the pool in selection order. `similarity(i, j)` is the redundancy term.
std::vector<std::size_t> mmr_select(
    const std::vector<std::string>& ids, const std::vector<double>& relevance,
    const std::function<double(std::size_t, std::size_t)>& similarity,
    std::size_t n, double lambda);

/// MMR over a ranked pool. Relevance is the min-max normalized final score
/// of the pool; redundancy is cosine between case vectors. Ranks are
/// renumbered 1..n in selection order.
std::vector<RankedResult> apply_mmr(const std::vector<RankedResult>& ranked,
                                    const std::vector<EmbeddingVector>& vectors,
                                    std::size_t n, double lambda);

/// Encode -> ANN -> exact re-score -> rerank -> MMR.
RetrievalResult retrieve_cases(const std::string& query_text,
                               const RetrievalOptions& opts,
                               const HnswIndex& index, const CorpusStore& store,
                               const EncoderBackend& encoder);

}  // namespace casegpt
