#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casegpt/corpus.hpp"
#include "casegpt/encoder.hpp"
#include "casegpt/hnsw.hpp"
#include "casegpt/ranker.hpp"

namespace casegpt {

// Binary-relevance ranking metrics. `ranked` must not contain duplicates.
double precision_at_k(const std::vector<std::string>& ranked,
                      const std::set<std::string>& relevant, std::size_t k);
double recall_at_k(const std::vector<std::string>& ranked,
                   const std::set<std::string>& relevant, std::size_t k);
double f1_at_k(const std::vector<std::string>& ranked,
               const std::set<std::string>& relevant, std::size_t k);
/// DCG with rel / log2(i + 1) gains over the ideal DCG; 0 when nothing is
/// relevant.
double ndcg_at_k(const std::vector<std::string>& ranked,
                 const std::set<std::string>& relevant, std::size_t k);
/// 1 / rank of the first relevant id, 0 when none is retrieved.
double reciprocal_rank(const std::vector<std::string>& ranked,
                       const std::set<std::string>& relevant);

struct Judgment {
  std::string query_id;
  std::string query_text;
  std::set<std::string> relevant_ids;
  std::optional<std::string> source_id;  // held out of the searchable pool
};

using JudgmentSet = std::vector<Judgment>;

/// Mean reciprocal rank; rankings[i] answers judgments[i].
double mrr(const std::vector<std::vector<std::string>>& rankings,
           const JudgmentSet& judgments);

/// Samples held-out documents whose taxonomy codes are shared with at least
/// one other document. Query = one seeded-random sentence of the body,
/// relevant = every other document sharing a code.
JudgmentSet generate_queryset(const CorpusStore& store, std::size_t n_queries,
                              std::uint64_t seed);

/// Checks ids exist in the store and each query has a relevant id.
void validate_judgments(const JudgmentSet& judgments, const CorpusStore& store);

JudgmentSet read_judgments(const std::filesystem::path& path);
void write_judgments(const std::filesystem::path& path, const JudgmentSet& judgments);

struct MetricSummary {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mrr = 0.0;
  double ndcg = 0.0;
};

struct BenchmarkReport {
  std::string system = "casegpt";
  std::size_t k = 10;
  std::size_t query_count = 0;      // queries that completed
  MetricSummary metrics;
  std::optional<double> mean_seconds;  // retrieval only; absent in parallel mode
  std::optional<double> p95_seconds;
  std::vector<double> per_query_seconds;
  bool parallel = false;
  bool partial = false;
  std::optional<std::string> error;
  nlohmann::json config;
};

/// Averages per-query metrics over fixed rankings (rankings[i] answers
/// judgments[i]).
MetricSummary score_rankings(const std::vector<std::vector<std::string>>& rankings,
                             const JudgmentSet& judgments, std::size_t k);

struct BenchmarkOptions {
  std::size_t k = 10;
  bool parallel = false;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

BenchmarkReport run_benchmark(const JudgmentSet& judgments, const RetrievalOptions& retrieval,
                              const BenchmarkOptions& options, const HnswIndex& index,
                              const CorpusStore& store, const EncoderBackend& encoder);

nlohmann::json report_to_json(const BenchmarkReport& report);
/// Aligned text table, one row per report.
std::string format_report_table(const std::vector<BenchmarkReport>& reports);

/// Nearest-rank percentile, p in (0, 100].
double percentile(std::vector<double> values, double p);

}  // namespace casegpt
