#include "casegpt/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "casegpt/error.hpp"
#include "casegpt/insight.hpp"

namespace casegpt {

namespace {

void check_k(std::size_t k) {
  if (k < 1) throw Error(ErrorCode::kInvalidParams, "metric cutoff k must be >= 1");
}

void check_ranked(const std::vector<std::string>& ranked) {
  std::set<std::string> seen;
  for (const auto& id : ranked) {
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kInvalidParams, "ranked list repeats id '" + id + "'");
    }
  }
}

std::size_t hits_at_k(const std::vector<std::string>& ranked,
                      const std::set<std::string>& relevant, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hits += relevant.count(ranked[i]);
  return hits;
}

}  // namespace

double precision_at_k(const std::vector<std::string>& ranked,
                      const std::set<std::string>& relevant, std::size_t k) {
  check_k(k);
  check_ranked(ranked);
  if (relevant.empty()) throw Error(ErrorCode::kEmptyJudgment, "relevant set is empty");
  return double(hits_at_k(ranked, relevant, k)) / double(k);
}

double recall_at_k(const std::vector<std::string>& ranked,
                   const std::set<std::string>& relevant, std::size_t k) {
  check_k(k);
  check_ranked(ranked);
  if (relevant.empty()) throw Error(ErrorCode::kEmptyJudgment, "relevant set is empty");
  return double(hits_at_k(ranked, relevant, k)) / double(relevant.size());
}

double f1_at_k(const std::vector<std::string>& ranked,
               const std::set<std::string>& relevant, std::size_t k) {
  const double p = precision_at_k(ranked, relevant, k);
  const double r = recall_at_k(ranked, relevant, k);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double ndcg_at_k(const std::vector<std::string>& ranked,
                 const std::set<std::string>& relevant, std::size_t k) {
  check_k(k);
  check_ranked(ranked);
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    if (relevant.count(ranked[i])) dcg += 1.0 / std::log2(double(i) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) {
    ideal += 1.0 / std::log2(double(i) + 2.0);
  }
  return ideal == 0.0 ? 0.0 : dcg / ideal;
}

double reciprocal_rank(const std::vector<std::string>& ranked,
                       const std::set<std::string>& relevant) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (relevant.count(ranked[i])) return 1.0 / double(i + 1);
  }
  return 0.0;
}

double mrr(const std::vector<std::vector<std::string>>& rankings,
           const JudgmentSet& judgments) {
  if (judgments.empty()) throw Error(ErrorCode::kEmptyQuerySet, "no queries to score");
  if (rankings.size() != judgments.size()) {
    throw Error(ErrorCode::kInvalidParams, "one ranking per judged query required");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < judgments.size(); ++i) {
    sum += reciprocal_rank(rankings[i], judgments[i].relevant_ids);
  }
  return sum / double(judgments.size());
}

MetricSummary score_rankings(const std::vector<std::vector<std::string>>& rankings,
                             const JudgmentSet& judgments, std::size_t k) {
  if (judgments.empty()) throw Error(ErrorCode::kEmptyQuerySet, "no queries to score");
  if (rankings.size() != judgments.size()) {
    throw Error(ErrorCode::kInvalidParams, "one ranking per judged query required");
  }
  MetricSummary s;
  for (std::size_t i = 0; i < judgments.size(); ++i) {
    const auto& rel = judgments[i].relevant_ids;
    s.precision += precision_at_k(rankings[i], rel, k);
    s.recall += recall_at_k(rankings[i], rel, k);
    s.f1 += f1_at_k(rankings[i], rel, k);
    s.ndcg += ndcg_at_k(rankings[i], rel, k);
  }
  const double n = double(judgments.size());
  s.precision /= n;
  s.recall /= n;
  s.f1 /= n;
  s.ndcg /= n;
  s.mrr = mrr(rankings, judgments);
  return s;
}

JudgmentSet generate_queryset(const CorpusStore& store, std::size_t n_queries,
                              std::uint64_t seed) {
  const auto docs = store.list_cases();
  std::map<std::string, std::vector<std::size_t>> by_code;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::set<std::string> codes(docs[i].taxonomy_codes.begin(), docs[i].taxonomy_codes.end());
    for (const auto& c : codes) by_code[c].push_back(i);
  }
  std::vector<std::set<std::string>> relevant(docs.size());
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& c : docs[i].taxonomy_codes) {
      for (std::size_t j : by_code[c]) {
        if (j != i) relevant[i].insert(docs[j].id);
      }
    }
    if (!relevant[i].empty()) eligible.push_back(i);
  }
  if (n_queries == 0 || eligible.size() < n_queries) {
    throw Error(ErrorCode::kInsufficientCorpus,
                "need " + std::to_string(n_queries) +
                    " documents sharing a taxonomy code, corpus has " +
                    std::to_string(eligible.size()));
  }

  // Fisher-Yates with plain modulo draws so the sample is identical on
  // every standard library.
  std::mt19937_64 rng(seed);
  for (std::size_t i = eligible.size(); i > 1; --i) {
    std::swap(eligible[i - 1], eligible[rng() % i]);
  }
  JudgmentSet out;
  for (std::size_t q = 0; q < n_queries; ++q) {
    const auto& doc = docs[eligible[q]];
    const auto sentences = split_sentences(doc.body);
    Judgment j;
    char id[32];
    std::snprintf(id, sizeof id, "q%04zu", q + 1);
    j.query_id = id;
    j.query_text = sentences.empty() ? doc.body : sentences[rng() % sentences.size()];
    j.relevant_ids = relevant[eligible[q]];
    j.source_id = doc.id;
    out.push_back(std::move(j));
  }
  return out;
}

void validate_judgments(const JudgmentSet& judgments, const CorpusStore& store) {
  for (const auto& j : judgments) {
    if (j.relevant_ids.empty()) {
      throw Error(ErrorCode::kEmptyJudgment, "query " + j.query_id + " has no relevant ids");
    }
    for (const auto& id : j.relevant_ids) {
      if (!store.contains(id)) {
        throw Error(ErrorCode::kNotFound,
                    "query " + j.query_id + " judges unknown case '" + id + "'");
      }
    }
  }
}

JudgmentSet read_judgments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open judgment file " + path.string());
  JudgmentSet out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw std::runtime_error("not JSON");
      Judgment judgment;
      judgment.query_id = j.at("query_id").get<std::string>();
      judgment.query_text = j.at("query_text").get<std::string>();
      for (const auto& id : j.at("relevant_ids")) judgment.relevant_ids.insert(id.get<std::string>());
      if (j.contains("source_id") && j["source_id"].is_string()) {
        judgment.source_id = j["source_id"].get<std::string>();
      }
      out.push_back(std::move(judgment));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kMalformedRecord,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_judgments(const std::filesystem::path& path, const JudgmentSet& judgments) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write judgment file " + path.string());
  for (const auto& j : judgments) {
    nlohmann::json rec{{"query_id", j.query_id},
                       {"query_text", j.query_text},
                       {"relevant_ids", j.relevant_ids}};
    if (j.source_id) rec["source_id"] = *j.source_id;
    out << rec.dump() << "\n";
  }
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * double(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

BenchmarkReport run_benchmark(const JudgmentSet& judgments, const RetrievalOptions& retrieval,
                              const BenchmarkOptions& options, const HnswIndex& index,
                              const CorpusStore& store, const EncoderBackend& encoder) {
  if (judgments.empty()) throw Error(ErrorCode::kEmptyQuerySet, "query set is empty");
  check_k(options.k);

  BenchmarkReport report;
  report.k = options.k;
  report.parallel = options.parallel;
  report.config = {{"k", options.k},
                   {"candidate_pool", std::max(retrieval.k, options.k)},
                   {"lambda", retrieval.lambda},
                   {"weights",
                    {retrieval.weights.similarity, retrieval.weights.recency,
                     retrieval.weights.citation, retrieval.weights.jurisdiction}},
                   {"half_life_days", retrieval.weights.half_life_days},
                   {"ef_search", retrieval.ef_search.value_or(index.params().ef_search)},
                   {"encoder", encoder.name()},
                   {"queries", judgments.size()},
                   {"mrr_policy", "queries without a retrieved relevant case count as 0"}};

  const std::size_t n = judgments.size();
  std::vector<std::optional<std::vector<std::string>>> rankings(n);
  std::vector<double> seconds(n, 0.0);
  std::mutex error_mutex;
  std::optional<std::string> first_error;

  auto run_one = [&](std::size_t i) {
    RetrievalOptions opts = retrieval;
    opts.n = options.k;
    opts.k = std::max(retrieval.k, options.k);
    if (judgments[i].source_id) opts.exclude_ids.insert(*judgments[i].source_id);
    const auto start = std::chrono::steady_clock::now();
    auto result = retrieve_cases(judgments[i].query_text, opts, index, store, encoder);
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::vector<std::string> ids;
    for (const auto& r : result.results) ids.push_back(r.id);
    rankings[i] = std::move(ids);
  };

  if (!options.parallel) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        run_one(i);
      } catch (const Error& e) {
        first_error = judgments[i].query_id + ": " + e.what();
        break;
      }
    }
  } else {
    std::size_t threads = options.threads ? options.threads : std::thread::hardware_concurrency();
    threads = std::max<std::size_t>(1, std::min(threads, n));
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; !abort && (i = next++) < n;) {
          try {
            run_one(i);
          } catch (const Error& e) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = judgments[i].query_id + ": " + e.what();
            abort = true;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<std::vector<std::string>> done_rankings;
  JudgmentSet done_judgments;
  for (std::size_t i = 0; i < n; ++i) {
    if (!rankings[i]) continue;
    done_rankings.push_back(*rankings[i]);
    done_judgments.push_back(judgments[i]);
    report.per_query_seconds.push_back(seconds[i]);
  }
  report.query_count = done_judgments.size();
  if (first_error) {
    report.partial = true;
    report.error = first_error;
  }
  if (!done_judgments.empty()) {
    report.metrics = score_rankings(done_rankings, done_judgments, options.k);
    if (!options.parallel) {
      const auto& s = report.per_query_seconds;
      report.mean_seconds = std::accumulate(s.begin(), s.end(), 0.0) / double(s.size());
      report.p95_seconds = percentile(s, 95.0);
    }
  }
  return report;
}

nlohmann::json report_to_json(const BenchmarkReport& r) {
  nlohmann::json j{{"system", r.system},
                   {"k", r.k},
                   {"query_count", r.query_count},
                   {"precision_at_k", r.metrics.precision},
                   {"recall_at_k", r.metrics.recall},
                   {"f1", r.metrics.f1},
                   {"mrr", r.metrics.mrr},
                   {"ndcg_at_k", r.metrics.ndcg},
                   {"parallel", r.parallel},
                   {"partial", r.partial},
                   {"config", r.config}};
  j["mean_response_seconds"] = r.mean_seconds ? nlohmann::json(*r.mean_seconds) : nlohmann::json();
  j["p95_response_seconds"] = r.p95_seconds ? nlohmann::json(*r.p95_seconds) : nlohmann::json();
  j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json();
  return j;
}

std::string format_report_table(const std::vector<BenchmarkReport>& reports) {
  const std::size_t k = reports.empty() ? 10 : reports.front().k;
  const std::string ks = std::to_string(k);
  std::vector<std::vector<std::string>> rows{{"System", "P@" + ks, "R@" + ks, "F1", "MRR",
                                              "NDCG@" + ks, "Time (s)", "p95 (s)"}};
  auto num = [](double v, const char* fmt) {
    char buf[32];
    std::snprintf(buf, sizeof buf, fmt, v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    rows.push_back({r.system + (r.partial ? " (partial)" : ""), num(r.metrics.precision, "%.4f"),
                    num(r.metrics.recall, "%.4f"), num(r.metrics.f1, "%.4f"),
                    num(r.metrics.mrr, "%.4f"), num(r.metrics.ndcg, "%.4f"),
                    r.mean_seconds ? num(*r.mean_seconds, "%.4f") : "n/a",
                    r.p95_seconds ? num(*r.p95_seconds, "%.4f") : "n/a"});
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) out << "  ";
      const auto pad = std::string(width[c] - rows[r][c].size(), ' ');
      out << (c == 0 ? rows[r][c] + pad : pad + rows[r][c]);
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  return out.str();
}

}  // namespace casegpt
