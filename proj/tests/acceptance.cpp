// Acceptance checks: one PASS/FAIL line per criterion. Exit status is the
// number of failed checks. Pass check names as arguments to run a subset.
#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "casegpt/error.hpp"
#include "casegpt/evalkit.hpp"
#include "casegpt/insight.hpp"
#include "casegpt/ranker.hpp"
#include "metric_oracle.hpp"
#include "support.hpp"

using namespace casegpt;
using namespace testing_support;

namespace {

// Digest of the determinism transcript (FNV-1a over the concatenated CLI
// outputs). Update only when an intentional change alters results.
constexpr std::uint64_t kGoldenDigest = 0xd9b8ec361f1cabf6;

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double recall_at(const std::vector<std::string>& truth, const std::vector<Neighbor>& found) {
  const std::set<std::string> t(truth.begin(), truth.end());
  std::size_t hit = 0;
  for (const auto& n : found) hit += t.count(n.id);
  return double(hit) / double(truth.size());
}

double mean_recall(const HnswIndex& index, const std::vector<EmbeddingVector>& data,
                   const std::vector<EmbeddingVector>& queries, std::size_t k) {
  double sum = 0;
  for (const auto& q : queries) sum += recall_at(brute_force_ids(data, q, k), index.search(q, k));
  return sum / double(queries.size());
}

// ---------------------------------------------------------------------------

Outcome metric_oracle_check() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1000);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = metric_oracle::random_case(rng);
    const double pairs[][2] = {
        {precision_at_k(c.ranked, c.relevant, c.k), metric_oracle::precision(c.ranked, c.relevant, c.k)},
        {recall_at_k(c.ranked, c.relevant, c.k), metric_oracle::recall(c.ranked, c.relevant, c.k)},
        {f1_at_k(c.ranked, c.relevant, c.k), metric_oracle::f1(c.ranked, c.relevant, c.k)},
        {ndcg_at_k(c.ranked, c.relevant, c.k), metric_oracle::ndcg(c.ranked, c.relevant, c.k)},
        {mrr({c.ranked}, {{"q", "", c.relevant, {}}}), metric_oracle::reciprocal_rank(c.ranked, c.relevant)}};
    for (const auto& p : pairs) worst = std::max(worst, std::abs(p[0] - p[1]));
  }

  // Hand fixtures.
  std::vector<std::string> ten;
  std::set<std::string> nine_of_ten;
  for (int i = 0; i < 10; ++i) ten.push_back("r" + std::to_string(i));
  for (int i = 0; i < 9; ++i) nine_of_ten.insert("r" + std::to_string(i));
  for (int i = 0; i < 3; ++i) nine_of_ten.insert("x" + std::to_string(i));
  const bool hand =
      std::abs(ndcg_at_k({"a", "b", "c"}, {"a", "c"}, 3) - 0.9198) <= 1e-4 &&
      std::abs(precision_at_k(ten, nine_of_ten, 10) - 0.9) <= 1e-4 &&
      std::abs(mrr({{"x", "p"}, {"p", "y"}}, {{"1", "", {"x"}, {}}, {"2", "", {"y"}, {}}}) - 0.75) <= 1e-4 &&
      std::abs(mrr({{"a", "b", "c", "z"}}, {{"1", "", {"z"}, {}}}) - 0.25) <= 1e-4 &&
      ndcg_at_k({"a", "c", "b"}, {"a", "c"}, 3) == 1.0 && ndcg_at_k({"a"}, {}, 1) == 0.0;
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && hand && secs < 5.0,
          fmt("max |diff| %.2e over 1000 lists, hand fixtures %s, %.2f s", worst,
              hand ? "ok" : "WRONG", secs)};
}

Outcome ann_recall_check() {
  const auto start = Clock::now();
  const auto data = random_units(1, 10000, 64);
  const auto queries = random_units(2, 100, 64);
  HnswParams p;
  p.m = 16;
  p.ef_construction = 200;
  p.ef_search = 100;
  HnswIndex index(64, p);
  for (std::size_t i = 0; i < data.size(); ++i) index.insert(node_id(i), data[i]);
  const double r = mean_recall(index, data, queries, 10);
  const double secs = seconds_since(start);
  return {r >= 0.95 && secs < 120, fmt("mean recall@10 %.4f, build+eval %.1f s", r, secs)};
}

Outcome incremental_check() {
  const auto data = random_units(3, 10000, 64);
  const auto queries = random_units(4, 100, 64);
  HnswIndex single(64);
  for (std::size_t i = 0; i < data.size(); ++i) single.insert(node_id(i), data[i]);

  TempDir dir;
  {
    HnswIndex first(64);
    for (std::size_t i = 0; i < 5000; ++i) first.insert(node_id(i), data[i]);
    first.save_snapshot(dir / "phase1.hnsw");
  }
  // The reloaded snapshot resumes the level RNG, so same-order arrival
  // reproduces the single-phase graph; shuffled arrival does not.
  auto two_phase = HnswIndex::load_snapshot(dir / "phase1.hnsw");
  for (std::size_t i = 5000; i < data.size(); ++i) two_phase.insert(node_id(i), data[i]);
  std::vector<std::size_t> order(5000);
  std::iota(order.begin(), order.end(), 5000);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(5));
  auto shuffled = HnswIndex::load_snapshot(dir / "phase1.hnsw");
  for (auto i : order) shuffled.insert(node_id(i), data[i]);

  const double r1 = mean_recall(single, data, queries, 10);
  const double r2 = mean_recall(two_phase, data, queries, 10);
  const double r3 = mean_recall(shuffled, data, queries, 10);
  const double gap = std::max(std::abs(r1 - r2), std::abs(r1 - r3));
  return {gap <= 0.03 && two_phase.live_count() == 10000 && shuffled.live_count() == 10000,
          fmt("single-phase %.4f, 5k+5k via snapshot %.4f (shuffled second half %.4f), max gap %.4f",
              r1, r2, r3, gap)};
}

Outcome mmr_check() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t size = 2 + rng() % 40;
    const auto query = random_unit(rng, 16);
    std::vector<Candidate> candidates;
    std::map<std::string, EmbeddingVector> vectors;
    std::map<std::string, CaseMetadata> meta;
    CorpusStats stats;
    for (std::size_t i = 0; i < size; ++i) {
      const auto id = node_id(rng() % 100000) + "-" + std::to_string(i);
      auto v = random_unit(rng, 16);
      // Every fifth candidate duplicates an earlier vector to force ties.
      if (i >= 5 && i % 5 == 0) v = vectors.begin()->second;
      candidates.push_back({id, cosine_similarity(query, v)});
      vectors.emplace(id, v);
      CaseMetadata m;
      m.timestamp = parse_iso_date("2010-01-01") + std::chrono::days(rng() % 5000);
      m.citation_count = std::int64_t(rng() % 50);
      stats.max_citation_count = std::max(stats.max_citation_count, m.citation_count);
      meta[id] = m;
    }
    RetrievalOptions opts;
    opts.now = parse_iso_date("2024-06-01");
    opts.weights = {u(rng) + 0.01, u(rng), u(rng), u(rng), 1825};
    opts.lambda = 1.0;
    const auto ranked = rerank(candidates, [&](const std::string& id) {
      return std::optional<CaseMetadata>(meta.at(id));
    }, stats, opts);
    std::vector<EmbeddingVector> vecs;
    for (const auto& r : ranked) vecs.push_back(vectors.at(r.id));
    const std::size_t n = 1 + rng() % size;
    const auto picked = apply_mmr(ranked, vecs, n, 1.0);

    // Expected: relevance order, ties broken by ascending id.
    auto expected = ranked;
    std::stable_sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
      return a.final_score != b.final_score ? a.final_score > b.final_score : a.id < b.id;
    });
    bool same = picked.size() == n;
    for (std::size_t i = 0; same && i < n; ++i) same = picked[i].id == expected[i].id;
    agree += same;
  }
  const double sim[3][3] = {{1, 0.95, 0.1}, {0.95, 1, 0.1}, {0.1, 0.1, 1}};
  const auto worked = mmr_select({"A", "B", "C"}, {0.9, 0.85, 0.5},
                                 [&](std::size_t i, std::size_t j) { return sim[i][j]; }, 2, 0.5);
  const bool ac = worked == std::vector<std::size_t>{0, 2};
  return {agree == 100 && ac,
          fmt("%d/100 pools equal relevance top-N at lambda=1, worked example %s", agree,
              ac ? "[A,C]" : "WRONG")};
}

Outcome rerank_monotonicity_check() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  int violations = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t size = 2 + rng() % 30;
    std::vector<Candidate> candidates;
    std::map<std::string, CaseMetadata> meta;
    CorpusStats stats;
    for (std::size_t i = 0; i < size; ++i) {
      const auto id = node_id(i);
      candidates.push_back({id, u(rng)});
      CaseMetadata m;
      m.timestamp = parse_iso_date("2012-01-01") + std::chrono::days(rng() % 4000);
      m.citation_count = std::int64_t(rng() % 500);
      if (rng() % 2) m.jurisdiction = rng() % 2 ? "US.NY" : "US";
      stats.max_citation_count = std::max(stats.max_citation_count, m.citation_count);
      meta[id] = m;
    }
    RetrievalOptions opts;
    opts.now = parse_iso_date("2024-06-01");
    opts.query_jurisdiction = "US.NY";
    opts.weights = {(rng() % 10) / 10.0, (rng() % 10) / 10.0, 0.05 + (rng() % 10) / 10.0,
                    (rng() % 10) / 10.0, 1825};
    const auto target = node_id(rng() % size);
    auto rank_of = [&] {
      const auto ranked = rerank(candidates, [&](const std::string& id) {
        return std::optional<CaseMetadata>(meta.at(id));
      }, stats, opts);
      for (const auto& r : ranked) {
        if (r.id == target) return r.rank;
      }
      return -1;
    };
    const int before = rank_of();
    meta[target].citation_count += 1 + std::int64_t(rng() % 1000);
    stats.max_citation_count = std::max(stats.max_citation_count, meta[target].citation_count);
    violations += rank_of() > before;
  }
  return {violations == 0, fmt("%d rank drops over 500 perturbations", violations)};
}

// ---------------------------------------------------------------------------

struct Fixture {
  CorpusStore store;
  ReferenceEncoder encoder{128};
  HnswIndex index{128};

  Fixture() {
    for (const auto& d : read_corpus_file(fixture("corpus20.jsonl"))) {
      store.put_case(d, PutMode::kInsert);
      index.insert(d.id, encoder.encode(d.title + "\n" + d.body));
    }
  }
};

Outcome grounding_check() {
  Fixture f;
  const std::vector<std::string> queries{"chest pain troponin", "pneumonia antibiotics",
                                         "wrongful dismissal of an employee",
                                         "unlawful search of a vehicle", "diabetes insulin"};
  int reports = 0, leaked = 0, injected = 0, handled = 0;
  for (const auto& query : queries) {
    InsightOptions opts;
    opts.retrieval.now = parse_iso_date("2024-01-01");
    opts.retrieval.n = 4;
    const auto top = retrieve_cases(query, opts.retrieval, f.index, f.store, f.encoder);
    std::set<std::string> retrieved;
    std::vector<CaseDocument> evidence;
    for (const auto& r : top.results) {
      retrieved.insert(r.id);
      evidence.push_back(f.store.get_case(r.id));
    }
    std::string outsider;  // a real case that was not retrieved
    for (const auto& id : f.store.list_ids()) {
      if (!retrieved.count(id)) outsider = id;
    }
    const auto first = *retrieved.begin();
    const auto real = split_sentences(evidence.front().body).front();
    const auto real_cited = real.substr(0, real.size() - 1) + " " +
                            citation_marker(evidence.front().id) + ".";

    // Each script is a sequence of drafts; the fabricated citations it
    // contains must never survive into a final report.
    const std::vector<std::vector<std::string>> scripts{
        {"The patient was cured by moonlight [CASE:fake-1]. Aliens performed surgery "
         "[CASE:fake-2]."},
        {real_cited + " The court awarded a yacht [CASE:" + outsider + "]."},
        {"Gravity was suspended for the trial [CASE:" + first + "]. " + real_cited,
         "Gravity was suspended again [CASE:ghost-7]."},
        {"Invented ruling [CASE:zz-1].", "Invented ruling two [CASE:zz-2].",
         "Invented ruling three [CASE:zz-3]."},
        {real_cited},
    };
    for (const auto& script : scripts) {
      std::vector<std::optional<std::string>> responses(script.begin(), script.end());
      ScriptedBackend backend(responses);
      const auto report = generate_insights(query, opts, {f.index, f.store, f.encoder, backend});
      ++reports;
      std::set<std::string> final_retrieved;
      for (const auto& r : report.retrieval) final_retrieved.insert(r.id);
      for (const auto& id : citation_ids(report.text)) leaked += !final_retrieved.count(id);
      for (const auto& id : report.citations) leaked += !final_retrieved.count(id);

      // Every draft the backend produced: each fabricated claim must be
      // flagged by the checker and absent from the final text.
      const std::size_t drafts = std::min(backend.calls(), script.size());
      for (std::size_t d = 0; d < drafts; ++d) {
        const auto checked = fact_check(script[d], evidence, opts.refine.threshold);
        for (const auto& claim : checked.claim_verdicts) {
          const bool fabricated_citation = std::any_of(
              claim.cited_ids.begin(), claim.cited_ids.end(),
              [&](const std::string& id) { return !retrieved.count(id); });
          const bool fabricated_content = claim.sentence.find("Gravity") != std::string::npos;
          if (!fabricated_citation && !fabricated_content) continue;
          ++injected;
          handled += !claim.verified && report.text.find(claim.sentence) == std::string::npos;
        }
      }
    }
  }
  return {leaked == 0 && injected > 0 && handled == injected,
          fmt("%d reports, %d non-retrieved citations in output, %d/%d fabrications flagged "
              "and removed",
              reports, leaked, handled, injected)};
}

// ---------------------------------------------------------------------------

std::string run(const std::string& cmd, int* status) {
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = fread(buf.data(), 1, buf.size(), pipe)) > 0;) out.append(buf.data(), n);
  const int raw = pclose(pipe);
  *status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

std::string transcript() {
  TempDir dir;
  const std::string cli = std::string(CASEGPT_CLI) + " --store " + (dir / "s.jsonl").string() +
                          " --index " + (dir / "i.hnsw").string() +
                          " --seed 7 --set encoder.dim=128 --set retrieval.now=2024-01-01 ";
  const std::vector<std::string> steps{
      "ingest --corpus " + fixture("corpus20.jsonl").string(),
      "build-index",
      "--json search 'chest pain troponin'",
      "--json --n 5 --lambda 0.5 search 'wrongful dismissal' --jurisdiction US-CA",
      "--json insight 'chest pain troponin' --script " + fixture("script_grounded.json").string(),
      "--json insight pneumonia --script " + fixture("script_fabricating.json").string(),
      "--json eval --at 5 --queries " + fixture("judgments_corpus20.jsonl").string() +
          " | grep -v seconds"};
  std::string all;
  for (const auto& step : steps) {
    int status = 0;
    auto out = run(cli + step + " 2>&1", &status);
    if (step == "build-index") out = std::to_string(status) + "\n";  // echoes temp paths
    all += "$ " + step.substr(0, step.find(" /")) + "\n" + out + "status " +
           std::to_string(status) + "\n";
  }
  return all;
}

Outcome determinism_check() {
  const auto a = transcript();
  const auto b = transcript();
  const auto digest = stable_hash64(a);
  const bool ok = a == b && a.find("status 0") != std::string::npos &&
                  a.find("error [") == std::string::npos;
  if (std::getenv("CASEGPT_PRINT_TRANSCRIPT")) std::fputs(a.c_str(), stderr);
  return {ok && digest == kGoldenDigest,
          fmt("two process runs %s (%zu bytes), digest %016llx %s golden", a == b ? "identical" : "DIFFER",
              a.size(), (unsigned long long)digest, digest == kGoldenDigest ? "matches" : "differs from")};
}

// ---------------------------------------------------------------------------

std::string synthetic_text(std::mt19937_64& rng, const std::vector<std::string>& words,
                           std::size_t n) {
  // Zipf-like: squaring a uniform draw favours the head of the vocabulary.
  std::uniform_real_distribution<double> u(0, 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng);
    s += (i ? " " : "") + words[std::size_t(x * x * double(words.size()))];
  }
  return s + ".";
}

Outcome latency_check() {
  const auto start = Clock::now();
  std::mt19937_64 rng(11);
  const char* syllables[] = {"ka", "ro", "ti", "sen", "mu", "dal", "pe", "vor", "lin", "gas",
                             "tru", "bo", "nex", "qui", "fa", "zel"};
  std::vector<std::string> words;
  for (int i = 0; i < 4000; ++i) {
    std::string w;
    for (int s = 0, len = 2 + int(rng() % 3); s < len; ++s) w += syllables[rng() % 16];
    words.push_back(w);
  }
  constexpr std::size_t kDocs = 100000;
  CorpusStore store;
  ReferenceEncoder encoder(256);
  HnswIndex index(256);
  for (std::size_t i = 0; i < kDocs; ++i) {
    CaseDocument d;
    d.id = fmt("syn-%06zu", i);
    d.domain = i % 2 ? Domain::kLegal : Domain::kMedical;
    d.body = synthetic_text(rng, words, 20 + rng() % 30);
    d.timestamp = parse_iso_date("2000-01-01") + std::chrono::days(rng() % 8000);
    d.citation_count = std::int64_t(rng() % 300);
    if (rng() % 2) d.jurisdiction = rng() % 2 ? "US-CA" : "UK-ENG";
    index.insert(d.id, encoder.encode(d.body));
    store.put_case(std::move(d), PutMode::kInsert);
  }
  const double build = seconds_since(start);

  RetrievalOptions opts;
  opts.now = parse_iso_date("2024-01-01");
  opts.ef_search = 100;
  std::vector<double> ms;
  for (int q = 0; q < 205; ++q) {
    const auto text = synthetic_text(rng, words, 3 + rng() % 6);
    const auto t0 = Clock::now();
    const auto r = retrieve_cases(text, opts, index, store, encoder);
    const double elapsed = seconds_since(t0) * 1000.0;
    if (q >= 5 && !r.results.empty()) ms.push_back(elapsed);  // first five warm caches
  }
  const double p95 = percentile(ms, 95);
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / double(ms.size());
  return {ms.size() == 200 && p95 < 100.0,
          fmt("p95 %.2f ms, mean %.2f ms over %zu queries (100k docs, dim 256, build %.0f s)", p95,
              mean, ms.size(), build)};
}

Outcome snapshot_check() {
  const auto data = random_units(12, 500, 32);
  const auto queries = random_units(13, 20, 32);
  HnswIndex index(32);
  for (std::size_t i = 0; i < data.size(); ++i) index.insert(node_id(i), data[i]);
  index.tombstone(node_id(17));
  TempDir dir;
  index.save_snapshot(dir / "snap.hnsw");
  const auto loaded = HnswIndex::load_snapshot(dir / "snap.hnsw");
  int same = 0;
  for (const auto& q : queries) same += index.search(q, 10) == loaded.search(q, 10);
  // Both copies must also keep growing identically.
  auto a = HnswIndex::load_snapshot(dir / "snap.hnsw");
  auto b = HnswIndex::load_snapshot(dir / "snap.hnsw");
  const auto extra = random_units(14, 50, 32);
  for (std::size_t i = 0; i < extra.size(); ++i) {
    a.insert("x" + std::to_string(i), extra[i]);
    b.insert("x" + std::to_string(i), extra[i]);
  }
  int same_after = 0;
  for (const auto& q : queries) same_after += a.search(q, 10) == b.search(q, 10);
  return {same == 20 && same_after == 20,
          fmt("%d/20 queries identical after reload, %d/20 after further inserts", same,
              same_after)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"metric-oracle", metric_oracle_check},
      {"ann-recall", ann_recall_check},
      {"incremental-update", incremental_check},
      {"mmr-degeneracy", mmr_check},
      {"rerank-monotonicity", rerank_monotonicity_check},
      {"grounding-soundness", grounding_check},
      {"determinism", determinism_check},
      {"latency-p95", latency_check},
      {"snapshot-round-trip", snapshot_check},
  };
  const std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, check] : checks) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-20s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
