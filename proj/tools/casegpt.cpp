// casegpt command-line front end.
#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <pthread.h>

#include "casegpt/evalkit.hpp"
#include "casegpt/service.hpp"

using namespace casegpt;
using nlohmann::json;

namespace {

struct GlobalFlags {
  std::string config_file;
  std::string store;
  std::string index;
  std::optional<std::size_t> n;
  std::optional<std::size_t> k;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // section.key=value
  bool json = false;
};

ServiceConfig resolve_config(const GlobalFlags& g) {
  auto config = ServiceConfig::load(
      g.config_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(g.config_file));
  if (!g.store.empty()) config.store_path = g.store;
  if (!g.index.empty()) config.index_path = g.index;
  if (g.n) config.retrieval.n = *g.n;
  if (g.k) config.retrieval.k = *g.k;
  if (g.lambda) config.retrieval.lambda = *g.lambda;
  if (g.seed) config.hnsw.rng_seed = *g.seed;
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfigError, "--set expects section.key=value, got '" + kv + "'");
    }
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  // Out-of-range flags surface as InvalidParams rather than ConfigError.
  config.retrieval.validate();
  config.validate();
  return config;
}

void print_results(const RetrievalResult& r) {
  std::printf("%-4s %-24s %10s %8s %8s %8s %8s\n", "rank", "id", "score", "cosine",
              "recency", "citation", "juris");
  for (const auto& x : r.results) {
    std::printf("%-4d %-24s %10.6f %8.4f %8.4f %8.4f %8.4f\n", x.rank, x.id.c_str(),
                x.final_score, x.cosine, x.factors.recency, x.factors.citation,
                x.factors.jurisdiction);
  }
  std::printf("(%.2f ms)\n", r.timings.total_ms);
}

void print_report(const InsightReport& r) {
  std::printf("%s\n\nstatus: %s, refinement rounds: %d\n", r.text.c_str(),
              std::string(grounding_status_name(r.status)).c_str(), r.refinement_rounds_used);
  if (r.error) std::printf("error: %s\n", r.error->c_str());
  for (const auto& v : r.claim_verdicts) {
    std::printf("  [%s] %.3f %s\n", v.stripped ? "stripped" : v.verified ? "ok" : "unverified",
                v.overlap, v.sentence.c_str());
  }
  std::printf("retrieved:");
  for (const auto& x : r.retrieval) std::printf(" %s", x.id.c_str());
  std::printf("\n");
}

int serve(CaseService& service, const std::string& host, int port) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  HttpGateway gateway(service);
  const int bound = gateway.start(host, port);
  std::fprintf(stderr, "casegpt %s listening on %s:%d\n", kVersion, host.c_str(), bound);
  int sig = 0;
  sigwait(&set, &sig);
  std::fprintf(stderr, "shutting down\n");
  gateway.stop();
  service.save_index();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Case retrieval and grounded insight generation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--config", g.config_file, "Key-value config file")->check(CLI::ExistingFile);
  app.add_option("--store", g.store, "Document store log");
  app.add_option("--index", g.index, "Index snapshot path");
  app.add_option("--n", g.n, "Results to return");
  app.add_option("--k", g.k, "ANN candidate pool size");
  app.add_option("--lambda", g.lambda, "MMR trade-off in [0,1]");
  app.add_option("--seed", g.seed, "Seed for index construction and query generation");
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");
  app.add_flag("--json", g.json, "Machine-readable output");

  auto* ingest = app.add_subcommand("ingest", "Load a JSONL corpus into the store");
  std::string corpus;
  bool upsert = false;
  ingest->add_option("--corpus", corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  ingest->add_flag("--upsert", upsert, "Replace existing ids instead of failing");

  auto* build = app.add_subcommand("build-index", "Embed new or changed cases and save the index");
  auto* compact = app.add_subcommand("compact", "Rebuild the index without tombstones");

  std::string query;
  std::string jurisdiction;
  auto* search = app.add_subcommand("search", "Run one retrieval query");
  search->add_option("query", query, "Query text")->required();
  search->add_option("--jurisdiction", jurisdiction, "Query jurisdiction code");

  auto* insight = app.add_subcommand("insight", "Generate a grounded insight report");
  std::string script;
  insight->add_option("query", query, "Query text")->required();
  insight->add_option("--jurisdiction", jurisdiction, "Query jurisdiction code");
  insight->add_option("--script", script, "Scripted generation responses (JSON)");

  auto* eval = app.add_subcommand("eval", "Benchmark retrieval against judgments");
  std::string queries_file, out_file, save_queries;
  std::size_t generate = 0;
  std::size_t eval_k = 10;
  bool parallel = false;
  auto* qopt = eval->add_option("--queries", queries_file, "Judgments JSONL")
                   ->check(CLI::ExistingFile);
  auto* gopt = eval->add_option("--generate", generate, "Generate N held-out queries");
  qopt->excludes(gopt);
  eval->add_option("--at", eval_k, "Metric cutoff k")->capture_default_str();
  eval->add_flag("--parallel", parallel, "Run queries concurrently (no latency figures)");
  eval->add_option("--out", out_file, "Write the JSON report here");
  eval->add_option("--save-queries", save_queries, "Write generated judgments here");

  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP API");
  std::string host;
  int port = -1;
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--port", port, "Listen port");

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = resolve_config(g);
    if (!jurisdiction.empty()) config.retrieval.query_jurisdiction = jurisdiction;
    if (!script.empty()) {
      config.generator_backend = "scripted";
      config.generator_script = script;
    }
    CaseService service(config);

    if (*ingest) {
      const auto s = service.ingest_file(corpus, upsert ? PutMode::kUpsert : PutMode::kInsert);
      if (g.json) {
        std::cout << json{{"read", s.read}, {"inserted", s.inserted}, {"replaced", s.replaced}}
                  << "\n";
      } else {
        std::printf("ingested %zu cases (%zu new, %zu replaced)\n", s.read, s.inserted,
                    s.replaced);
      }
    } else if (*build || *compact) {
      const auto s = *build ? service.build_index() : service.compact();
      if (g.json) {
        std::cout << json{{"inserted", s.inserted}, {"reindexed", s.reindexed}, {"live", s.live}}
                  << "\n";
      } else {
        std::printf("index: %zu live (%zu embedded, %zu re-embedded) -> %s\n", s.live,
                    s.inserted, s.reindexed, config.index_path.c_str());
      }
    } else if (*search) {
      if (g.json) {
        std::cout << service.search_json(query, config.retrieval, false).dump(2) << "\n";
      } else {
        print_results(service.search(query, config.retrieval));
      }
    } else if (*insight) {
      InsightOptions opts = config.insight;
      opts.retrieval = config.retrieval;
      const auto report = service.insight(query, opts);
      if (g.json) {
        auto j = to_json(report);
        j.erase("retrieval_timings");
        std::cout << j.dump(2) << "\n";
      } else {
        print_report(report);
      }
      if (report.error) return exit_code_for(ErrorCode::kBackendUnavailable);
    } else if (*eval) {
      JudgmentSet judgments;
      if (!queries_file.empty()) {
        judgments = read_judgments(queries_file);
      } else if (generate > 0) {
        judgments = generate_queryset(service.store(), generate, g.seed.value_or(42));
        if (!save_queries.empty()) write_judgments(save_queries, judgments);
      } else {
        throw Error(ErrorCode::kConfigError, "eval needs --queries or --generate");
      }
      validate_judgments(judgments, service.store());
      auto index = service.index();
      if (!index) throw Error(ErrorCode::kEmptyIndex, "index not built; run build-index first");
      BenchmarkOptions bopts;
      bopts.k = eval_k;
      bopts.parallel = parallel;
      const auto report = run_benchmark(judgments, config.retrieval, bopts, *index,
                                        service.store(), service.encoder());
      const auto j = report_to_json(report);
      if (!out_file.empty()) {
        std::ofstream out(out_file);
        if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + out_file);
        out << j.dump(2) << "\n";
      }
      if (g.json) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << format_report_table({report});
      }
      if (report.partial) return exit_code_for(ErrorCode::kBackendUnavailable);
    } else if (*serve_cmd) {
      return serve(service, host.empty() ? config.host : host, port < 0 ? config.port : port);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(error_code_name(e.code())).c_str(),
                 e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
