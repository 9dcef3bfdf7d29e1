#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "casegpt/corpus.hpp"
#include "casegpt/encoder.hpp"
#include "casegpt/hnsw.hpp"
#include "casegpt/ranker.hpp"

namespace casegpt {

// ---------------------------------------------------------------------------
// Text utilities

/// Splits at . ? ! followed by whitespace and an uppercase letter or digit.
/// Citation markers directly after the terminator stay with the sentence
/// they follow; common legal/medical abbreviations never end a sentence.
std::vector<std::string> split_sentences(std::string_view text);

/// Whitespace-delimited token count.
std::size_t estimate_tokens(std::string_view text);

/// Lowercased word tokens minus stopwords, with citation markers removed.
std::set<std::string> content_words(std::string_view text);

bool is_stopword(std::string_view word);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

/// Case ids referenced as [CASE:<id>] in order of first appearance.
std::vector<std::string> citation_ids(std::string_view text);
std::string citation_marker(std::string_view case_id);

// ---------------------------------------------------------------------------
// Query expansion

/// Document frequency of every non-stopword token across the corpus.
struct TermVocabulary {
  std::map<std::string, std::size_t> document_frequency;
};

TermVocabulary build_vocabulary(const CorpusStore& store);

/// The m terms with document frequency >= 2 that are not query tokens and
/// are most similar to the whole-query embedding; ties lexicographic.
std::vector<std::string> expand_query(const std::string& query,
                                      const TermVocabulary& vocabulary,
                                      const EncoderBackend& encoder, std::size_t m);
std::vector<std::string> expand_query(const std::string& query,
                                      const CorpusStore& store,
                                      const EncoderBackend& encoder, std::size_t m);

// ---------------------------------------------------------------------------
// Context aggregation

struct RetrievedCase {
  RankedResult result;
  CaseDocument document;
};

struct SelectedSentence {
  std::size_t index = 0;  // position in the case body
  std::string text;
};

struct CaseExtract {
  std::string case_id;
  int rank = 0;
  double weight = 0.0;
  std::vector<SelectedSentence> sentences;  // body order
};

struct ContextBundle {
  std::string query;
  std::vector<std::string> expanded_terms;
  std::vector<CaseExtract> extracts;  // rank order
  std::size_t token_budget = 0;
  std::size_t token_estimate = 0;
};

struct ContextOptions {
  std::size_t token_budget = 2048;
  double temperature = 0.5;
  /// Total sentences to distribute across cases; unset means every sentence
  /// of every retrieved case (subject to the token budget).
  std::optional<std::size_t> sentence_budget;
};

inline constexpr std::size_t kMinTokenBudget = 32;

/// Softmax over final_score / temperature.
std::vector<double> case_weights(const std::vector<RetrievedCase>& cases,
                                 double temperature);

/// Largest-remainder apportionment of `total` seats by weight, respecting
/// per-case capacities.
std::vector<std::size_t> allocate_sentences(const std::vector<double>& weights,
                                            const std::vector<std::size_t>& capacity,
                                            std::size_t total);

ContextBundle aggregate_context(const std::string& query,
                                const std::vector<RetrievedCase>& retrieved,
                                const ContextOptions& options,
                                const EncoderBackend& encoder,
                                std::vector<std::string> expanded_terms = {});

// ---------------------------------------------------------------------------
// Prompts

/// Throws UnknownTemplate.
std::string construct_prompt(const ContextBundle& bundle,
                             const std::string& template_id = "default",
                             const std::vector<std::string>& corrections = {});

/// Prompt tokens that do not depend on the bundle, for a template.
std::size_t template_overhead(const std::string& template_id);

std::vector<std::string> registered_templates();

// ---------------------------------------------------------------------------
// Generation backends

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;
  /// Throws Error(kBackendUnavailable) on timeout or transport failure.
  virtual std::string generate(const std::string& prompt, std::size_t max_tokens,
                               double temperature) = 0;
};

/// Replays fixture responses by request ordinal. A null entry simulates a
/// backend timeout. Requests past the end reuse the last entry.
class ScriptedBackend final : public GenerationBackend {
 public:
  explicit ScriptedBackend(std::vector<std::optional<std::string>> responses);
  /// Fixture file: {"responses": ["text", {"error": "timeout"}, ...]}.
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  std::string name() const override { return "scripted"; }
  bool deterministic() const override { return true; }
  std::string generate(const std::string& prompt, std::size_t max_tokens,
                       double temperature) override;

  std::vector<std::string> prompts() const;
  std::size_t calls() const;

 private:
  std::vector<std::optional<std::string>> responses_;
  mutable std::mutex mutex_;
  std::vector<std::string> prompts_;
};

struct RemoteGeneratorConfig {
  std::string url;
  std::string model = "generator";
  std::string auth_token;
  double timeout_seconds = 30.0;
  int max_retries = 1;
};

/// HTTP client: POST {model, prompt, max_tokens, temperature} -> {text}.
class RemoteGenerator final : public GenerationBackend {
 public:
  explicit RemoteGenerator(RemoteGeneratorConfig config);
  std::string name() const override { return "remote"; }
  bool deterministic() const override { return false; }
  std::string generate(const std::string& prompt, std::size_t max_tokens,
                       double temperature) override;

 private:
  RemoteGeneratorConfig config_;
};

// ---------------------------------------------------------------------------
// Fact checking and refinement

enum class GroundingStatus { kGrounded, kPartiallyGrounded, kFailed };
std::string_view grounding_status_name(GroundingStatus s);

struct ClaimVerdict {
  std::string sentence;
  bool verified = false;
  bool stripped = false;
  std::vector<std::string> cited_ids;
  std::vector<std::string> unknown_citations;  // cited but not retrieved
  std::optional<std::string> best_case_id;
  double overlap = 0.0;
};

struct InsightReport {
  std::string text;
  std::vector<std::string> citations;
  std::vector<ClaimVerdict> claim_verdicts;
  std::vector<std::string> stripped_sentences;
  int refinement_rounds_used = 0;
  GroundingStatus status = GroundingStatus::kFailed;
  std::vector<RankedResult> retrieval;
  StageTimings retrieval_timings;
  std::optional<std::string> error;
};

/// Width of the evidence windows: runs of 1..3 consecutive sentences.
inline constexpr std::size_t kEvidenceWindow = 3;

InsightReport fact_check(const std::string& text,
                         const std::vector<CaseDocument>& retrieved,
                         double threshold);

/// Removes unverified sentences from the text, keeping their verdicts.
void strip_unverified(InsightReport& report);

struct RefineOptions {
  int max_rounds = 2;
  double threshold = 0.2;
  std::string template_id = "default";
  std::size_t max_tokens = 512;
  double temperature = 0.0;
  std::size_t context_limit = 2048;  // cap on prompt tokens incl. corrections
};

/// Re-prompts with a correction list until grounded or out of rounds.
/// Backend errors propagate.
InsightReport iterative_refine(const InsightReport& initial, const ContextBundle& bundle,
                               GenerationBackend& backend,
                               const std::vector<CaseDocument>& retrieved,
                               const RefineOptions& options);

struct InsightOptions {
  RetrievalOptions retrieval;
  std::size_t context_limit = 2048;
  double temperature = 0.5;   // context weighting softmax
  std::size_t expansion_terms = 5;
  std::optional<std::size_t> sentence_budget;
  RefineOptions refine;
};

struct InsightDeps {
  const HnswIndex& index;
  const CorpusStore& store;
  const EncoderBackend& encoder;
  GenerationBackend& generator;
  const TermVocabulary* vocabulary = nullptr;  // built on demand when null
};

/// Retrieval, context, prompt, generation, fact check and refinement.
/// Backend failures yield a failed report that still carries the retrieval.
InsightReport generate_insights(const std::string& query, const InsightOptions& options,
                                const InsightDeps& deps);

}  // namespace casegpt
