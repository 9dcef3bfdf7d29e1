#include "casegpt/insight.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <regex>

#include <nlohmann/json.hpp>

#include "casegpt/error.hpp"

namespace casegpt {

namespace {

constexpr std::string_view kMarkerPrefix = "[CASE:";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool starts_sentence(std::string_view text, std::size_t pos) {
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  auto i = static_cast<int32_t>(pos);
  UChar32 c;
  U8_NEXT(bytes, i, static_cast<int32_t>(text.size()), c);
  return c >= 0 && (u_isupper(c) || u_isdigit(c));
}

bool is_abbreviation(std::string_view word) {
  static const std::set<std::string_view> kAbbrev{
      "v.",    "vs.",  "No.",  "no.",  "Dr.", "e.g.", "i.e.", "Mr.",  "Mrs.",
      "Ms.",   "St.",  "Fig.", "al.",  "Inc.", "Co.", "Ltd.", "Jr.",  "Sr.",
      "approx.", "cf.", "Art.", "Sec.", "art.", "sec.", "para.", "U.S.", "Corp."};
  return kAbbrev.count(word) > 0;
}

}  // namespace

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  const std::size_t n = text.size();
  std::size_t start = 0;
  auto emit = [&](std::size_t from, std::size_t to) {
    auto s = trim(text.substr(from, to - from));
    if (!s.empty()) out.emplace_back(s);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const char c = text[i];
    if (c != '.' && c != '?' && c != '!') continue;
    if (c == '.') {
      std::size_t w = i;
      while (w > start && !is_space(text[w - 1])) --w;
      if (is_abbreviation(text.substr(w, i + 1 - w))) continue;
    }
    std::size_t j = i + 1;
    while (j < n && (text[j] == '"' || text[j] == '\'' || text[j] == ')')) ++j;
    if (j >= n || !is_space(text[j])) continue;
    std::size_t end = j;
    std::size_t k = j;
    while (k < n && is_space(text[k])) ++k;
    // Citation markers trailing the terminator belong to this sentence.
    while (text.substr(k, kMarkerPrefix.size()) == kMarkerPrefix) {
      const auto close = text.find(']', k);
      if (close == std::string_view::npos) break;
      end = close + 1;
      k = end;
      while (k < n && is_space(text[k])) ++k;
    }
    if (k >= n) break;
    if (!starts_sentence(text, k)) continue;
    emit(start, end);
    start = k;
    i = k - 1;
  }
  if (start < n) emit(start, n);
  return out;
}

std::size_t estimate_tokens(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

bool is_stopword(std::string_view word) {
  static const std::set<std::string_view> kStop{
      "a",     "about", "after", "all",   "also",  "an",    "and",   "any",   "are",
      "as",    "at",    "be",    "been",  "before", "being", "between", "both", "but",
      "by",    "can",   "could", "did",   "do",    "does",  "during", "each",  "for",
      "from",  "had",   "has",   "have",  "he",    "her",   "his",   "how",   "i",
      "if",    "in",    "into",  "is",    "it",    "its",   "may",   "more",  "most",
      "no",    "not",   "of",    "on",    "or",    "other", "our",   "she",   "should",
      "so",    "such",  "than",  "that",  "the",   "their", "them",  "then",  "there",
      "these", "they",  "this",  "those", "through", "to",  "under", "up",    "was",
      "we",    "were",  "what",  "when",  "where", "which", "while", "who",   "whom",
      "will",  "with",  "would", "you",   "your"};
  return kStop.count(word) > 0;
}

std::set<std::string> content_words(std::string_view text) {
  static const std::regex kMarker(R"(\[CASE:[^\]\s]*\])");
  const std::string stripped = std::regex_replace(std::string(text), kMarker, " ");
  std::set<std::string> out;
  for (auto& w : word_tokens(stripped)) {
    if (!is_stopword(w)) out.insert(std::move(w));
  }
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& w : a) common += b.count(w);
  return double(common) / double(a.size() + b.size() - common);
}

std::vector<std::string> citation_ids(std::string_view text) {
  static const std::regex kMarker(R"(\[CASE:([^\]\s]+)\])");
  std::vector<std::string> ids;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kMarker);
       it != std::sregex_iterator(); ++it) {
    std::string id = (*it)[1].str();
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(std::move(id));
  }
  return ids;
}

std::string citation_marker(std::string_view case_id) {
  return std::string(kMarkerPrefix) + std::string(case_id) + "]";
}

// ---------------------------------------------------------------------------
// Query expansion

TermVocabulary build_vocabulary(const CorpusStore& store) {
  TermVocabulary vocab;
  store.for_each([&](const CaseDocument& doc) {
    std::set<std::string> seen;
    for (auto& w : word_tokens(doc.title + " " + doc.body)) {
      if (!is_stopword(w)) seen.insert(std::move(w));
    }
    for (const auto& w : seen) ++vocab.document_frequency[w];
  });
  return vocab;
}

std::vector<std::string> expand_query(const std::string& query,
                                      const TermVocabulary& vocabulary,
                                      const EncoderBackend& encoder, std::size_t m) {
  if (m == 0 || vocabulary.document_frequency.empty()) return {};
  const auto query_tokens = word_tokens(query);
  if (query_tokens.empty()) return {};
  const std::set<std::string> exclude(query_tokens.begin(), query_tokens.end());
  const auto qv = encoder.encode(query);

  std::vector<std::pair<double, std::string>> scored;
  for (const auto& [term, df] : vocabulary.document_frequency) {
    if (df < 2 || exclude.count(term)) continue;
    scored.emplace_back(cosine_similarity(encoder.encode(term), qv), term);
  }
  const std::size_t take = std::min(m, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<std::string> expand_query(const std::string& query,
                                      const CorpusStore& store,
                                      const EncoderBackend& encoder, std::size_t m) {
  if (m == 0) return {};
  return expand_query(query, build_vocabulary(store), encoder, m);
}

// ---------------------------------------------------------------------------
// Context aggregation

std::vector<double> case_weights(const std::vector<RetrievedCase>& cases,
                                 double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidParams, "context temperature must be positive");
  }
  std::vector<double> w(cases.size());
  if (cases.empty()) return w;
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& c : cases) top = std::max(top, c.result.final_score / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    w[i] = std::exp(cases[i].result.final_score / temperature - top);
    sum += w[i];
  }
  for (auto& x : w) x /= sum;
  return w;
}

std::vector<std::size_t> allocate_sentences(const std::vector<double>& weights,
                                            const std::vector<std::size_t>& capacity,
                                            std::size_t total) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> seats(n, 0);
  total = std::min(total, std::accumulate(capacity.begin(), capacity.end(), std::size_t{0}));
  std::vector<double> remainder(n, 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double quota = weights[i] * double(total);
    seats[i] = std::min(capacity[i], static_cast<std::size_t>(std::floor(quota)));
    remainder[i] = quota - std::floor(quota);
    assigned += seats[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    if (weights[a] != weights[b]) return weights[a] > weights[b];
    return a < b;
  });
  for (std::size_t i : order) {
    if (assigned == total) break;
    if (seats[i] < capacity[i]) {
      ++seats[i];
      ++assigned;
    }
  }
  // Seats a full case could not take go to the heaviest cases with room.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return weights[a] > weights[b] || (weights[a] == weights[b] && a < b);
  });
  while (assigned < total) {
    for (std::size_t i : order) {
      if (assigned == total) break;
      if (seats[i] < capacity[i]) {
        ++seats[i];
        ++assigned;
      }
    }
  }
  return seats;
}

ContextBundle aggregate_context(const std::string& query,
                                const std::vector<RetrievedCase>& retrieved,
                                const ContextOptions& options,
                                const EncoderBackend& encoder,
                                std::vector<std::string> expanded_terms) {
  if (retrieved.empty()) throw Error(ErrorCode::kNoCases, "no retrieved cases to aggregate");
  if (options.token_budget < kMinTokenBudget) {
    throw Error(ErrorCode::kBudgetTooSmall,
                "token budget must be at least " + std::to_string(kMinTokenBudget));
  }

  std::vector<RetrievedCase> cases = retrieved;
  std::stable_sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) {
    return a.result.rank < b.result.rank ||
           (a.result.rank == b.result.rank && a.result.id < b.result.id);
  });
  const auto weights = case_weights(cases, options.temperature);
  const auto query_vec = encoder.encode(query);

  struct Scored {
    std::vector<std::string> sentences;
    std::vector<double> similarity;
  };
  std::vector<Scored> scored(cases.size());
  std::vector<std::size_t> capacity(cases.size());
  for (std::size_t c = 0; c < cases.size(); ++c) {
    auto& s = scored[c];
    s.sentences = split_sentences(cases[c].document.body);
    for (const auto& sentence : s.sentences) {
      s.similarity.push_back(word_tokens(sentence).empty()
                                 ? -std::numeric_limits<double>::infinity()
                                 : cosine_similarity(encoder.encode(sentence), query_vec));
    }
    capacity[c] = s.sentences.size();
  }
  const std::size_t total_sentences =
      std::accumulate(capacity.begin(), capacity.end(), std::size_t{0});
  const auto seats = allocate_sentences(
      weights, capacity, options.sentence_budget.value_or(total_sentences));

  // Chosen sentence indices per case, most similar first.
  std::vector<std::vector<std::size_t>> chosen(cases.size());
  for (std::size_t c = 0; c < cases.size(); ++c) {
    std::vector<std::size_t> idx(capacity[c]);
    std::iota(idx.begin(), idx.end(), 0);
    const auto& sim = scored[c].similarity;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    idx.resize(seats[c]);
    chosen[c] = std::move(idx);
  }

  ContextBundle bundle;
  bundle.query = query;
  bundle.expanded_terms = std::move(expanded_terms);
  bundle.token_budget = options.token_budget;
  constexpr std::size_t kCaseHeaderTokens = 3;
  const std::size_t fixed = estimate_tokens(query) + bundle.expanded_terms.size() +
                            kCaseHeaderTokens * cases.size();
  if (fixed > options.token_budget) {
    throw Error(ErrorCode::kBudgetTooSmall,
                "token budget " + std::to_string(options.token_budget) +
                    " cannot hold the query and case headers (" + std::to_string(fixed) + ")");
  }
  std::size_t estimate = fixed;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    for (std::size_t i : chosen[c]) estimate += estimate_tokens(scored[c].sentences[i]);
  }
  // Over budget: drop the least similar sentence of the lightest case.
  while (estimate > options.token_budget) {
    std::optional<std::size_t> victim;
    for (std::size_t c = 0; c < cases.size(); ++c) {
      if (chosen[c].empty()) continue;
      if (!victim || weights[c] <= weights[*victim]) victim = c;
    }
    const std::size_t drop = chosen[*victim].back();
    chosen[*victim].pop_back();
    estimate -= estimate_tokens(scored[*victim].sentences[drop]);
  }
  bundle.token_estimate = estimate;

  for (std::size_t c = 0; c < cases.size(); ++c) {
    CaseExtract extract;
    extract.case_id = cases[c].result.id;
    extract.rank = cases[c].result.rank;
    extract.weight = weights[c];
    std::sort(chosen[c].begin(), chosen[c].end());
    for (std::size_t i : chosen[c]) extract.sentences.push_back({i, scored[c].sentences[i]});
    bundle.extracts.push_back(std::move(extract));
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

struct PromptTemplate {
  std::string instructions;
  std::string output_format;
};

const std::map<std::string, PromptTemplate>& templates() {
  static const std::map<std::string, PromptTemplate> kTemplates{
      {"default",
       {"You are assisting a professional with case-based reasoning. Analyze the "
        "retrieved cases below in light of the query and write a short insight report "
        "with recommendations. Use only facts stated in the retrieved cases.",
        "Write plain sentences. After every factual claim, cite the supporting case "
        "with a marker of the form [CASE:<id>] using ids exactly as listed above. Do "
        "not cite cases that are not listed. Omit any claim you cannot support."}},
      {"brief",
       {"Summarize what the retrieved cases say about the query in at most five "
        "sentences. Use only facts stated in the retrieved cases.",
        "Cite each sentence with [CASE:<id>] markers for the listed cases only."}},
  };
  return kTemplates;
}

}  // namespace

std::vector<std::string> registered_templates() {
  std::vector<std::string> ids;
  for (const auto& [id, _] : templates()) ids.push_back(id);
  return ids;
}

std::string construct_prompt(const ContextBundle& bundle, const std::string& template_id,
                             const std::vector<std::string>& corrections) {
  auto it = templates().find(template_id);
  if (it == templates().end()) {
    throw Error(ErrorCode::kUnknownTemplate, "unknown prompt template '" + template_id + "'");
  }
  const PromptTemplate& t = it->second;
  std::string out;
  out += "### Instructions\n" + t.instructions + "\n\n";
  out += "### Query\nQuery: " + bundle.query + "\n\n";
  out += "### Related terms\nRelated terms:";
  for (std::size_t i = 0; i < bundle.expanded_terms.size(); ++i) {
    out += (i == 0 ? " " : ", ") + bundle.expanded_terms[i];
  }
  out += "\n\n### Retrieved cases\n";
  for (const auto& e : bundle.extracts) {
    char header[64];
    std::snprintf(header, sizeof header, " rank=%d weight=%.4f\n", e.rank, e.weight);
    out += citation_marker(e.case_id) + header;
    for (const auto& s : e.sentences) out += s.text + "\n";
    out += "\n";
  }
  out += "### Output format\n" + t.output_format + "\n";
  if (!corrections.empty()) {
    out += "\n### Corrections\nThe following sentences could not be verified against "
           "the retrieved cases. Revise or remove them:\n";
    for (const auto& c : corrections) out += "- " + c + "\n";
  }
  return out;
}

std::size_t template_overhead(const std::string& template_id) {
  return estimate_tokens(construct_prompt(ContextBundle{}, template_id));
}

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(std::vector<std::optional<std::string>> responses)
    : responses_(std::move(responses)) {
  if (responses_.empty()) {
    throw Error(ErrorCode::kConfigError, "scripted backend needs at least one response");
  }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot open script " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("responses") || !j["responses"].is_array()) {
    throw Error(ErrorCode::kConfigError,
                "script " + path.string() + " must hold a \"responses\" array");
  }
  std::vector<std::optional<std::string>> responses;
  for (const auto& r : j["responses"]) {
    if (r.is_string()) {
      responses.emplace_back(r.get<std::string>());
    } else if (r.is_object() && r.contains("error")) {
      responses.emplace_back(std::nullopt);
    } else {
      throw Error(ErrorCode::kConfigError, "script entries must be strings or {\"error\":...}");
    }
  }
  return std::make_unique<ScriptedBackend>(std::move(responses));
}

std::string ScriptedBackend::generate(const std::string& prompt, std::size_t, double) {
  std::lock_guard lock(mutex_);
  const std::size_t ordinal = prompts_.size();
  prompts_.push_back(prompt);
  const auto& r = responses_[std::min(ordinal, responses_.size() - 1)];
  if (!r) {
    throw Error(ErrorCode::kBackendUnavailable,
                "scripted backend timeout at request " + std::to_string(ordinal));
  }
  return *r;
}

std::vector<std::string> ScriptedBackend::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return prompts_.size();
}

// ---------------------------------------------------------------------------
// Fact checking

std::string_view grounding_status_name(GroundingStatus s) {
  switch (s) {
    case GroundingStatus::kGrounded: return "grounded";
    case GroundingStatus::kPartiallyGrounded: return "partially_grounded";
    case GroundingStatus::kFailed: return "failed";
  }
  return "failed";
}

namespace {

GroundingStatus status_of(const std::vector<ClaimVerdict>& claims) {
  std::size_t verified = 0, live = 0;
  for (const auto& c : claims) {
    if (c.stripped) continue;
    ++live;
    verified += c.verified ? 1 : 0;
  }
  if (live == 0 || verified == 0) return GroundingStatus::kFailed;
  const bool any_stripped = std::any_of(claims.begin(), claims.end(),
                                        [](const auto& c) { return c.stripped; });
  if (verified == live && !any_stripped) return GroundingStatus::kGrounded;
  return GroundingStatus::kPartiallyGrounded;
}

}  // namespace

InsightReport fact_check(const std::string& text, const std::vector<CaseDocument>& retrieved,
                         double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "fact-check threshold must lie in (0, 1]");
  }
  struct Window {
    std::size_t doc;
    std::set<std::string> words;
  };
  std::vector<Window> windows;
  std::set<std::string> retrieved_ids;
  for (std::size_t d = 0; d < retrieved.size(); ++d) {
    retrieved_ids.insert(retrieved[d].id);
    std::vector<std::set<std::string>> sentence_words;
    for (const auto& s : split_sentences(retrieved[d].body)) {
      sentence_words.push_back(content_words(s));
    }
    for (std::size_t start = 0; start < sentence_words.size(); ++start) {
      std::set<std::string> acc;
      for (std::size_t w = 0; w < kEvidenceWindow && start + w < sentence_words.size(); ++w) {
        acc.insert(sentence_words[start + w].begin(), sentence_words[start + w].end());
        windows.push_back({d, acc});
      }
    }
  }

  InsightReport report;
  report.text = std::string(trim(text));
  for (const auto& sentence : split_sentences(text)) {
    ClaimVerdict v;
    v.sentence = sentence;
    v.cited_ids = citation_ids(sentence);
    for (const auto& id : v.cited_ids) {
      if (!retrieved_ids.count(id)) v.unknown_citations.push_back(id);
    }
    const auto words = content_words(sentence);
    for (const auto& w : windows) {
      const double overlap = jaccard(words, w.words);
      if (!v.best_case_id || overlap > v.overlap) {
        v.overlap = overlap;
        v.best_case_id = retrieved[w.doc].id;
      }
    }
    v.verified = v.unknown_citations.empty() && !words.empty() && v.overlap >= threshold;
    report.claim_verdicts.push_back(std::move(v));
  }
  report.citations = citation_ids(report.text);
  report.status = status_of(report.claim_verdicts);
  return report;
}

void strip_unverified(InsightReport& report) {
  std::string text;
  for (auto& c : report.claim_verdicts) {
    if (c.stripped) continue;
    if (!c.verified) {
      c.stripped = true;
      report.stripped_sentences.push_back(c.sentence);
      continue;
    }
    if (!text.empty()) text += " ";
    text += c.sentence;
  }
  report.text = std::move(text);
  report.citations = citation_ids(report.text);
  report.status = status_of(report.claim_verdicts);
}

InsightReport iterative_refine(const InsightReport& initial, const ContextBundle& bundle,
                               GenerationBackend& backend,
                               const std::vector<CaseDocument>& retrieved,
                               const RefineOptions& options) {
  if (options.max_rounds <= 0) return initial;
  InsightReport current = initial;
  int rounds = 0;
  while (rounds < options.max_rounds && current.status != GroundingStatus::kGrounded) {
    const std::size_t base = estimate_tokens(construct_prompt(bundle, options.template_id));
    // Correction header costs a fixed number of tokens; list as many
    // unverified sentences as the context limit allows.
    const std::size_t header =
        estimate_tokens(construct_prompt(bundle, options.template_id, {""})) - base;
    std::size_t used = base + header;
    std::vector<std::string> corrections;
    for (const auto& c : current.claim_verdicts) {
      if (c.verified || c.stripped) continue;
      const std::size_t cost = estimate_tokens(c.sentence);
      if (used + cost > options.context_limit) break;
      used += cost;
      corrections.push_back(c.sentence);
    }
    const std::string prompt = construct_prompt(bundle, options.template_id, corrections);
    const std::string text = backend.generate(prompt, options.max_tokens, options.temperature);
    ++rounds;
    InsightReport next = fact_check(text, retrieved, options.threshold);
    next.retrieval = initial.retrieval;
    next.retrieval_timings = initial.retrieval_timings;
    current = std::move(next);
  }
  current.refinement_rounds_used = rounds;
  if (current.status != GroundingStatus::kGrounded) strip_unverified(current);
  return current;
}

// ---------------------------------------------------------------------------
// Full pipeline

InsightReport generate_insights(const std::string& query, const InsightOptions& options,
                                const InsightDeps& deps) {
  if (deps.store.size() == 0 || deps.index.live_count() == 0) {
    throw Error(ErrorCode::kNoCases, "corpus has no indexed cases");
  }
  auto retrieval = retrieve_cases(query, options.retrieval, deps.index, deps.store,
                                  deps.encoder);
  if (retrieval.results.empty()) throw Error(ErrorCode::kNoCases, "retrieval returned no cases");

  std::vector<RetrievedCase> cases;
  std::vector<CaseDocument> documents;
  for (const auto& r : retrieval.results) {
    auto doc = deps.store.find_case(r.id);
    if (!doc) throw Error(ErrorCode::kMissingMetadata, "case '" + r.id + "' vanished from store");
    cases.push_back({r, *doc});
    documents.push_back(std::move(*doc));
  }

  std::optional<TermVocabulary> owned_vocab;
  const TermVocabulary* vocab = deps.vocabulary;
  if (!vocab && options.expansion_terms > 0) {
    owned_vocab = build_vocabulary(deps.store);
    vocab = &*owned_vocab;
  }
  auto terms = vocab ? expand_query(query, *vocab, deps.encoder, options.expansion_terms)
                     : std::vector<std::string>{};

  const std::size_t overhead = template_overhead(options.refine.template_id);
  if (options.context_limit <= overhead + kMinTokenBudget) {
    throw Error(ErrorCode::kBudgetTooSmall,
                "context limit " + std::to_string(options.context_limit) +
                    " leaves no room after the prompt template (" + std::to_string(overhead) +
                    " tokens)");
  }
  ContextOptions ctx;
  ctx.token_budget = options.context_limit - overhead;
  ctx.temperature = options.temperature;
  ctx.sentence_budget = options.sentence_budget;
  const auto bundle = aggregate_context(query, cases, ctx, deps.encoder, std::move(terms));
  const std::string prompt = construct_prompt(bundle, options.refine.template_id);

  InsightReport report;
  try {
    const std::string text = deps.generator.generate(prompt, options.refine.max_tokens,
                                                     options.refine.temperature);
    report = fact_check(text, documents, options.refine.threshold);
    report.retrieval = retrieval.results;
    report.retrieval_timings = retrieval.timings;
    RefineOptions refine = options.refine;
    refine.context_limit = options.context_limit;
    report = iterative_refine(report, bundle, deps.generator, documents, refine);
    if (report.status != GroundingStatus::kGrounded) strip_unverified(report);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kBackendUnavailable) throw;
    report = InsightReport{};
    report.status = GroundingStatus::kFailed;
    report.error = e.what();
  }
  report.retrieval = retrieval.results;
  report.retrieval_timings = retrieval.timings;
  return report;
}

}  // namespace casegpt
