#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace casegpt {

enum class Domain { kMedical, kLegal };

std::string_view domain_name(Domain d);
std::optional<Domain> parse_domain(std::string_view s);

using Date = std::chrono::sys_days;

Date parse_iso_date(std::string_view s);  // throws Error(kMalformedRecord)
std::string format_iso_date(Date d);

struct CaseDocument {
  std::string id;
  Domain domain = Domain::kMedical;
  std::string title;
  std::string body;
  Date timestamp{};
  std::optional<std::string> jurisdiction;
  std::int64_t citation_count = 0;
  std::vector<std::string> taxonomy_codes;
  std::optional<std::string> outcome;

  bool operator==(const CaseDocument&) const = default;
};

struct CorpusStats {
  std::size_t doc_count = 0;
  std::int64_t max_citation_count = 0;
  std::set<std::string> jurisdiction_set;
  std::size_t medical_count = 0;
  std::size_t legal_count = 0;
};

/// NFC normalization, whitespace runs collapsed to one space, trimmed.
/// Casing is preserved.
std::string normalize_text(std::string_view raw);

bool is_valid_taxonomy_code(Domain domain, std::string_view code);

/// Validates a document in place: normalizes title and body and checks every
/// invariant of a stored case.
void validate_case(CaseDocument& doc);

/// Parses one corpus line (a JSON object). Unknown fields are reported
/// through `warn` and otherwise ignored.
CaseDocument parse_case_record(
    std::string_view line,
    const std::function<void(const std::string&)>& warn = {});

nlohmann::json case_to_json(const CaseDocument& doc);

/// Reads a corpus file; `anonymize` is applied to every body before
/// validation when set.
std::vector<CaseDocument> read_corpus_file(
    const std::filesystem::path& path,
    const std::function<std::string(std::string_view)>& anonymize = {},
    const std::function<void(const std::string&)>& warn = {});

enum class PutMode { kInsert, kUpsert };

struct CaseFilter {
  std::optional<Domain> domain;
  std::optional<std::string> jurisdiction;
};

/// Embedded document store. Optionally backed by an append-only record log
/// that is replayed on open; without a path the store lives in memory.
///
/// Readers may run concurrently; puts are serialized.
class CorpusStore {
 public:
  CorpusStore() = default;
  explicit CorpusStore(std::filesystem::path log_path);

  CorpusStore(const CorpusStore&) = delete;
  CorpusStore& operator=(const CorpusStore&) = delete;

  void put_case(CaseDocument doc, PutMode mode);
  CaseDocument get_case(const std::string& id) const;
  std::optional<CaseDocument> find_case(const std::string& id) const;
  bool contains(const std::string& id) const;

  /// Documents in ascending id order.
  std::vector<CaseDocument> list_cases(const CaseFilter& filter = {}) const;
  std::vector<std::string> list_ids() const;

  /// Visits documents in id order under a shared lock.
  void for_each(const std::function<void(const CaseDocument&)>& fn) const;

  CorpusStats stats() const;

  /// Ids whose stored document changed since their vector was last indexed.
  std::set<std::string> stale_ids() const;
  void clear_stale(const std::vector<std::string>& ids);

  std::size_t size() const;

 private:
  void append_log(const nlohmann::json& record);
  void replay_log();

  std::optional<std::filesystem::path> log_path_;
  mutable std::shared_mutex mutex_;
  void index_doc(const CaseDocument& doc);
  void unindex_doc(const CaseDocument& doc);

  std::map<std::string, CaseDocument> docs_;
  std::set<std::string> stale_;
  // Aggregates kept incrementally so stats() does not scan.
  std::multiset<std::int64_t> citation_counts_;
  std::map<std::string, std::size_t> jurisdiction_counts_;
  std::size_t medical_count_ = 0;
};

}  // namespace casegpt
