#include "casegpt/corpus.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <cstdio>
#include <fstream>
#include <mutex>
#include <regex>
#include <unistd.h>

#include "casegpt/error.hpp"

namespace casegpt {

using nlohmann::json;

std::string_view domain_name(Domain d) {
  return d == Domain::kMedical ? "medical" : "legal";
}

std::optional<Domain> parse_domain(std::string_view s) {
  if (s == "medical") return Domain::kMedical;
  if (s == "legal") return Domain::kLegal;
  return std::nullopt;
}

Date parse_iso_date(std::string_view s) {
  // YYYY-MM-DD, optionally followed by a time part.
  auto bad = [&] {
    return Error(ErrorCode::kMalformedRecord,
                 "invalid ISO-8601 date: '" + std::string(s) + "'");
  };
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw bad();
  if (s.size() > 10 && s[10] != 'T' && s[10] != ' ') throw bad();
  auto digits = [&](std::size_t pos, std::size_t n) {
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') throw bad();
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  std::chrono::year_month_day ymd{std::chrono::year{digits(0, 4)},
                                  std::chrono::month{unsigned(digits(5, 2))},
                                  std::chrono::day{unsigned(digits(8, 2))}};
  if (!ymd.ok()) throw bad();
  return std::chrono::sys_days{ymd};
}

std::string format_iso_date(Date d) {
  std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()));
  return buf;
}

std::string normalize_text(std::string_view raw) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kStorageFailure, "ICU NFC normalizer unavailable");
  }
  icu::UnicodeString text = icu::UnicodeString::fromUTF8(
      icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
  icu::UnicodeString composed = nfc->normalize(text, status);
  if (U_FAILURE(status)) composed = text;

  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < composed.length();) {
    UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.isEmpty();
      continue;
    }
    if (pending_space) {
      out.append(static_cast<UChar>(' '));
      pending_space = false;
    }
    out.append(c);
  }
  std::string result;
  out.toUTF8String(result);
  return result;
}

bool is_valid_taxonomy_code(Domain domain, std::string_view code) {
  static const std::regex kIcd10(R"([A-Z][0-9]{2}(\.[0-9]+)?)");
  static const std::regex kLegal(R"([A-Za-z0-9_-]+(\.[A-Za-z0-9_-]+)*)");
  const std::string s(code);
  return std::regex_match(s, domain == Domain::kMedical ? kIcd10 : kLegal);
}

void validate_case(CaseDocument& doc) {
  if (doc.id.empty()) throw Error(ErrorCode::kMissingField, "case id is empty");
  // Ids appear inside [CASE:<id>] markers, so they must be marker-safe.
  if (doc.id.find_first_of(" \t\r\n[]") != std::string::npos) {
    throw Error(ErrorCode::kMalformedRecord,
                "case id '" + doc.id + "' contains whitespace or brackets");
  }
  doc.title = normalize_text(doc.title);
  doc.body = normalize_text(doc.body);
  if (doc.body.empty()) {
    throw Error(ErrorCode::kMissingField,
                "case '" + doc.id + "' has an empty body");
  }
  if (doc.citation_count < 0) {
    throw Error(ErrorCode::kMalformedRecord,
                "case '" + doc.id + "' has a negative citation_count");
  }
  for (const auto& code : doc.taxonomy_codes) {
    if (!is_valid_taxonomy_code(doc.domain, code)) {
      throw Error(ErrorCode::kInvalidCode,
                  "case '" + doc.id + "': taxonomy code '" + code +
                      "' is not a valid " +
                      std::string(domain_name(doc.domain)) + " code");
    }
  }
}

namespace {

const std::set<std::string>& known_fields() {
  static const std::set<std::string> fields{
      "id",           "domain",         "title",
      "body",         "timestamp",      "jurisdiction",
      "citation_count", "taxonomy_codes", "outcome"};
  return fields;
}

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    throw Error(ErrorCode::kMissingField,
                std::string("record is missing field '") + key + "'");
  }
  if (!it->is_string()) {
    throw Error(ErrorCode::kMalformedRecord,
                std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorCode::kMalformedRecord,
                std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

}  // namespace

CaseDocument parse_case_record(
    std::string_view line,
    const std::function<void(const std::string&)>& warn) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::kMalformedRecord, "record is not a JSON object");
  }

  CaseDocument doc;
  doc.id = required_string(j, "id");
  const std::string domain = required_string(j, "domain");
  auto parsed_domain = parse_domain(domain);
  if (!parsed_domain) {
    throw Error(ErrorCode::kMalformedRecord, "unknown domain '" + domain + "'");
  }
  doc.domain = *parsed_domain;
  doc.body = required_string(j, "body");
  doc.title = optional_string(j, "title").value_or("");
  if (auto ts = optional_string(j, "timestamp")) {
    doc.timestamp = parse_iso_date(*ts);
  }
  doc.jurisdiction = optional_string(j, "jurisdiction");
  doc.outcome = optional_string(j, "outcome");

  if (auto it = j.find("citation_count"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) {
      throw Error(ErrorCode::kMalformedRecord,
                  "field 'citation_count' must be an integer");
    }
    doc.citation_count = it->get<std::int64_t>();
  }
  if (auto it = j.find("taxonomy_codes"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) {
      throw Error(ErrorCode::kMalformedRecord,
                  "field 'taxonomy_codes' must be an array");
    }
    for (const auto& c : *it) {
      if (!c.is_string()) {
        throw Error(ErrorCode::kMalformedRecord,
                    "taxonomy codes must be strings");
      }
      doc.taxonomy_codes.push_back(c.get<std::string>());
    }
  }

  if (warn) {
    for (const auto& [key, _] : j.items()) {
      if (!known_fields().count(key)) {
        warn("record '" + doc.id + "': ignoring unknown field '" + key + "'");
      }
    }
  }

  validate_case(doc);
  return doc;
}

json case_to_json(const CaseDocument& doc) {
  json j{{"id", doc.id},
         {"domain", domain_name(doc.domain)},
         {"title", doc.title},
         {"body", doc.body},
         {"timestamp", format_iso_date(doc.timestamp)},
         {"citation_count", doc.citation_count},
         {"taxonomy_codes", doc.taxonomy_codes}};
  j["jurisdiction"] = doc.jurisdiction ? json(*doc.jurisdiction) : json(nullptr);
  j["outcome"] = doc.outcome ? json(*doc.outcome) : json(nullptr);
  return j;
}

std::vector<CaseDocument> read_corpus_file(
    const std::filesystem::path& path,
    const std::function<std::string(std::string_view)>& anonymize,
    const std::function<void(const std::string&)>& warn) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIoFailure,
                "cannot open corpus file " + path.string());
  }
  std::vector<CaseDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      CaseDocument doc = parse_case_record(line, warn);
      if (anonymize) {
        doc.body = anonymize(doc.body);
        validate_case(doc);
      }
      docs.push_back(std::move(doc));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) +
                                ": " + e.what());
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// CorpusStore

CorpusStore::CorpusStore(std::filesystem::path log_path) {
  if (log_path.empty()) return;
  log_path_ = std::move(log_path);
  replay_log();
}

void CorpusStore::replay_log() {
  std::ifstream in(*log_path_);
  if (!in) return;  // a missing log is an empty store
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    try {
      if (rec.is_discarded()) throw std::runtime_error("unparseable record");
      const std::string op = rec.at("op").get<std::string>();
      if (op == "put") {
        CaseDocument doc = parse_case_record(rec.at("doc").dump());
        if (auto it = docs_.find(doc.id); it != docs_.end()) {
          unindex_doc(it->second);
        }
        if (rec.value("stale", false)) stale_.insert(doc.id);
        index_doc(doc);
        docs_[doc.id] = std::move(doc);
      } else if (op == "indexed") {
        for (const auto& id : rec.at("ids")) stale_.erase(id.get<std::string>());
      } else {
        throw std::runtime_error("unknown op '" + op + "'");
      }
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kStorageFailure,
                  log_path_->string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
}

void CorpusStore::append_log(const json& record) {
  if (!log_path_) return;
  std::FILE* f = std::fopen(log_path_->c_str(), "ab");
  if (!f) {
    throw Error(ErrorCode::kStorageFailure,
                "cannot open store log " + log_path_->string());
  }
  const std::string line = record.dump() + "\n";
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() &&
                  std::fflush(f) == 0 && ::fsync(::fileno(f)) == 0;
  std::fclose(f);
  if (!ok) {
    throw Error(ErrorCode::kStorageFailure,
                "write to store log " + log_path_->string() + " failed");
  }
}

void CorpusStore::index_doc(const CaseDocument& doc) {
  citation_counts_.insert(doc.citation_count);
  if (doc.jurisdiction) ++jurisdiction_counts_[*doc.jurisdiction];
  if (doc.domain == Domain::kMedical) ++medical_count_;
}

void CorpusStore::unindex_doc(const CaseDocument& doc) {
  citation_counts_.erase(citation_counts_.find(doc.citation_count));
  if (doc.jurisdiction) {
    auto it = jurisdiction_counts_.find(*doc.jurisdiction);
    if (--it->second == 0) jurisdiction_counts_.erase(it);
  }
  if (doc.domain == Domain::kMedical) --medical_count_;
}

void CorpusStore::put_case(CaseDocument doc, PutMode mode) {
  validate_case(doc);
  std::unique_lock lock(mutex_);
  auto it = docs_.find(doc.id);
  const bool replacing = it != docs_.end();
  if (replacing && mode == PutMode::kInsert) {
    throw Error(ErrorCode::kDuplicateId, "case '" + doc.id + "' already exists");
  }
  append_log(json{{"op", "put"}, {"stale", replacing}, {"doc", case_to_json(doc)}});
  if (replacing) {
    unindex_doc(it->second);
    stale_.insert(doc.id);
  }
  index_doc(doc);
  docs_[doc.id] = std::move(doc);
}

CaseDocument CorpusStore::get_case(const std::string& id) const {
  if (auto doc = find_case(id)) return std::move(*doc);
  throw Error(ErrorCode::kNotFound, "case '" + id + "' not found");
}

std::optional<CaseDocument> CorpusStore::find_case(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = docs_.find(id);
  if (it == docs_.end()) return std::nullopt;
  return it->second;
}

bool CorpusStore::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return docs_.count(id) > 0;
}

std::vector<CaseDocument> CorpusStore::list_cases(const CaseFilter& filter) const {
  std::vector<CaseDocument> out;
  for_each([&](const CaseDocument& doc) {
    if (filter.domain && doc.domain != *filter.domain) return;
    if (filter.jurisdiction && doc.jurisdiction != filter.jurisdiction) return;
    out.push_back(doc);
  });
  return out;
}

std::vector<std::string> CorpusStore::list_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> ids;
  ids.reserve(docs_.size());
  for (const auto& [id, _] : docs_) ids.push_back(id);
  return ids;
}

void CorpusStore::for_each(
    const std::function<void(const CaseDocument&)>& fn) const {
  std::shared_lock lock(mutex_);
  for (const auto& [_, doc] : docs_) fn(doc);
}

CorpusStats CorpusStore::stats() const {
  std::shared_lock lock(mutex_);
  CorpusStats s;
  s.doc_count = docs_.size();
  s.max_citation_count = citation_counts_.empty() ? 0 : *citation_counts_.rbegin();
  for (const auto& [j, _] : jurisdiction_counts_) s.jurisdiction_set.insert(j);
  s.medical_count = medical_count_;
  s.legal_count = docs_.size() - medical_count_;
  return s;
}

std::set<std::string> CorpusStore::stale_ids() const {
  std::shared_lock lock(mutex_);
  return stale_;
}

void CorpusStore::clear_stale(const std::vector<std::string>& ids) {
  if (ids.empty()) return;
  std::unique_lock lock(mutex_);
  append_log(json{{"op", "indexed"}, {"ids", ids}});
  for (const auto& id : ids) stale_.erase(id);
}

std::size_t CorpusStore::size() const {
  std::shared_lock lock(mutex_);
  return docs_.size();
}

}  // namespace casegpt
