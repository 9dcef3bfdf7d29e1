#include <gtest/gtest.h>

#include <random>

#include "casegpt/corpus.hpp"
#include "casegpt/error.hpp"
#include "support.hpp"

using namespace casegpt;
using testing_support::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kConfigError;
}

CaseDocument make_doc(const std::string& id, Domain domain = Domain::kMedical,
                      std::int64_t citations = 0,
                      std::optional<std::string> jurisdiction = std::nullopt) {
  CaseDocument d;
  d.id = id;
  d.domain = domain;
  d.title = "t " + id;
  d.body = "body of " + id + ".";
  d.timestamp = parse_iso_date("2020-01-01");
  d.citation_count = citations;
  d.jurisdiction = std::move(jurisdiction);
  return d;
}

}  // namespace

TEST(ParseRecord, MedicalRecordRoundTrip) {
  const auto doc = parse_case_record(
      R"({"id":"m-001","domain":"medical","body":"fever and cough","taxonomy_codes":["J18.9"]})");
  EXPECT_EQ(doc.id, "m-001");
  EXPECT_EQ(doc.domain, Domain::kMedical);
  EXPECT_EQ(doc.body, "fever and cough");
  ASSERT_EQ(doc.taxonomy_codes.size(), 1u);
  EXPECT_EQ(doc.taxonomy_codes[0], "J18.9");
  EXPECT_EQ(doc.citation_count, 0);
  EXPECT_FALSE(doc.jurisdiction.has_value());
}

TEST(ParseRecord, MissingIdIsMissingField) {
  EXPECT_EQ(code_of([] { parse_case_record(R"({"domain":"medical","body":"x"})"); }),
            ErrorCode::kMissingField);
}

TEST(ParseRecord, BadMedicalCodeIsInvalidCode) {
  EXPECT_EQ(code_of([] {
              parse_case_record(
                  R"({"id":"m","domain":"medical","body":"x","taxonomy_codes":["XYZ"]})");
            }),
            ErrorCode::kInvalidCode);
}

TEST(ParseRecord, MalformedInputs) {
  EXPECT_EQ(code_of([] { parse_case_record("{not json"); }), ErrorCode::kMalformedRecord);
  EXPECT_EQ(code_of([] { parse_case_record(R"({"id":"a","domain":"tax","body":"x"})"); }),
            ErrorCode::kMalformedRecord);
  EXPECT_EQ(code_of([] {
              parse_case_record(R"({"id":"a","domain":"legal","body":"x","citation_count":-1})");
            }),
            ErrorCode::kMalformedRecord);
  EXPECT_EQ(code_of([] { parse_case_record(R"({"id":"a","domain":"legal","body":"   "})"); }),
            ErrorCode::kMissingField);
}

TEST(ParseRecord, UnknownFieldsWarn) {
  std::vector<std::string> warnings;
  const auto doc = parse_case_record(R"({"id":"a","domain":"legal","body":"x","court":"High"})",
                                     [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_EQ(doc.id, "a");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("court"), std::string::npos);
}

TEST(ParseRecord, JsonRoundTrip) {
  auto doc = make_doc("leg-9", Domain::kLegal, 7, "US-CA");
  doc.taxonomy_codes = {"contract.breach"};
  doc.outcome = "plaintiff";
  EXPECT_EQ(parse_case_record(case_to_json(doc).dump()), doc);
}

TEST(NormalizeText, CollapsesWhitespace) {
  EXPECT_EQ(normalize_text("  chest   pain\n"), "chest pain");
  EXPECT_EQ(normalize_text("abc"), "abc");
  EXPECT_EQ(normalize_text(""), "");
}

TEST(NormalizeText, ComposesDecomposedForm) {
  const std::string decomposed = "De\xCC\x81ja\xCC\x80 vu";  // e + U+0301, a + U+0300
  const std::string composed = "D\xC3\xA9j\xC3\xA0 vu";
  EXPECT_EQ(normalize_text(decomposed), composed);
}

TEST(NormalizeText, IdempotentOnRandomInput) {
  std::mt19937_64 rng(7);
  const std::vector<std::string> pieces{" ", "\t", "\n", "a", "B", "e\xCC\x81", "\xC3\xA9",
                                        "  ", "x y", "\xE2\x80\x83"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const int len = static_cast<int>(rng() % 12);
    for (int i = 0; i < len; ++i) s += pieces[rng() % pieces.size()];
    const auto once = normalize_text(s);
    EXPECT_EQ(normalize_text(once), once) << "input: " << s;
  }
}

TEST(TaxonomyCodes, Patterns) {
  EXPECT_TRUE(is_valid_taxonomy_code(Domain::kMedical, "J18.9"));
  EXPECT_TRUE(is_valid_taxonomy_code(Domain::kMedical, "I21"));
  EXPECT_FALSE(is_valid_taxonomy_code(Domain::kMedical, "XYZ"));
  EXPECT_FALSE(is_valid_taxonomy_code(Domain::kMedical, "j18.9"));
  EXPECT_TRUE(is_valid_taxonomy_code(Domain::kLegal, "tort.negligence.medical"));
  EXPECT_FALSE(is_valid_taxonomy_code(Domain::kLegal, "tort..x"));
  EXPECT_FALSE(is_valid_taxonomy_code(Domain::kLegal, ""));
}

TEST(CorpusStore, InsertGetAndDuplicates) {
  CorpusStore store;
  store.put_case(make_doc("m-001"), PutMode::kInsert);
  EXPECT_EQ(store.stats().doc_count, 1u);
  EXPECT_EQ(store.get_case("m-001"), make_doc("m-001"));
  EXPECT_EQ(code_of([&] { store.put_case(make_doc("m-001"), PutMode::kInsert); }),
            ErrorCode::kDuplicateId);
  EXPECT_EQ(code_of([&] { store.get_case("absent"); }), ErrorCode::kNotFound);
}

TEST(CorpusStore, UpsertReplacesAndMarksStale) {
  CorpusStore store;
  store.put_case(make_doc("m-001"), PutMode::kInsert);
  auto changed = make_doc("m-001");
  changed.body = "revised body.";
  store.put_case(changed, PutMode::kUpsert);
  EXPECT_EQ(store.stats().doc_count, 1u);
  EXPECT_EQ(store.get_case("m-001").body, "revised body.");
  EXPECT_EQ(store.stale_ids(), std::set<std::string>{"m-001"});
  store.clear_stale({"m-001"});
  EXPECT_TRUE(store.stale_ids().empty());
}

TEST(CorpusStore, ListFiltersInIdOrder) {
  CorpusStore store;
  for (const auto& id : {"l-3", "m-2", "l-1", "m-1", "l-2"}) {
    store.put_case(make_doc(id, id[0] == 'l' ? Domain::kLegal : Domain::kMedical, 0,
                            id[2] == '1' ? std::optional<std::string>("UK") : std::nullopt),
                   PutMode::kInsert);
  }
  std::vector<std::string> legal;
  for (const auto& d : store.list_cases({Domain::kLegal, std::nullopt})) legal.push_back(d.id);
  EXPECT_EQ(legal, (std::vector<std::string>{"l-1", "l-2", "l-3"}));
  const auto uk = store.list_cases({std::nullopt, "UK"});
  ASSERT_EQ(uk.size(), 2u);
  EXPECT_EQ(uk[0].id, "l-1");
  EXPECT_EQ(uk[1].id, "m-1");
}

TEST(CorpusStore, StatsMatchFullScanAfterRandomPuts) {
  std::mt19937_64 rng(11);
  CorpusStore store;
  for (int step = 0; step < 400; ++step) {
    const std::string id = "c" + std::to_string(rng() % 60);
    const auto domain = rng() % 2 ? Domain::kLegal : Domain::kMedical;
    const std::int64_t cites = static_cast<std::int64_t>(rng() % 500);
    std::optional<std::string> jur;
    if (rng() % 3) jur = "J" + std::to_string(rng() % 5);
    store.put_case(make_doc(id, domain, cites, jur), PutMode::kUpsert);

    std::set<std::string> ids, jurisdictions;
    std::int64_t max_c = 0;
    std::size_t med = 0, leg = 0;
    for (const auto& d : store.list_cases()) {
      ids.insert(d.id);
      max_c = std::max(max_c, d.citation_count);
      if (d.jurisdiction) jurisdictions.insert(*d.jurisdiction);
      ++(d.domain == Domain::kMedical ? med : leg);
    }
    const auto s = store.stats();
    ASSERT_EQ(s.doc_count, ids.size());
    ASSERT_EQ(s.max_citation_count, max_c);
    ASSERT_EQ(s.jurisdiction_set, jurisdictions);
    ASSERT_EQ(s.medical_count, med);
    ASSERT_EQ(s.legal_count, leg);
  }
}

TEST(CorpusStore, LogReplaySurvivesReopen) {
  TempDir dir;
  const auto path = dir / "store.jsonl";
  {
    CorpusStore store(path);
    store.put_case(make_doc("a", Domain::kLegal, 3, "UK"), PutMode::kInsert);
    store.put_case(make_doc("b"), PutMode::kInsert);
    auto b2 = make_doc("b");
    b2.body = "second version.";
    store.put_case(b2, PutMode::kUpsert);
  }
  CorpusStore reopened(path);
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(reopened.get_case("a"), make_doc("a", Domain::kLegal, 3, "UK"));
  EXPECT_EQ(reopened.get_case("b").body, "second version.");
  EXPECT_EQ(reopened.stale_ids(), std::set<std::string>{"b"});
  reopened.clear_stale({"b"});
  CorpusStore again(path);
  EXPECT_TRUE(again.stale_ids().empty());
}

TEST(CorpusStore, ReadCorpusFileAppliesAnonymizer) {
  const auto docs = read_corpus_file(testing_support::fixture("corpus20.jsonl"),
                                     [](std::string_view body) {
                                       std::string s(body);
                                       for (auto& c : s) {
                                         if (c >= '0' && c <= '9') c = '#';
                                       }
                                       return s;
                                     });
  ASSERT_EQ(docs.size(), 20u);
  for (const auto& d : docs) EXPECT_EQ(d.body.find_first_of("0123456789"), std::string::npos);
}

TEST(Dates, IsoParsing) {
  EXPECT_EQ(format_iso_date(parse_iso_date("2021-02-28")), "2021-02-28");
  EXPECT_EQ(format_iso_date(parse_iso_date("2021-02-28T10:00:00Z")), "2021-02-28");
  EXPECT_THROW(parse_iso_date("2021-02-30"), Error);
  EXPECT_THROW(parse_iso_date("yesterday"), Error);
}
