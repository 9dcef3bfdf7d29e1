#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "casegpt/encoder.hpp"
#include "casegpt/error.hpp"

using namespace casegpt;

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

double l2(const EmbeddingVector& v) {
  double s = 0;
  for (float x : v.values()) s += double(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Chest pain, acute"), (std::vector<std::string>{"chest", "pain", "acute"}));
  EXPECT_EQ(tokenize("a  b"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(code_of([] { tokenize(""); }), ErrorCode::kEmptyText);
  EXPECT_EQ(tokenize("ST-elevation 2x"), (std::vector<std::string>{"st", "elevation", "2x"}));
  EXPECT_EQ(tokenize("\xC3\x89tude"), std::vector<std::string>{"\xC3\xA9tude"});
}

TEST(Normalize, Examples) {
  const auto v = EmbeddingVector::normalize(std::vector<double>{3, 4});
  EXPECT_NEAR(v[0], 0.6, 1e-7);
  EXPECT_NEAR(v[1], 0.8, 1e-7);
  const auto again = EmbeddingVector::normalize(v.values());
  for (std::size_t i = 0; i < v.dim(); ++i) EXPECT_NEAR(again[i], v[i], 1e-12);
  EXPECT_EQ(code_of([] { EmbeddingVector::normalize(std::vector<double>{0, 0}); }),
            ErrorCode::kZeroVector);
  EXPECT_EQ(code_of([] { EmbeddingVector::from_unit({1.0f, 1.0f}); }),
            ErrorCode::kNotNormalized);
}

TEST(ReferenceEncoder, DeterministicAndUnitNorm) {
  ReferenceEncoder enc(64);
  const auto a = enc.encode("x");
  const auto b = enc.encode("x");
  EXPECT_EQ(a, b);
  for (const char* text : {"x", "chest pain", "A much longer sentence, with punctuation!",
                           "\xC3\xA9tude 42"}) {
    EXPECT_NEAR(l2(enc.encode(text)), 1.0, 1e-6) << text;
  }
}

TEST(ReferenceEncoder, WordOrderInvariant) {
  ReferenceEncoder enc(128);
  EXPECT_EQ(enc.encode("chest pain"), enc.encode("pain chest"));
}

TEST(ReferenceEncoder, MatchesMeanOfTokenVectors) {
  // Direct computation: normalized mean of the per-token unit vectors.
  ReferenceEncoder enc(32, 5);
  const auto tokens = tokenize("Chest pain chest");
  std::vector<double> sum(32, 0.0);
  for (const auto& t : tokens) {
    const auto tv = enc.token_vector(t);
    double n = 0;
    for (double x : tv) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += tv[i];
  }
  double n = 0;
  for (double x : sum) n += x * x;
  n = std::sqrt(n);
  const auto v = enc.encode("Chest pain chest");
  for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(v[i], sum[i] / n, 1e-6);
}

TEST(ReferenceEncoder, SeedAndDimMatter) {
  EXPECT_NE(ReferenceEncoder(64, 0).encode("fever"), ReferenceEncoder(64, 1).encode("fever"));
  EXPECT_EQ(ReferenceEncoder(16).encode("fever").dim(), 16u);
  EXPECT_EQ(code_of([] { ReferenceEncoder(4); }), ErrorCode::kInvalidParams);
  EXPECT_EQ(code_of([] { ReferenceEncoder(5000); }), ErrorCode::kInvalidParams);
}

TEST(ReferenceEncoder, EmptyAndTokenlessText) {
  ReferenceEncoder enc(16);
  EXPECT_EQ(code_of([&] { enc.encode(""); }), ErrorCode::kEmptyText);
  EXPECT_EQ(code_of([&] { enc.encode(" ,;! "); }), ErrorCode::kEmptyText);
  EXPECT_NO_THROW(enc.encode("-a-"));
}

TEST(EncodeBatch, MatchesPerItemInOrder) {
  ReferenceEncoder enc(32);
  const std::vector<std::string> texts{"alpha", "beta gamma", "delta"};
  const auto batch = encode_batch(texts, enc);
  ASSERT_EQ(batch.size(), 3u);
  for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(batch[i], encode_text(texts[i], enc));
  const std::vector<std::string> bad{"alpha", "", "delta"};
  EXPECT_EQ(code_of([&] { encode_batch(bad, enc); }), ErrorCode::kEmptyText);
}

TEST(StableHash, KnownFnvValues) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(stable_hash64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(stable_hash64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(stable_hash64("foobar"), 0x85944171f73967e8ULL);
}

// ---------------------------------------------------------------------------
// Remote encoder against an in-process embedding service double.

namespace {

struct FakeEmbeddingService {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
  std::atomic<int> failures_left{0};
  std::atomic<int> max_batch{0};
  std::size_t dim = 8;
  bool wrong_dim = false;
  bool shuffle = false;
  std::string last_auth;
  std::mutex mutex;
  ReferenceEncoder reference{8, 3};

  FakeEmbeddingService() {
    server.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      {
        std::lock_guard lock(mutex);
        last_auth = req.get_header_value("Authorization");
      }
      if (failures_left > 0) {
        --failures_left;
        res.status = 503;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      const auto& input = body.at("input");
      max_batch = std::max<int>(max_batch, static_cast<int>(input.size()));
      nlohmann::json data = nlohmann::json::array();
      for (std::size_t i = 0; i < input.size(); ++i) {
        const auto v = reference.encode(input[i].get<std::string>());
        std::vector<float> values(v.values().begin(), v.values().end());
        if (wrong_dim) values.push_back(0.0f);
        data.push_back({{"index", i}, {"embedding", values}});
      }
      if (shuffle) std::reverse(data.begin(), data.end());
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeEmbeddingService() {
    server.stop();
    thread.join();
  }

  RemoteEncoderConfig config() const {
    RemoteEncoderConfig c;
    c.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/embeddings";
    c.dim = dim;
    c.timeout_seconds = 2;
    c.max_retries = 2;
    c.batch_size = 2;
    c.auth_token = "s3cret";
    return c;
  }
};

}  // namespace

TEST(RemoteEncoder, PassesReferenceContract) {
  FakeEmbeddingService svc;
  svc.shuffle = true;
  RemoteEncoder enc(svc.config());
  EXPECT_EQ(enc.dim(), 8u);
  const auto v = enc.encode("chest pain");
  EXPECT_NEAR(l2(v), 1.0, 1e-6);
  EXPECT_EQ(v, svc.reference.encode("chest pain"));
  const std::vector<std::string> texts{"a", "b c", "d", "e f g", "h"};
  const auto batch = enc.encode_batch(texts);
  ASSERT_EQ(batch.size(), texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    EXPECT_EQ(batch[i], svc.reference.encode(texts[i])) << i;
  }
  EXPECT_LE(svc.max_batch.load(), 2);
  EXPECT_EQ(svc.last_auth, "Bearer s3cret");
}

TEST(RemoteEncoder, RetriesTransientFailures) {
  FakeEmbeddingService svc;
  svc.failures_left = 2;
  RemoteEncoder enc(svc.config());
  EXPECT_NO_THROW(enc.encode("fever"));
  EXPECT_EQ(svc.requests.load(), 3);
}

TEST(RemoteEncoder, GivesUpAfterRetries) {
  FakeEmbeddingService svc;
  svc.failures_left = 100;
  RemoteEncoder enc(svc.config());
  EXPECT_EQ(code_of([&] { enc.encode("fever"); }), ErrorCode::kBackendUnavailable);
  EXPECT_EQ(svc.requests.load(), 3);
}

TEST(RemoteEncoder, WrongLengthIsDimensionMismatch) {
  FakeEmbeddingService svc;
  svc.wrong_dim = true;
  RemoteEncoder enc(svc.config());
  EXPECT_EQ(code_of([&] { enc.encode("fever"); }), ErrorCode::kDimensionMismatch);
}

TEST(RemoteEncoder, UnreachableIsBackendUnavailable) {
  RemoteEncoderConfig c;
  c.url = "http://127.0.0.1:1/v1/embeddings";
  c.dim = 8;
  c.max_retries = 0;
  c.timeout_seconds = 1;
  RemoteEncoder enc(c);
  EXPECT_EQ(code_of([&] { enc.encode("fever"); }), ErrorCode::kBackendUnavailable);
  EXPECT_EQ(code_of([&] { enc.encode(""); }), ErrorCode::kEmptyText);
}
