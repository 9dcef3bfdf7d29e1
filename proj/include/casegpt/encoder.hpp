#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace casegpt {

/// Dense unit-norm embedding. Construct through normalize() or
/// from_unit(); both enforce the unit-norm invariant.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  static EmbeddingVector normalize(std::span<const double> raw);
  static EmbeddingVector normalize(std::span<const float> raw);
  /// Accepts values that are already unit norm (within `tolerance`).
  static EmbeddingVector from_unit(std::vector<float> values,
                                   double tolerance = 1e-4);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  float operator[](std::size_t i) const noexcept { return values_[i]; }
  double norm() const noexcept;

  bool operator==(const EmbeddingVector&) const = default;

 private:
  explicit EmbeddingVector(std::vector<float> v) : values_(std::move(v)) {}
  std::vector<float> values_;
};

/// Lowercased alphanumeric word tokens in text order. Throws EmptyText for
/// empty input.
std::vector<std::string> tokenize(std::string_view text);

/// Same split as tokenize() but never throws; returns {} for no tokens.
std::vector<std::string> word_tokens(std::string_view text);

/// 64-bit FNV-1a.
std::uint64_t stable_hash64(std::string_view bytes,
                            std::uint64_t seed = 0xcbf29ce484222325ULL);

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingVector encode(std::string_view text) const = 0;
  virtual std::vector<EmbeddingVector> encode_batch(
      std::span<const std::string> texts) const;
};

inline constexpr std::size_t kDefaultEmbeddingDim = 768;
inline constexpr std::size_t kMinEmbeddingDim = 8;
inline constexpr std::size_t kMaxEmbeddingDim = 4096;

/// Offline deterministic encoder: every token maps to a pseudo-random unit
/// vector seeded by its hash; a text is the normalized mean of its tokens.
class ReferenceEncoder final : public EncoderBackend {
 public:
  explicit ReferenceEncoder(std::size_t dim = kDefaultEmbeddingDim,
                            std::uint64_t seed = 0);

  std::string name() const override { return "reference"; }
  std::size_t dim() const override { return dim_; }
  EmbeddingVector encode(std::string_view text) const override;

  /// Unit vector for a single (already lowercased) token.
  std::vector<double> token_vector(std::string_view token) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct RemoteEncoderConfig {
  std::string url;  // e.g. http://127.0.0.1:8081/v1/embeddings
  std::string model = "text-embedding";
  std::string auth_token;
  std::size_t dim = kDefaultEmbeddingDim;
  double timeout_seconds = 10.0;
  int max_retries = 2;
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 4;
};

/// Client for an HTTP embedding service speaking
/// {model, input:[...]} -> {data:[{index, embedding}]}.
class RemoteEncoder final : public EncoderBackend {
 public:
  explicit RemoteEncoder(RemoteEncoderConfig config);
  ~RemoteEncoder() override;

  std::string name() const override { return "remote"; }
  std::size_t dim() const override { return config_.dim; }
  EmbeddingVector encode(std::string_view text) const override;
  std::vector<EmbeddingVector> encode_batch(
      std::span<const std::string> texts) const override;

 private:
  std::vector<EmbeddingVector> request_chunk(
      std::span<const std::string> texts) const;

  RemoteEncoderConfig config_;
  struct Limiter;
  std::unique_ptr<Limiter> limiter_;
};

inline EmbeddingVector encode_text(std::string_view text,
                                   const EncoderBackend& backend) {
  return backend.encode(text);
}

inline std::vector<EmbeddingVector> encode_batch(
    std::span<const std::string> texts, const EncoderBackend& backend) {
  return backend.encode_batch(texts);
}

}  // namespace casegpt
