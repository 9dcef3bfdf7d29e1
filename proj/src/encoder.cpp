#include "casegpt/encoder.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>

#include "casegpt/error.hpp"

namespace casegpt {


double EmbeddingVector::norm() const noexcept {
  double sum = 0.0;
  for (float v : values_) sum += double(v) * double(v);
  return std::sqrt(sum);
}

EmbeddingVector EmbeddingVector::normalize(std::span<const double> raw) {
  if (raw.empty()) {
    throw Error(ErrorCode::kDimensionMismatch, "cannot normalize an empty vector");
  }
  double sum = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidParams, "vector has non-finite components");
    }
    sum += v * v;
  }
  if (sum == 0.0) throw Error(ErrorCode::kZeroVector, "cannot normalize a zero vector");
  const double norm = std::sqrt(sum);
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = static_cast<float>(raw[i] / norm);
  }
  return EmbeddingVector(std::move(out));
}

EmbeddingVector EmbeddingVector::normalize(std::span<const float> raw) {
  std::vector<double> wide(raw.begin(), raw.end());
  return normalize(std::span<const double>(wide));
}

EmbeddingVector EmbeddingVector::from_unit(std::vector<float> values,
                                           double tolerance) {
  EmbeddingVector v(std::move(values));
  for (float x : v.values_) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kInvalidParams, "vector has non-finite components");
    }
  }
  if (v.values_.empty() || std::abs(v.norm() - 1.0) > tolerance) {
    throw Error(ErrorCode::kNotNormalized, "vector is not unit norm");
  }
  return v;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  for (int32_t i = 0; i < length;) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (c >= 0 && u_isalnum(c)) {
      c = u_tolower(c);
      char buf[U8_MAX_LENGTH];
      int32_t n = 0;
      U8_APPEND_UNSAFE(buf, n, c);
      current.append(buf, n);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::string> tokenize(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::kEmptyText, "text is empty");
  return word_tokens(text);
}

std::uint64_t stable_hash64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<EmbeddingVector> EncoderBackend::encode_batch(
    std::span<const std::string> texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(t));
  return out;
}

// ---------------------------------------------------------------------------
// ReferenceEncoder

ReferenceEncoder::ReferenceEncoder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim < kMinEmbeddingDim || dim > kMaxEmbeddingDim) {
    throw Error(ErrorCode::kInvalidParams,
                "embedding dim must be in [8, 4096], got " + std::to_string(dim));
  }
}

std::vector<double> ReferenceEncoder::token_vector(std::string_view token) const {
  // splitmix64 stream seeded by the token hash; components uniform in [-1, 1).
  std::uint64_t state = stable_hash64(token) ^ (seed_ * 0x9e3779b97f4a7c15ULL);
  std::vector<double> v(dim_);
  double sum = 0.0;
  for (auto& x : v) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    x = double(z >> 11) * 0x1.0p-52 - 1.0;
    sum += x * x;
  }
  const double norm = std::sqrt(sum);
  for (auto& x : v) x /= norm;
  return v;
}

EmbeddingVector ReferenceEncoder::encode(std::string_view text) const {
  auto tokens = tokenize(text);
  // Summation order is fixed so pooling is exactly order-invariant.
  std::sort(tokens.begin(), tokens.end());
  if (tokens.empty()) {
    throw Error(ErrorCode::kEmptyText, "text contains no word tokens");
  }
  std::vector<double> pooled(dim_, 0.0);
  for (const auto& token : tokens) {
    const auto tv = token_vector(token);
    for (std::size_t i = 0; i < dim_; ++i) pooled[i] += tv[i];
  }
  const double n = static_cast<double>(tokens.size());
  for (auto& x : pooled) x /= n;
  try {
    return EmbeddingVector::normalize(std::span<const double>(pooled));
  } catch (const Error& e) {
    // Only reachable if token vectors cancel exactly.
    throw Error(ErrorCode::kEncoderFailure, e.what());
  }
}

}  // namespace casegpt
