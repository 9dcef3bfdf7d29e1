#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "casegpt/encoder.hpp"
#include "casegpt/hnsw.hpp"

namespace testing_support {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(CASEGPT_FIXTURES) / name;
}

// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("casegpt-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Gaussian components, normalized: uniform on the unit sphere.
inline casegpt::EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = g(rng);
  return casegpt::EmbeddingVector::normalize(v);
}

inline std::vector<casegpt::EmbeddingVector> random_units(std::uint64_t seed, std::size_t n,
                                                          std::size_t dim) {
  std::mt19937_64 rng(seed);
  std::vector<casegpt::EmbeddingVector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_unit(rng, dim));
  return out;
}

inline std::string node_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "n%06zu", i);
  return buf;
}

// Brute-force top-k in double precision, independent of the index code.
inline std::vector<std::string> brute_force_ids(
    const std::vector<casegpt::EmbeddingVector>& data, const casegpt::EmbeddingVector& q,
    std::size_t k) {
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double s = 0;
    for (std::size_t d = 0; d < q.dim(); ++d) s += double(data[i][d]) * double(q[d]);
    scored.emplace_back(-s, node_id(i));
  }
  std::partial_sort(scored.begin(), scored.begin() + std::min(k, scored.size()), scored.end());
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) ids.push_back(scored[i].second);
  return ids;
}

inline double recall(const std::vector<std::string>& truth,
                     const std::vector<casegpt::Neighbor>& found) {
  std::size_t hit = 0;
  for (const auto& n : found) {
    if (std::find(truth.begin(), truth.end(), n.id) != truth.end()) ++hit;
  }
  return truth.empty() ? 1.0 : double(hit) / double(truth.size());
}

}  // namespace testing_support
