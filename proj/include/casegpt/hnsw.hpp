#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "casegpt/encoder.hpp"

namespace casegpt {

struct HnswParams {
  std::size_t m = 16;                 // max neighbors per upper layer
  std::size_t m0 = 32;                // max neighbors at layer 0
  std::size_t ef_construction = 200;
  std::size_t ef_search = 100;
  double ml = 0.0;                    // level multiplier; 0 selects 1/ln(m)
  std::uint64_t rng_seed = 42;
  bool heuristic_pruning = false;     // diversity heuristic instead of closest-M

  /// Throws InvalidParams.
  void validate() const;
  double level_multiplier() const;
};

struct Neighbor {
  std::string id;
  double similarity = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// floor(-ln(u) * ml) for u in (0, 1).
int sample_level(double u, double ml);

/// Inner product of two equal-length float spans, fixed summation order.
float dot_product(const float* a, const float* b, std::size_t dim);

/// Hierarchical navigable small world graph over unit vectors, scored by
/// inner product (cosine for unit inputs).
///
/// Thread safety: searches run concurrently with each other; insert,
/// tombstone and save are serialized and hold the exclusive lock only while
/// committing edges.
class HnswIndex {
 public:
  HnswIndex(std::size_t dim, HnswParams params = {});
  ~HnswIndex();
  HnswIndex(HnswIndex&&) noexcept;
  HnswIndex& operator=(HnswIndex&&) noexcept;

  std::size_t dim() const;
  const HnswParams& params() const;
  std::size_t live_count() const;
  std::size_t node_count() const;  // includes tombstoned nodes
  std::optional<std::string> entry_point() const;
  bool contains(const std::string& id) const;  // live ids only
  std::optional<EmbeddingVector> vector_of(const std::string& id) const;
  std::vector<std::string> live_ids() const;

  void insert(const std::string& id, const EmbeddingVector& vector);

  /// Top-k live neighbors, similarity descending then id ascending. The beam
  /// width is max(ef_search, k); ef_search defaults to params().ef_search.
  std::vector<Neighbor> search(const EmbeddingVector& query, std::size_t k,
                               std::optional<std::size_t> ef_search = {}) const;

  /// Full scan over live nodes with the same ordering rules as search().
  std::vector<Neighbor> exact_knn(const EmbeddingVector& query,
                                  std::size_t k) const;

  void tombstone(const std::string& id);

  /// Rebuild containing only live nodes, inserted in their original order.
  HnswIndex compacted() const;

  std::string serialize() const;
  static HnswIndex deserialize(const std::string& bytes);
  void save_snapshot(const std::filesystem::path& path) const;
  static HnswIndex load_snapshot(const std::filesystem::path& path);

  // Graph inspection, used by tests and maintenance tooling.
  struct NodeView {
    std::string id;
    int top_layer = 0;
    bool tombstoned = false;
    std::vector<std::vector<std::uint32_t>> links;  // per layer, internal ids
  };
  std::vector<NodeView> nodes() const;
  /// Empty when every structural invariant holds; otherwise one message per
  /// violation.
  std::vector<std::string> check_invariants() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace casegpt
