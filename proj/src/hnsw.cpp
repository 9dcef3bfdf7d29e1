#include "casegpt/hnsw.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <limits>
#include <mutex>
#include <queue>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <unordered_map>

#include "casegpt/error.hpp"

namespace casegpt {

static_assert(std::endian::native == std::endian::little,
              "snapshot encoding assumes a little-endian host");

void HnswParams::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidParams, "invalid HNSW params: " + msg);
  };
  if (m < 2) fail("M must be >= 2");
  if (m0 < m) fail("M0 must be >= M");
  if (ef_construction < m) fail("ef_construction must be >= M");
  if (ef_search < 1) fail("ef_search must be >= 1");
  if (ml < 0.0 || !std::isfinite(ml)) fail("mL must be > 0");
}

double HnswParams::level_multiplier() const {
  return ml > 0.0 ? ml : 1.0 / std::log(static_cast<double>(m));
}

int sample_level(double u, double ml) {
  return static_cast<int>(std::floor(-std::log(u) * ml));
}

float dot_product(const float* a, const float* b, std::size_t dim) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= dim; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  for (std::size_t j = 0; i < dim; ++i, ++j) acc[j] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

namespace {

using Scored = std::pair<float, std::uint32_t>;

// Higher similarity first, then lower internal id.
struct Better {
  bool operator()(const Scored& a, const Scored& b) const {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  }
};
struct Worse {
  bool operator()(const Scored& a, const Scored& b) const { return Better{}(b, a); }
};

// Visited marks reused across searches on the same thread.
struct VisitedMarks {
  std::vector<std::uint32_t> marks;
  std::uint32_t epoch = 0;

  void reset(std::size_t n) {
    if (marks.size() < n) marks.resize(n + n / 2 + 16, 0);
    if (++epoch == 0) {
      std::fill(marks.begin(), marks.end(), 0);
      epoch = 1;
    }
  }
  bool test_and_set(std::uint32_t i) {
    if (marks[i] == epoch) return true;
    marks[i] = epoch;
    return false;
  }
};

thread_local VisitedMarks tls_visited;

constexpr char kMagic[8] = {'C', 'G', 'H', 'N', 'S', 'W', '\0', '\0'};
constexpr std::uint32_t kSnapshotVersion = 1;
constexpr std::size_t kTimestampOffset = 12;

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void put_floats(const float* p, std::size_t n) {
    out_.append(reinterpret_cast<const char*>(p), n * sizeof(float));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_floats(float* p, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(p, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) {
      throw Error(ErrorCode::kCorruptSnapshot, "snapshot is truncated");
    }
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

namespace {

// Shared mutex that lets a waiting writer in ahead of newly arriving
// readers; glibc's rwlock would otherwise starve inserts under steady search
// traffic. Readers must not take it recursively.
class WriterPriorityMutex {
 public:
  void lock() {
    std::lock_guard gate(gate_);
    rw_.lock();
  }
  void unlock() { rw_.unlock(); }
  void lock_shared() {
    std::lock_guard gate(gate_);
    rw_.lock_shared();
  }
  void unlock_shared() { rw_.unlock_shared(); }

 private:
  std::mutex gate_;
  std::shared_mutex rw_;
};

}  // namespace

struct HnswIndex::State {
  struct Node {
    std::string id;
    int level = 0;
    bool tombstoned = false;
    std::vector<std::vector<std::uint32_t>> links;
  };

  std::size_t dim;
  HnswParams params;
  double ml;
  std::vector<float> vectors;
  std::vector<Node> nodes;
  std::unordered_map<std::string, std::uint32_t> live;
  std::optional<std::uint32_t> entry;
  std::mt19937_64 rng;

  mutable WriterPriorityMutex mutex;  // readers vs. commit
  std::mutex writer;                // serializes mutations

  State(std::size_t d, HnswParams p)
      : dim(d), params(p), ml(p.level_multiplier()), rng(p.rng_seed) {}

  const float* vec(std::uint32_t i) const { return vectors.data() + std::size_t(i) * dim; }
  float sim(const float* q, std::uint32_t i) const { return dot_product(q, vec(i), dim); }
  std::size_t capacity(int layer) const { return layer == 0 ? params.m0 : params.m; }

  std::uint32_t greedy(const float* q, std::uint32_t cur, int layer) const {
    float best = sim(q, cur);
    for (bool changed = true; changed;) {
      changed = false;
      for (std::uint32_t nb : nodes[cur].links[layer]) {
        const float s = sim(q, nb);
        if (s > best) {
          best = s;
          cur = nb;
          changed = true;
        }
      }
    }
    return cur;
  }

  // Beam search on one layer. Returns up to ef results, best first.
  // Tombstoned nodes route the search but are excluded when live_only.
  std::vector<Scored> search_layer(const float* q,
                                   const std::vector<std::uint32_t>& entries,
                                   std::size_t ef, int layer,
                                   bool live_only) const {
    auto& visited = tls_visited;
    visited.reset(nodes.size());
    std::priority_queue<Scored, std::vector<Scored>, Worse> candidates;
    std::priority_queue<Scored, std::vector<Scored>, Better> results;

    for (std::uint32_t ep : entries) {
      if (visited.test_and_set(ep)) continue;
      const Scored s{sim(q, ep), ep};
      candidates.push(s);
      if (!live_only || !nodes[ep].tombstoned) results.push(s);
    }
    while (results.size() > ef) results.pop();
    auto lower = [&] {
      return results.empty() ? -std::numeric_limits<float>::infinity()
                             : results.top().first;
    };

    while (!candidates.empty()) {
      const Scored c = candidates.top();
      if (c.first < lower() && results.size() >= ef) break;
      candidates.pop();
      for (std::uint32_t nb : nodes[c.second].links[layer]) {
        if (visited.test_and_set(nb)) continue;
        const float s = sim(q, nb);
        if (results.size() < ef || s > lower()) {
          candidates.push({s, nb});
          if (!live_only || !nodes[nb].tombstoned) {
            results.push({s, nb});
            if (results.size() > ef) results.pop();
          }
        }
      }
    }
    std::vector<Scored> out;
    out.reserve(results.size());
    while (!results.empty()) {
      out.push_back(results.top());
      results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  // `sorted` must be best first. Returns at most `limit` entries.
  std::vector<std::uint32_t> select_neighbors(const std::vector<Scored>& sorted,
                                              std::size_t limit) const {
    std::vector<std::uint32_t> out;
    if (!params.heuristic_pruning) {
      for (std::size_t i = 0; i < sorted.size() && out.size() < limit; ++i) {
        out.push_back(sorted[i].second);
      }
      return out;
    }
    for (const auto& [s, cand] : sorted) {
      if (out.size() >= limit) break;
      bool keep = true;
      for (std::uint32_t r : out) {
        if (dot_product(vec(cand), vec(r), dim) > s) {
          keep = false;
          break;
        }
      }
      if (keep) out.push_back(cand);
    }
    // Keep pruned connections: fill remaining slots closest first.
    for (const auto& [s, cand] : sorted) {
      if (out.size() >= limit) break;
      if (std::find(out.begin(), out.end(), cand) == out.end()) out.push_back(cand);
    }
    return out;
  }

  static void erase_link(std::vector<std::uint32_t>& list, std::uint32_t target) {
    auto it = std::find(list.begin(), list.end(), target);
    if (it != list.end()) list.erase(it);
  }

  // Shrinks v's list at `layer` to capacity and removes the reverse edge of
  // every dropped neighbor so adjacency stays symmetric.
  void prune(std::uint32_t v, int layer) {
    auto& list = nodes[v].links[layer];
    const std::size_t cap = capacity(layer);
    if (list.size() <= cap) return;
    std::vector<Scored> scored;
    scored.reserve(list.size());
    for (std::uint32_t nb : list) scored.push_back({sim(vec(v), nb), nb});
    std::sort(scored.begin(), scored.end(), Better{});
    std::vector<std::uint32_t> keep = select_neighbors(scored, cap);
    for (const auto& [_, nb] : scored) {
      if (std::find(keep.begin(), keep.end(), nb) == keep.end()) {
        erase_link(nodes[nb].links[layer], v);
      }
    }
    list = std::move(keep);
  }

  void reassign_entry() {
    entry.reset();
    for (std::uint32_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].tombstoned) continue;
      if (!entry || nodes[i].level > nodes[*entry].level) entry = i;
    }
  }

  void check_query(const EmbeddingVector& v) const {
    if (v.dim() != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "vector dim " + std::to_string(v.dim()) + " != index dim " +
                      std::to_string(dim));
    }
  }

  std::vector<Neighbor> to_neighbors(const std::vector<Scored>& scored,
                                     std::size_t k) const {
    std::vector<Neighbor> out;
    out.reserve(scored.size());
    for (const auto& [s, i] : scored) out.push_back({nodes[i].id, double(s)});
    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.similarity > b.similarity ||
             (a.similarity == b.similarity && a.id < b.id);
    });
    if (out.size() > k) out.resize(k);
    return out;
  }
};

HnswIndex::HnswIndex(std::size_t dim, HnswParams params) {
  params.validate();
  if (dim == 0) throw Error(ErrorCode::kInvalidParams, "index dim must be positive");
  state_ = std::make_unique<State>(dim, params);
}

HnswIndex::~HnswIndex() = default;
HnswIndex::HnswIndex(HnswIndex&&) noexcept = default;
HnswIndex& HnswIndex::operator=(HnswIndex&&) noexcept = default;

std::size_t HnswIndex::dim() const { return state_->dim; }
const HnswParams& HnswIndex::params() const { return state_->params; }

std::size_t HnswIndex::live_count() const {
  std::shared_lock lock(state_->mutex);
  return state_->live.size();
}

std::size_t HnswIndex::node_count() const {
  std::shared_lock lock(state_->mutex);
  return state_->nodes.size();
}

std::optional<std::string> HnswIndex::entry_point() const {
  std::shared_lock lock(state_->mutex);
  if (!state_->entry) return std::nullopt;
  return state_->nodes[*state_->entry].id;
}

bool HnswIndex::contains(const std::string& id) const {
  std::shared_lock lock(state_->mutex);
  return state_->live.count(id) > 0;
}

std::optional<EmbeddingVector> HnswIndex::vector_of(const std::string& id) const {
  std::shared_lock lock(state_->mutex);
  auto it = state_->live.find(id);
  if (it == state_->live.end()) return std::nullopt;
  const float* p = state_->vec(it->second);
  return EmbeddingVector::from_unit(std::vector<float>(p, p + state_->dim));
}

std::vector<std::string> HnswIndex::live_ids() const {
  std::shared_lock lock(state_->mutex);
  std::vector<std::string> ids;
  ids.reserve(state_->live.size());
  for (const auto& [id, _] : state_->live) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void HnswIndex::insert(const std::string& id, const EmbeddingVector& vector) {
  State& st = *state_;
  std::lock_guard writer(st.writer);
  st.check_query(vector);
  if (std::abs(vector.norm() - 1.0) > 1e-4) {
    throw Error(ErrorCode::kNotNormalized, "inserted vector is not unit norm");
  }
  if (st.live.count(id)) {
    throw Error(ErrorCode::kDuplicateId, "id '" + id + "' is already indexed");
  }

  const double u = (double(st.rng() >> 11) + 0.5) * 0x1.0p-53;
  const int level = sample_level(u, st.ml);
  const float* q = vector.values().data();

  // Neighbor discovery only reads the graph; other writers are excluded by
  // the writer mutex, so a shared lock is enough here.
  std::vector<std::vector<std::uint32_t>> selected(level + 1);
  {
    std::shared_lock lock(st.mutex);
    if (st.entry) {
      std::uint32_t cur = *st.entry;
      const int top = st.nodes[cur].level;
      for (int l = top; l > level; --l) cur = st.greedy(q, cur, l);
      std::vector<std::uint32_t> entries{cur};
      for (int l = std::min(level, top); l >= 0; --l) {
        auto found = st.search_layer(q, entries, st.params.ef_construction, l, false);
        selected[l] = st.select_neighbors(found, st.capacity(l));
        entries.clear();
        for (const auto& [_, i] : found) entries.push_back(i);
      }
    }
  }

  std::unique_lock lock(st.mutex);
  const auto idx = static_cast<std::uint32_t>(st.nodes.size());
  st.vectors.insert(st.vectors.end(), q, q + st.dim);
  State::Node node;
  node.id = id;
  node.level = level;
  node.links.resize(level + 1);
  st.nodes.push_back(std::move(node));
  for (int l = 0; l <= level; ++l) {
    st.nodes[idx].links[l] = selected[l];
    for (std::uint32_t nb : selected[l]) {
      st.nodes[nb].links[l].push_back(idx);
      st.prune(nb, l);
    }
  }
  st.live.emplace(id, idx);
  if (!st.entry || level > st.nodes[*st.entry].level) st.entry = idx;
}

std::vector<Neighbor> HnswIndex::search(const EmbeddingVector& query, std::size_t k,
                                        std::optional<std::size_t> ef_search) const {
  const State& st = *state_;
  st.check_query(query);
  std::shared_lock lock(st.mutex);
  if (!st.entry) throw Error(ErrorCode::kEmptyIndex, "index has no live nodes");
  if (k == 0) return {};
  const std::size_t ef = std::max(ef_search.value_or(st.params.ef_search), k);
  const float* q = query.values().data();
  std::uint32_t cur = *st.entry;
  for (int l = st.nodes[cur].level; l > 1; --l) cur = st.greedy(q, cur, l);
  std::vector<std::uint32_t> entries{cur};
  if (st.nodes[cur].level >= 1) {
    entries.clear();
    for (const auto& [_, i] : st.search_layer(q, {cur}, ef, 1, false)) entries.push_back(i);
  }
  auto found = st.search_layer(q, entries, ef, 0, true);
  return st.to_neighbors(found, k);
}

std::vector<Neighbor> HnswIndex::exact_knn(const EmbeddingVector& query,
                                           std::size_t k) const {
  const State& st = *state_;
  st.check_query(query);
  std::shared_lock lock(st.mutex);
  if (!st.entry) throw Error(ErrorCode::kEmptyIndex, "index has no live nodes");
  if (k == 0) return {};
  const float* q = query.values().data();
  std::vector<Scored> all;
  all.reserve(st.live.size());
  for (std::uint32_t i = 0; i < st.nodes.size(); ++i) {
    if (!st.nodes[i].tombstoned) all.push_back({st.sim(q, i), i});
  }
  return st.to_neighbors(all, k);
}

void HnswIndex::tombstone(const std::string& id) {
  State& st = *state_;
  std::lock_guard writer(st.writer);
  std::unique_lock lock(st.mutex);
  auto it = st.live.find(id);
  if (it == st.live.end()) {
    throw Error(ErrorCode::kNotFound, "id '" + id + "' is not a live index node");
  }
  const std::uint32_t idx = it->second;
  st.nodes[idx].tombstoned = true;
  st.live.erase(it);
  if (st.entry == idx) st.reassign_entry();
}

HnswIndex HnswIndex::compacted() const {
  std::shared_lock lock(state_->mutex);
  HnswIndex fresh(state_->dim, state_->params);
  for (std::uint32_t i = 0; i < state_->nodes.size(); ++i) {
    if (state_->nodes[i].tombstoned) continue;
    const float* p = state_->vec(i);
    fresh.insert(state_->nodes[i].id,
                 EmbeddingVector::from_unit(std::vector<float>(p, p + state_->dim)));
  }
  return fresh;
}

// Layout (little-endian):
//   magic[8] version:u32 created_unix:u64 dim:u32
//   m:u32 m0:u32 ef_construction:u32 ef_search:u32 ml:f64 seed:u64 heuristic:u8
//   rng_state:string node_count:u64 entry:i64
//   per node: id:string level:u32 tombstone:u8 vector:f32[dim]
//             per layer 0..level: count:u32 links:u32[count]
//   checksum:u64 (FNV-1a over every preceding byte)
std::string HnswIndex::serialize() const {
  const State& st = *state_;
  std::shared_lock lock(st.mutex);
  Writer w;
  w.bytes().append(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kSnapshotVersion);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(std::time(nullptr)));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.params.m));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.params.m0));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.params.ef_construction));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.params.ef_search));
  w.put<double>(st.params.ml);
  w.put<std::uint64_t>(st.params.rng_seed);
  w.put<std::uint8_t>(st.params.heuristic_pruning ? 1 : 0);
  std::ostringstream rng_state;
  rng_state << st.rng;
  w.put_string(rng_state.str());
  w.put<std::uint64_t>(st.nodes.size());
  w.put<std::int64_t>(st.entry ? std::int64_t(*st.entry) : -1);
  for (std::uint32_t i = 0; i < st.nodes.size(); ++i) {
    const auto& n = st.nodes[i];
    w.put_string(n.id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(n.level));
    w.put<std::uint8_t>(n.tombstoned ? 1 : 0);
    w.put_floats(st.vec(i), st.dim);
    for (const auto& layer : n.links) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.size()));
      for (std::uint32_t nb : layer) w.put<std::uint32_t>(nb);
    }
  }
  const std::uint64_t checksum = fnv1a(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(checksum);
  return std::move(w.bytes());
}

HnswIndex HnswIndex::deserialize(const std::string& bytes) {
  constexpr std::size_t kMinSize = sizeof kMagic + 4 + 8 + sizeof(std::uint64_t);
  if (bytes.size() < kMinSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::kCorruptSnapshot, "not an HNSW snapshot");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version != kSnapshotVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "snapshot version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kSnapshotVersion) + ")");
  }
  const std::size_t body_end = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body_end, sizeof stored);
  if (stored != fnv1a(bytes.data(), body_end)) {
    throw Error(ErrorCode::kCorruptSnapshot, "snapshot checksum mismatch");
  }

  Reader r(bytes, body_end);
  char magic[sizeof kMagic];
  for (char& c : magic) c = r.get<char>();
  r.get<std::uint32_t>();  // version
  r.get<std::uint64_t>();  // created_unix
  const auto dim = r.get<std::uint32_t>();
  HnswParams p;
  p.m = r.get<std::uint32_t>();
  p.m0 = r.get<std::uint32_t>();
  p.ef_construction = r.get<std::uint32_t>();
  p.ef_search = r.get<std::uint32_t>();
  p.ml = r.get<double>();
  p.rng_seed = r.get<std::uint64_t>();
  p.heuristic_pruning = r.get<std::uint8_t>() != 0;

  HnswIndex index = [&] {
    try {
      return HnswIndex(dim, p);
    } catch (const Error& e) {
      throw Error(ErrorCode::kCorruptSnapshot, std::string("snapshot header: ") + e.what());
    }
  }();
  State& st = *index.state_;
  std::istringstream rng_state(r.get_string());
  rng_state >> st.rng;
  if (!rng_state) throw Error(ErrorCode::kCorruptSnapshot, "snapshot RNG state unreadable");

  const auto count = r.get<std::uint64_t>();
  const auto entry = r.get<std::int64_t>();
  if (count > bytes.size()) throw Error(ErrorCode::kCorruptSnapshot, "node count out of range");
  st.nodes.resize(count);
  st.vectors.resize(count * dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto& n = st.nodes[i];
    n.id = r.get_string();
    n.level = static_cast<int>(r.get<std::uint32_t>());
    if (n.level < 0 || n.level > 64) throw Error(ErrorCode::kCorruptSnapshot, "node level out of range");
    n.tombstoned = r.get<std::uint8_t>() != 0;
    r.get_floats(st.vectors.data() + i * dim, dim);
    n.links.resize(n.level + 1);
    for (auto& layer : n.links) {
      const auto links = r.get<std::uint32_t>();
      if (links > count) throw Error(ErrorCode::kCorruptSnapshot, "link count out of range");
      layer.resize(links);
      for (auto& nb : layer) {
        nb = r.get<std::uint32_t>();
        if (nb >= count) throw Error(ErrorCode::kCorruptSnapshot, "link target out of range");
      }
    }
    if (!n.tombstoned && !st.live.emplace(n.id, std::uint32_t(i)).second) {
      throw Error(ErrorCode::kCorruptSnapshot, "duplicate live id '" + n.id + "'");
    }
  }
  if (r.pos() != body_end) throw Error(ErrorCode::kCorruptSnapshot, "trailing bytes in snapshot");
  if (entry >= 0) {
    if (std::uint64_t(entry) >= count || st.nodes[entry].tombstoned) {
      throw Error(ErrorCode::kCorruptSnapshot, "snapshot entry point invalid");
    }
    st.entry = static_cast<std::uint32_t>(entry);
  } else if (!st.live.empty()) {
    throw Error(ErrorCode::kCorruptSnapshot, "snapshot has live nodes but no entry point");
  }
  return index;
}

void HnswIndex::save_snapshot(const std::filesystem::path& path) const {
  std::lock_guard writer(state_->writer);
  const std::string bytes = serialize();
  // Write to a sibling file then rename so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot write snapshot " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot rename snapshot: " + ec.message());
}

HnswIndex HnswIndex::load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open snapshot " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::vector<HnswIndex::NodeView> HnswIndex::nodes() const {
  std::shared_lock lock(state_->mutex);
  std::vector<NodeView> out;
  out.reserve(state_->nodes.size());
  for (const auto& n : state_->nodes) out.push_back({n.id, n.level, n.tombstoned, n.links});
  return out;
}

std::vector<std::string> HnswIndex::check_invariants() const {
  const State& st = *state_;
  std::shared_lock lock(st.mutex);
  std::vector<std::string> problems;
  auto report = [&](std::uint32_t i, const std::string& msg) {
    problems.push_back("node " + st.nodes[i].id + " (#" + std::to_string(i) + "): " + msg);
  };
  int live_top = -1;
  for (std::uint32_t i = 0; i < st.nodes.size(); ++i) {
    const auto& n = st.nodes[i];
    if (!n.tombstoned) live_top = std::max(live_top, n.level);
    double norm = 0.0;
    for (std::size_t d = 0; d < st.dim; ++d) norm += double(st.vec(i)[d]) * st.vec(i)[d];
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-4) report(i, "vector not unit norm");
    for (int l = 0; l <= n.level; ++l) {
      const auto& list = n.links[l];
      if (list.size() > st.capacity(l)) {
        report(i, "layer " + std::to_string(l) + " degree " + std::to_string(list.size()) +
                      " exceeds " + std::to_string(st.capacity(l)));
      }
      for (std::uint32_t nb : list) {
        if (nb == i) {
          report(i, "self loop at layer " + std::to_string(l));
          continue;
        }
        if (nb >= st.nodes.size() || st.nodes[nb].level < l) {
          report(i, "dangling link at layer " + std::to_string(l));
          continue;
        }
        const auto& back = st.nodes[nb].links[l];
        if (std::find(back.begin(), back.end(), i) == back.end()) {
          report(i, "asymmetric edge to #" + std::to_string(nb) + " at layer " +
                        std::to_string(l));
        }
        if (std::count(list.begin(), list.end(), nb) > 1) {
          report(i, "duplicate edge at layer " + std::to_string(l));
        }
      }
    }
  }
  if (st.live.empty() != !st.entry) problems.push_back("entry point presence mismatch");
  if (st.entry) {
    const auto& e = st.nodes[*st.entry];
    if (e.tombstoned) problems.push_back("entry point is tombstoned");
    if (e.level != live_top) problems.push_back("entry point is not at the top live layer");
  }
  return problems;
}

}  // namespace casegpt
