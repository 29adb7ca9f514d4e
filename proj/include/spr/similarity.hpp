#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spr/dataset.hpp"
#include "spr/errors.hpp"
#include "spr/hash.hpp"
#include "spr/io.hpp"
#include "spr/parallel.hpp"

namespace spr {

enum class Side : std::uint8_t { user = 0, item = 1 };

/// How a row of the co-occurrence matrix G G^T is normalized.
///   row_degree: |N_a ∩ N_b| / |N_a|
///   row_sum:    |N_a ∩ N_b| / sum_c |N_a ∩ N_c|   (sum includes c = a)
enum class Normalization : std::uint8_t { row_degree = 0, row_sum = 1 };

inline std::string_view to_string(Side s) { return s == Side::user ? "user" : "item"; }
inline std::string_view to_string(Normalization n) {
  return n == Normalization::row_degree ? "row-degree" : "row-sum";
}
inline Side parse_side(std::string_view s) {
  if (s == "user") return Side::user;
  if (s == "item") return Side::item;
  throw ConfigError("unknown side '" + std::string(s) + "' (expected user|item)");
}
inline Normalization parse_normalization(std::string_view s) {
  if (s == "row-degree") return Normalization::row_degree;
  if (s == "row-sum") return Normalization::row_sum;
  throw ConfigError("unknown normalization '" + std::string(s) + "' (expected row-degree|row-sum)");
}

struct Neighbor {
  NodeId id = 0;
  float score = 0.0f;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct IndexMeta {
  Side side = Side::user;
  Normalization normalization = Normalization::row_degree;
  double k_percent = 0.01;
  std::uint64_t dataset_checksum = 0;
  /// Seconds since epoch; 0 unless the caller stamps it, which keeps
  /// rebuilt files byte-identical.
  std::int64_t build_time = 0;
  friend bool operator==(const IndexMeta&, const IndexMeta&) = default;
};

/// Per-node top-k% most similar nodes on one side of the bipartite graph,
/// sorted by descending score then ascending ID. Only positive scores are
/// kept, so a list may be shorter than quota().
class SimilarityIndex {
 public:
  SimilarityIndex() : offsets_(1, 0) {}

  const IndexMeta& meta() const { return meta_; }
  IndexMeta& meta() { return meta_; }
  std::size_t num_nodes() const { return offsets_.size() - 1; }
  std::size_t quota() const { return quota_; }

  std::span<const Neighbor> neighbors(NodeId node) const {
    return {entries_.data() + offsets_[node], offsets_[node + 1] - offsets_[node]};
  }

  /// Nodes whose neighbor list is empty: no interactions, or no node
  /// sharing any of them.
  const std::vector<NodeId>& empty_nodes() const { return empty_; }

  std::size_t total_entries() const { return entries_.size(); }

  friend bool operator==(const SimilarityIndex& a, const SimilarityIndex& b) {
    return a.meta_ == b.meta_ && a.quota_ == b.quota_ && a.offsets_ == b.offsets_ &&
           a.entries_ == b.entries_;
  }

 private:
  friend SimilarityIndex build_similarity_index(const InteractionDataset&, Side, double,
                                                Normalization);
  friend SimilarityIndex decode_index(std::span<const std::uint8_t>);

  void collect_empty() {
    empty_.clear();
    for (std::size_t a = 0; a < num_nodes(); ++a)
      if (offsets_[a + 1] == offsets_[a]) empty_.push_back(static_cast<NodeId>(a));
  }

  IndexMeta meta_;
  std::size_t quota_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<Neighbor> entries_;
  std::vector<NodeId> empty_;
};

/// floor(k_percent * n), tolerant of k_percent values like 0.07 whose
/// binary product lands a hair below an integer.
inline std::size_t neighbor_quota(double k_percent, std::size_t n) {
  return static_cast<std::size_t>(std::floor(k_percent * static_cast<double>(n) + 1e-9));
}

namespace detail {

inline const CsrMatrix& history_of(const InteractionDataset& d, Side side) {
  return side == Side::user ? d.train() : d.item_users();
}
inline const CsrMatrix& bridge_of(const InteractionDataset& d, Side side) {
  return side == Side::user ? d.item_users() : d.train();
}

inline float normalized_score(std::size_t overlap, std::size_t denom) {
  return static_cast<float>(static_cast<double>(overlap) / static_cast<double>(denom));
}

}  // namespace detail

/// Builds the index by sparse co-occurrence accumulation: for an owner a,
/// every node b reachable through a shared interaction gets its overlap
/// count incremented. Never materializes the N x N matrix.
inline SimilarityIndex build_similarity_index(const InteractionDataset& d, Side side,
                                              double k_percent,
                                              Normalization norm = Normalization::row_degree) {
  if (!(k_percent > 0.0 && k_percent <= 1.0))
    throw ConfigError("k_percent must lie in (0, 1]");
  const CsrMatrix& history = detail::history_of(d, side);
  const CsrMatrix& bridge = detail::bridge_of(d, side);
  const std::size_t n = history.rows();
  const std::size_t quota = neighbor_quota(k_percent, n);
  if (quota == 0)
    throw ConfigError("quota must be >= 1 for at least one node: k_percent * " + std::to_string(n) +
                      " < 1");

  std::vector<std::vector<Neighbor>> lists(n);
  parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::uint32_t> overlap(n, 0);
    std::vector<NodeId> touched;
    std::vector<std::pair<std::uint32_t, NodeId>> ranked;
    for (std::size_t a = lo; a < hi; ++a) {
      const auto own = history.row(a);
      if (own.empty()) continue;
      touched.clear();
      std::size_t row_sum = 0;
      for (NodeId shared : own) {
        const auto others = bridge.row(shared);
        row_sum += others.size();
        for (NodeId b : others) {
          if (overlap[b]++ == 0) touched.push_back(b);
        }
      }
      ranked.clear();
      for (NodeId b : touched) {
        if (b != a) ranked.emplace_back(overlap[b], b);
        overlap[b] = 0;
      }
      // Within a row every score shares one denominator, so ordering by
      // the integer overlap is ordering by score.
      auto better = [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
      };
      const std::size_t keep = std::min(quota, ranked.size());
      std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                        ranked.end(), better);
      const std::size_t denom = norm == Normalization::row_degree ? own.size() : row_sum;
      auto& out = lists[a];
      out.reserve(keep);
      for (std::size_t k = 0; k < keep; ++k)
        out.push_back({ranked[k].second, detail::normalized_score(ranked[k].first, denom)});
    }
  });

  SimilarityIndex index;
  index.meta_ = {side, norm, k_percent, d.checksum(), 0};
  index.quota_ = quota;
  index.offsets_.assign(1, 0);
  for (auto& list : lists) {
    index.entries_.insert(index.entries_.end(), list.begin(), list.end());
    index.offsets_.push_back(index.entries_.size());
  }
  index.collect_empty();
  return index;
}

/// Pointwise probe: |N_a ∩ N_b| / |N_a|, 0 when N_a is empty.
inline double similarity_score(const InteractionDataset& d, NodeId a, NodeId b, Side side) {
  const CsrMatrix& history = detail::history_of(d, side);
  if (a >= history.rows() || b >= history.rows())
    throw ValidationError("similarity_score: node id out of range");
  const auto na = history.row(a);
  const auto nb = history.row(b);
  if (na.empty()) return 0.0;
  std::size_t shared = 0;
  auto p = na.begin();
  auto q = nb.begin();
  while (p != na.end() && q != nb.end()) {
    if (*p < *q) {
      ++p;
    } else if (*q < *p) {
      ++q;
    } else {
      ++shared;
      ++p;
      ++q;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(na.size());
}

// Binary layout (little-endian):
//   char[4] "SPRS" | u32 version | u8 side | u8 normalization | u16 0
//   f64 k_percent | u32 node_count | u32 quota | u64 dataset_checksum
//   i64 build_time | node_count x { u32 length | length x (u32 id, f32 score) }
inline constexpr std::string_view kIndexMagic = "SPRS";
inline constexpr std::uint32_t kIndexVersion = 1;

inline std::vector<std::uint8_t> encode_index(const SimilarityIndex& index) {
  ByteWriter w;
  w.raw(kIndexMagic);
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(index.meta().side));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(index.meta().normalization));
  w.put<std::uint16_t>(0);
  w.put<double>(index.meta().k_percent);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.num_nodes()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.quota()));
  w.put<std::uint64_t>(index.meta().dataset_checksum);
  w.put<std::int64_t>(index.meta().build_time);
  for (std::size_t a = 0; a < index.num_nodes(); ++a) {
    const auto list = index.neighbors(static_cast<NodeId>(a));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
    for (const Neighbor& nb : list) {
      w.put<std::uint32_t>(nb.id);
      w.put<float>(nb.score);
    }
  }
  return w.bytes();
}

inline SimilarityIndex decode_index(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != kIndexMagic) throw FormatError("not a similarity index file (bad magic)");
  if (const auto v = r.get<std::uint32_t>(); v != kIndexVersion)
    throw FormatError("unsupported similarity index version " + std::to_string(v));
  SimilarityIndex index;
  const auto side = r.get<std::uint8_t>();
  const auto norm = r.get<std::uint8_t>();
  if (side > 1 || norm > 1) throw FormatError("similarity index: bad side/normalization tag");
  index.meta_.side = static_cast<Side>(side);
  index.meta_.normalization = static_cast<Normalization>(norm);
  r.get<std::uint16_t>();
  index.meta_.k_percent = r.get<double>();
  const auto nodes = r.get<std::uint32_t>();
  index.quota_ = r.get<std::uint32_t>();
  index.meta_.dataset_checksum = r.get<std::uint64_t>();
  index.meta_.build_time = r.get<std::int64_t>();
  index.offsets_.assign(1, 0);
  index.offsets_.reserve(std::size_t{nodes} + 1);
  for (std::uint32_t a = 0; a < nodes; ++a) {
    const auto len = r.get<std::uint32_t>();
    if (len > index.quota_ || std::size_t{len} * 8 > r.remaining())
      throw FormatError("similarity index: corrupt neighbor list");
    for (std::uint32_t k = 0; k < len; ++k) {
      Neighbor nb;
      nb.id = r.get<std::uint32_t>();
      nb.score = r.get<float>();
      if (nb.id >= nodes || nb.id == a) throw FormatError("similarity index: bad neighbor id");
      index.entries_.push_back(nb);
    }
    index.offsets_.push_back(index.entries_.size());
  }
  if (r.remaining() != 0) throw FormatError("similarity index: trailing bytes");
  index.collect_empty();
  return index;
}

inline void save_index(const SimilarityIndex& index, const std::string& path) {
  atomic_write_file(path, encode_index(index));
}

/// Loads without a staleness check.
inline SimilarityIndex load_index(const std::string& path) { return decode_index(read_file(path)); }

/// Loads and refuses an index built for a different dataset.
inline SimilarityIndex load_index(const std::string& path, const InteractionDataset& d) {
  SimilarityIndex index = load_index(path);
  if (index.meta().dataset_checksum != d.checksum())
    throw ChecksumError("similarity index " + path + " was built for a different dataset (rebuild it from the same train and test files)");
  return index;
}

inline std::uint64_t index_checksum(const SimilarityIndex& index) {
  Fnv1a h;
  const auto bytes = encode_index(index);
  h.bytes(bytes.data(), bytes.size());
  return h.digest();
}

}  // namespace spr
