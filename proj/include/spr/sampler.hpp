#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "spr/dataset.hpp"
#include "spr/errors.hpp"
#include "spr/rng.hpp"
#include "spr/similarity.hpp"

namespace spr {

enum class BatchKind : std::uint8_t { pointwise = 0, pairwise = 1, quadruple = 2 };

inline std::string_view to_string(BatchKind k) {
  switch (k) {
    case BatchKind::pointwise: return "pointwise";
    case BatchKind::pairwise: return "pairwise";
    case BatchKind::quadruple: return "quadruple";
  }
  return "?";
}

struct PointwiseRow {
  NodeId user;
  NodeId item;
  std::uint8_t label;
  friend bool operator==(const PointwiseRow&, const PointwiseRow&) = default;
};

struct PairwiseRow {
  NodeId user;
  NodeId pos;
  NodeId neg;
  friend bool operator==(const PairwiseRow&, const PairwiseRow&) = default;
};

/// <u, l, i, j>: user, a similar user, u's positive, u's negative.
struct QuadrupleRow {
  NodeId user;
  NodeId similar;
  NodeId pos;
  NodeId neg;
  friend bool operator==(const QuadrupleRow&, const QuadrupleRow&) = default;
};

struct TrainingBatch {
  std::variant<std::vector<PointwiseRow>, std::vector<PairwiseRow>, std::vector<QuadrupleRow>> rows;
  /// Candidates the quadruple sampler passed over (no neighbors, or no
  /// valid positive/negative).
  std::size_t skipped = 0;

  BatchKind kind() const { return static_cast<BatchKind>(rows.index()); }
  std::size_t size() const {
    return std::visit([](const auto& v) { return v.size(); }, rows);
  }

  template <typename Row>
  const std::vector<Row>& as() const {
    if (const auto* v = std::get_if<std::vector<Row>>(&rows)) return *v;
    throw ValidationError("batch kind mismatch: got " + std::string(to_string(kind())));
  }

  friend bool operator==(const TrainingBatch&, const TrainingBatch&) = default;
};

inline void write_batch_csv(std::ostream& os, const TrainingBatch& batch, bool header = true) {
  if (header) os << "kind,u,l,i,j,label\n";
  const auto kind = to_string(batch.kind());
  std::visit(
      [&](const auto& rows) {
        using Row = typename std::decay_t<decltype(rows)>::value_type;
        for (const Row& r : rows) {
          if constexpr (std::is_same_v<Row, PointwiseRow>)
            os << kind << ',' << r.user << ",," << r.item << ",," << int{r.label} << '\n';
          else if constexpr (std::is_same_v<Row, PairwiseRow>)
            os << kind << ',' << r.user << ",," << r.pos << ',' << r.neg << ",\n";
          else
            os << kind << ',' << r.user << ',' << r.similar << ',' << r.pos << ',' << r.neg << ",\n";
        }
      },
      batch.rows);
}

/// Seeded batch producer over an immutable dataset. Owns its generator;
/// one instance per thread.
class Sampler {
 public:
  static constexpr std::size_t kRejectionCap = 100;

  Sampler(const InteractionDataset& data, std::uint64_t seed) : Sampler(data, Rng(seed)) {}

  Sampler(const InteractionDataset& data, Rng rng) : data_(&data), rng_(std::move(rng)) {
    for (std::size_t u = 0; u < data.num_users(); ++u) {
      const std::size_t deg = data.train().degree(u);
      if (deg > 0 && deg < data.num_items()) trainable_.push_back(static_cast<NodeId>(u));
    }
  }

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  /// Users with at least one positive and at least one negative.
  const std::vector<NodeId>& trainable_users() const { return trainable_; }

  /// Uniform over the complement of N_u. Rejection first, then an exact
  /// walk over the sorted positives when the user is nearly saturated.
  NodeId draw_negative(NodeId u) {
    const auto pos = data_->positives(u);
    const std::size_t n_items = data_->num_items();
    for (std::size_t t = 0; t < kRejectionCap; ++t) {
      const auto j = static_cast<NodeId>(rng_.below(n_items));
      if (!std::binary_search(pos.begin(), pos.end(), j)) return j;
    }
    if (pos.size() >= n_items) throw ValidationError("user " + std::to_string(u) + " has no negatives");
    auto j = static_cast<NodeId>(rng_.below(n_items - pos.size()));
    for (NodeId p : pos) {
      if (p <= j) ++j;
      else break;
    }
    return j;
  }

  NodeId draw_positive(NodeId u) {
    const auto pos = data_->positives(u);
    return pos[rng_.below(pos.size())];
  }

  /// One positive (uniform over training interactions) followed by
  /// neg_per_pos negatives of the same user, repeated up to batch_size rows.
  TrainingBatch pointwise(std::size_t batch_size, std::size_t neg_per_pos) {
    if (neg_per_pos < 1) throw ConfigError("neg_per_pos must be >= 1");
    require_trainable();
    const auto& offsets = data_->train().offsets();
    const auto& items = data_->train().indices();
    std::vector<PointwiseRow> rows;
    rows.reserve(batch_size);
    while (rows.size() < batch_size) {
      NodeId u = 0;
      NodeId i = 0;
      bool found = false;
      for (std::size_t t = 0; t < kRejectionCap && !found; ++t) {
        const std::size_t e = rng_.below(items.size());
        u = static_cast<NodeId>(std::upper_bound(offsets.begin(), offsets.end(), e) - offsets.begin() - 1);
        i = items[e];
        found = data_->train().degree(u) < data_->num_items();
      }
      if (!found) throw ValidationError("pointwise sampler: could not find a user with negatives");
      rows.push_back({u, i, 1});
      for (std::size_t k = 0; k < neg_per_pos && rows.size() < batch_size; ++k)
        rows.push_back({u, draw_negative(u), 0});
    }
    return {std::move(rows), 0};
  }

  TrainingBatch pairwise(std::size_t batch_size) {
    require_trainable();
    std::vector<PairwiseRow> rows;
    rows.reserve(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
      const NodeId u = trainable_[rng_.below(trainable_.size())];
      const NodeId i = draw_positive(u);
      rows.push_back({u, i, draw_negative(u)});
    }
    return {std::move(rows), 0};
  }

  /// Quadruple sampling with oversampling rate gamma. Candidates come from
  /// a list of batch_size * gamma^2 uniform user IDs, each occurrence
  /// yielding at most one quadruple; the list is refreshed if exhausted
  /// before batch_size * gamma rows are collected. List entries are drawn
  /// as they are consumed, which is the same distribution as drawing the
  /// whole list up front without paying for the unused tail.
  TrainingBatch quadruple(const SimilarityIndex& index, std::size_t batch_size, std::size_t gamma) {
    if (gamma < 1) throw ConfigError("gamma must be >= 1");
    check_index(index);
    const std::size_t target = batch_size * gamma;
    const std::size_t list_len = batch_size * gamma * gamma;
    const auto n_users = data_->num_users();
    std::vector<QuadrupleRow> rows;
    rows.reserve(target);
    std::size_t skipped = 0;
    std::size_t consumed = 0;
    while (rows.size() < target) {
      if (consumed == list_len) consumed = 0;  // regenerate
      ++consumed;
      const auto u = static_cast<NodeId>(rng_.below(n_users));
      const std::size_t deg = data_->train().degree(u);
      const auto similar = index.neighbors(u);
      if (deg == 0 || deg >= data_->num_items() || similar.empty()) {
        ++skipped;
        continue;
      }
      const NodeId i = draw_positive(u);
      const NodeId j = draw_negative(u);
      const NodeId l = similar[rng_.below(similar.size())].id;
      rows.push_back({u, l, i, j});
    }
    return {std::move(rows), skipped};
  }

 private:
  void require_trainable() const {
    if (trainable_.empty())
      throw ValidationError("no user has both a positive and a negative item to sample");
  }

  void check_index(const SimilarityIndex& index) {
    if (index.meta().side != Side::user) throw ValidationError("quadruple sampling needs a user-side index");
    if (index.meta().dataset_checksum != data_->checksum() || index.num_nodes() != data_->num_users())
      throw ChecksumError("similarity index does not belong to this dataset");
    if (checked_index_ == &index) return;
    bool any = false;
    for (NodeId u : trainable_) any = any || !index.neighbors(u).empty();
    if (!any) throw ValidationError("no trainable user has a similar user; quadruple sampling impossible");
    checked_index_ = &index;
  }

  const InteractionDataset* data_;
  Rng rng_;
  std::vector<NodeId> trainable_;
  const SimilarityIndex* checked_index_ = nullptr;
};

inline TrainingBatch sample_pointwise(const InteractionDataset& d, std::size_t batch_size,
                                      std::size_t neg_per_pos, Rng& rng) {
  Sampler s(d, rng);
  auto b = s.pointwise(batch_size, neg_per_pos);
  rng = s.rng();
  return b;
}

inline TrainingBatch sample_pairwise(const InteractionDataset& d, std::size_t batch_size, Rng& rng) {
  Sampler s(d, rng);
  auto b = s.pairwise(batch_size);
  rng = s.rng();
  return b;
}

inline TrainingBatch sample_quadruple(const InteractionDataset& d, const SimilarityIndex& index,
                                      std::size_t batch_size, std::size_t gamma, Rng& rng) {
  Sampler s(d, rng);
  auto b = s.quadruple(index, batch_size, gamma);
  rng = s.rng();
  return b;
}

}  // namespace spr
