#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace spr {

using NodeId = std::uint32_t;

/// Compressed sparse row pattern (no values). Column lists are kept sorted
/// and deduplicated by construction.
class CsrMatrix {
 public:
  CsrMatrix() : offsets_(1, 0) {}

  /// Builds from (row, col) pairs. Duplicates are dropped; the number
  /// dropped is written to *duplicates when given.
  static CsrMatrix from_pairs(std::size_t rows, std::size_t cols,
                              std::vector<std::pair<NodeId, NodeId>> pairs,
                              std::size_t* duplicates = nullptr) {
    std::sort(pairs.begin(), pairs.end());
    const auto last = std::unique(pairs.begin(), pairs.end());
    if (duplicates) *duplicates = static_cast<std::size_t>(pairs.end() - last);
    pairs.erase(last, pairs.end());

    CsrMatrix m;
    m.cols_ = cols;
    m.offsets_.assign(rows + 1, 0);
    m.indices_.reserve(pairs.size());
    for (const auto& [r, c] : pairs) {
      ++m.offsets_[r + 1];
      m.indices_.push_back(c);
    }
    for (std::size_t r = 0; r < rows; ++r) m.offsets_[r + 1] += m.offsets_[r];
    return m;
  }

  std::size_t rows() const { return offsets_.size() - 1; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return indices_.size(); }

  std::span<const NodeId> row(std::size_t r) const {
    return {indices_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  std::size_t degree(std::size_t r) const { return offsets_[r + 1] - offsets_[r]; }

  bool contains(std::size_t r, NodeId c) const {
    const auto list = row(r);
    return std::binary_search(list.begin(), list.end(), c);
  }

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<NodeId>& indices() const { return indices_; }

  CsrMatrix transpose() const {
    CsrMatrix t;
    t.cols_ = rows();
    t.offsets_.assign(cols_ + 1, 0);
    for (NodeId c : indices_) ++t.offsets_[c + 1];
    for (std::size_t c = 0; c < cols_; ++c) t.offsets_[c + 1] += t.offsets_[c];
    t.indices_.resize(indices_.size());
    std::vector<std::size_t> cursor(t.offsets_.begin(), t.offsets_.end() - 1);
    // Row-major scan emits each transposed row already sorted.
    for (std::size_t r = 0; r < rows(); ++r)
      for (NodeId c : row(r)) t.indices_[cursor[c]++] = static_cast<NodeId>(r);
    return t;
  }

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;

 private:
  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> indices_;
};

}  // namespace spr
