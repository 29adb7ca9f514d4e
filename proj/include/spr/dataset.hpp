#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spr/csr.hpp"
#include "spr/errors.hpp"
#include "spr/hash.hpp"
#include "spr/rng.hpp"

namespace spr {

using InteractionPairs = std::vector<std::pair<NodeId, NodeId>>;

/// Immutable user-item interaction data with a train/test split.
///
/// Rows of train() are the per-user positive sets N_u, sorted and
/// deduplicated. item_users() is the exact transpose of train().
class InteractionDataset {
 public:
  InteractionDataset() = default;

  /// ID spaces are max(observed ID) + 1, widened to min_users/min_items
  /// when those are larger. Throws ValidationError on train/test overlap.
  static InteractionDataset from_pairs(InteractionPairs train, InteractionPairs test,
                                       std::size_t min_users = 0, std::size_t min_items = 0) {
    std::size_t users = min_users;
    std::size_t items = min_items;
    for (const auto* pairs : {&train, &test})
      for (const auto& [u, i] : *pairs) {
        users = std::max<std::size_t>(users, std::size_t{u} + 1);
        items = std::max<std::size_t>(items, std::size_t{i} + 1);
      }

    InteractionDataset d;
    std::size_t dup_train = 0;
    std::size_t dup_test = 0;
    d.train_ = CsrMatrix::from_pairs(users, items, std::move(train), &dup_train);
    d.test_ = CsrMatrix::from_pairs(users, items, std::move(test), &dup_test);
    d.duplicates_ = dup_train + dup_test;
    d.validate_disjoint();
    d.item_users_ = d.train_.transpose();
    for (std::size_t u = 0; u < users; ++u)
      if (d.train_.degree(u) == 0) d.empty_train_users_.push_back(static_cast<NodeId>(u));
    d.checksum_ = d.compute_checksum();
    return d;
  }

  std::size_t num_users() const { return train_.rows(); }
  std::size_t num_items() const { return train_.cols(); }

  const CsrMatrix& train() const { return train_; }
  const CsrMatrix& test() const { return test_; }
  /// Items to users over the training interactions.
  const CsrMatrix& item_users() const { return item_users_; }

  std::span<const NodeId> positives(NodeId u) const { return train_.row(u); }
  bool is_positive(NodeId u, NodeId i) const { return train_.contains(u, i); }

  /// Training interaction count M.
  std::size_t num_train() const { return train_.nnz(); }

  /// Duplicate (u, i) pairs dropped while building.
  std::size_t duplicates_dropped() const { return duplicates_; }
  /// Users retained with no training interactions; excluded from sampling
  /// and evaluation.
  const std::vector<NodeId>& empty_train_users() const { return empty_train_users_; }

  std::uint64_t checksum() const { return checksum_; }

  friend bool operator==(const InteractionDataset& a, const InteractionDataset& b) {
    return a.train_ == b.train_ && a.test_ == b.test_;
  }

 private:
  void validate_disjoint() const {
    std::vector<std::pair<NodeId, NodeId>> overlap;
    for (std::size_t u = 0; u < train_.rows(); ++u) {
      const auto a = train_.row(u);
      const auto b = test_.row(u);
      std::vector<NodeId> both;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
      for (NodeId i : both) overlap.emplace_back(static_cast<NodeId>(u), i);
    }
    if (overlap.empty()) return;
    std::ostringstream msg;
    msg << "train/test overlap in " << overlap.size() << " pair(s):";
    for (std::size_t k = 0; k < std::min<std::size_t>(overlap.size(), 10); ++k)
      msg << " (" << overlap[k].first << "," << overlap[k].second << ")";
    if (overlap.size() > 10) msg << " ...";
    throw ValidationError(msg.str());
  }

  std::uint64_t compute_checksum() const {
    Fnv1a h;
    h.value<std::uint64_t>(num_users());
    h.value<std::uint64_t>(num_items());
    for (const CsrMatrix* m : {&train_, &test_}) {
      for (std::size_t off : m->offsets()) h.value<std::uint64_t>(off);
      h.values<NodeId>(m->indices());
    }
    return h.digest();
  }

  CsrMatrix train_;
  CsrMatrix test_;
  CsrMatrix item_users_;
  std::size_t duplicates_ = 0;
  std::vector<NodeId> empty_train_users_;
  std::uint64_t checksum_ = 0;
};

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double density = 0.0;
};

/// Counts train plus test interactions (the published split statistics
/// count both). Density is a plain fraction, not a percentage.
inline DatasetStats stats(const InteractionDataset& d) {
  DatasetStats s;
  s.users = d.num_users();
  s.items = d.num_items();
  s.interactions = d.train().nnz() + d.test().nnz();
  const double cells = static_cast<double>(s.users) * static_cast<double>(s.items);
  s.density = cells > 0 ? static_cast<double>(s.interactions) / cells : 0.0;
  return s;
}

inline void write_stats_csv(std::ostream& os, const DatasetStats& s) {
  os << "users,items,interactions,density\n"
     << s.users << ',' << s.items << ',' << s.interactions << ','
     << std::setprecision(10) << s.density << '\n';
}

namespace detail {

struct ParsedFile {
  InteractionPairs pairs;
  std::size_t user_space = 0;  // 1 + largest user ID seen, including bare lines
};

inline ParsedFile read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interaction file: " + path);
  ParsedFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const char* p = line.data();
    const char* end = p + line.size();
    bool have_user = false;
    NodeId user = 0;
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      const char* tok = p;
      while (p < end && *p != ' ' && *p != '\t' && *p != '\r') ++p;
      std::uint64_t v = 0;
      auto [next, ec] = std::from_chars(tok, p, v);
      if (ec != std::errc() || next != p || v >= 0xFFFFFFFFULL)
        throw ParseError(path, line_no,
                         "expected a nonnegative integer, got '" + std::string(tok, p) + "'");
      if (!have_user) {
        user = static_cast<NodeId>(v);
        have_user = true;
        out.user_space = std::max<std::size_t>(out.user_space, std::size_t{user} + 1);
      } else {
        out.pairs.emplace_back(user, static_cast<NodeId>(v));
      }
    }
  }
  return out;
}

inline void write_rows(const std::string& path, const CsrMatrix& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write interaction file: " + path);
  for (std::size_t u = 0; u < m.rows(); ++u) {
    out << u;
    for (NodeId i : m.row(u)) out << ' ' << i;
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

/// Loads a pre-split pair of files, one user per line:
/// `user_id item_id item_id ...`. A test path of "" means no test set.
inline InteractionDataset load_interactions(const std::string& train_path,
                                            const std::string& test_path) {
  auto train = detail::read_pairs(train_path);
  detail::ParsedFile test;
  if (!test_path.empty()) test = detail::read_pairs(test_path);
  const std::size_t users = std::max(train.user_space, test.user_space);
  return InteractionDataset::from_pairs(std::move(train.pairs), std::move(test.pairs), users);
}

/// Writes both splits in the load format. Every user gets a line (bare ID
/// when the row is empty) so the user ID space survives a reload.
inline void dump_interactions(const InteractionDataset& d, const std::string& train_path,
                              const std::string& test_path) {
  detail::write_rows(train_path, d.train());
  detail::write_rows(test_path, d.test());
}

struct SyntheticSpec {
  std::size_t num_blocks = 4;
  std::size_t users_per_block = 50;
  std::size_t items_per_block = 50;
  double noise = 0.0;
  double holdout = 0.2;
  std::uint64_t seed = 0;
  /// Positives per user before the split; 0 picks items_per_block / 5.
  std::size_t interactions_per_user = 0;
  /// Zipf exponent of item popularity inside a block; 0 is uniform.
  double popularity_skew = 0.0;
};

/// Block-diagonal preference data: a user in block b draws each positive
/// from block b, except with probability `noise` from some other block.
inline InteractionDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_blocks < 1 || spec.users_per_block < 1 || spec.items_per_block < 1)
    throw ConfigError("synthetic generator: counts must be >= 1");
  if (!(spec.noise >= 0.0 && spec.noise < 1.0) || !(spec.holdout >= 0.0 && spec.holdout < 1.0))
    throw ConfigError("synthetic generator: noise and holdout must lie in [0, 1)");

  std::size_t degree = spec.interactions_per_user ? spec.interactions_per_user
                                                  : std::max<std::size_t>(1, spec.items_per_block / 5);
  degree = std::min(degree, spec.items_per_block);

  std::vector<double> cdf(spec.items_per_block);
  double total = 0.0;
  for (std::size_t r = 0; r < spec.items_per_block; ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), spec.popularity_skew);
    cdf[r] = total;
  }

  Rng rng(spec.seed);
  auto draw_in_block = [&](std::size_t block) {
    const double x = rng.uniform() * total;
    const auto r = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
    return static_cast<NodeId>(block * spec.items_per_block + std::min(r, spec.items_per_block - 1));
  };

  InteractionPairs train;
  InteractionPairs test;
  std::vector<NodeId> chosen;
  for (std::size_t b = 0; b < spec.num_blocks; ++b) {
    for (std::size_t k = 0; k < spec.users_per_block; ++k) {
      const auto u = static_cast<NodeId>(b * spec.users_per_block + k);
      chosen.clear();
      // Bounded so a tiny skewed block cannot spin forever.
      for (std::size_t tries = 0; chosen.size() < degree && tries < 1000 * degree; ++tries) {
        std::size_t block = b;
        if (spec.num_blocks > 1 && rng.bernoulli(spec.noise)) {
          block = rng.below(spec.num_blocks - 1);
          if (block >= b) ++block;
        }
        const NodeId item = draw_in_block(block);
        if (std::find(chosen.begin(), chosen.end(), item) == chosen.end()) chosen.push_back(item);
      }
      for (std::size_t n = chosen.size(); n > 1; --n)
        std::swap(chosen[n - 1], chosen[rng.below(n)]);
      auto held = static_cast<std::size_t>(std::floor(spec.holdout * static_cast<double>(chosen.size()) + 0.5));
      if (held >= chosen.size()) held = chosen.size() - 1;
      for (std::size_t n = 0; n < chosen.size(); ++n)
        (n < held ? test : train).emplace_back(u, chosen[n]);
    }
  }
  // Item space is inferred like the loader does, so dump + reload is exact.
  return InteractionDataset::from_pairs(std::move(train), std::move(test),
                                        spec.num_blocks * spec.users_per_block);
}

inline InteractionDataset generate_synthetic(std::size_t num_blocks, std::size_t users_per_block,
                                             std::size_t items_per_block, double noise,
                                             double holdout, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_blocks = num_blocks;
  spec.users_per_block = users_per_block;
  spec.items_per_block = items_per_block;
  spec.noise = noise;
  spec.holdout = holdout;
  spec.seed = seed;
  return generate_synthetic(spec);
}

}  // namespace spr
