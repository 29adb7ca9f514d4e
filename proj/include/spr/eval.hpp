#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "spr/dataset.hpp"
#include "spr/errors.hpp"
#include "spr/io.hpp"
#include "spr/model.hpp"
#include "spr/parallel.hpp"

namespace spr {

struct UserMetrics {
  NodeId user = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  friend bool operator==(const UserMetrics&, const UserMetrics&) = default;
};

struct MetricsReport {
  std::size_t k = 20;
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users_evaluated = 0;
  std::vector<UserMetrics> per_user;  // filled on request

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Recursive pairwise summation; fixed association order for a given n.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

/// Users that count toward the means: nonempty test set and nonempty
/// training set.
inline std::vector<NodeId> evaluable_users(const InteractionDataset& d) {
  std::vector<NodeId> users;
  for (std::size_t u = 0; u < d.num_users(); ++u)
    if (d.test().degree(u) > 0 && d.train().degree(u) > 0) users.push_back(static_cast<NodeId>(u));
  return users;
}

/// Recall@K and NDCG@K of one ranked list against a sorted test set.
/// Hits at 1-based rank r add 1/log2(r+1); the ideal list holds
/// min(K, |test|) hits.
inline UserMetrics rank_metrics(std::span<const NodeId> ranked, std::span<const NodeId> test, std::size_t k) {
  UserMetrics m;
  if (test.empty()) return m;
  std::size_t hits = 0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
    if (std::binary_search(test.begin(), test.end(), ranked[r])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, test.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  m.recall = static_cast<double>(hits) / static_cast<double>(test.size());
  m.ndcg = dcg / idcg;
  return m;
}

namespace detail {

inline void score_all_items(const PropagatedEmbeddings& pe, NodeId u, ScoreHead head, std::vector<double>& out) {
  const auto eu = pe.users().row(u);
  const std::size_t n = pe.items().rows;
  out.resize(n);
  if (head == ScoreHead::dot) {
    for (std::size_t i = 0; i < n; ++i) out[i] = dot(eu, pe.items().row(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = -squared_distance(eu, pe.items().row(i));
  }
}

inline MetricsReport summarize(std::size_t k, std::vector<UserMetrics> per_user, bool keep) {
  MetricsReport rep;
  rep.k = k;
  rep.users_evaluated = per_user.size();
  if (!per_user.empty()) {
    std::vector<double> r(per_user.size());
    std::vector<double> n(per_user.size());
    for (std::size_t s = 0; s < per_user.size(); ++s) {
      r[s] = per_user[s].recall;
      n[s] = per_user[s].ndcg;
    }
    const double count = static_cast<double>(per_user.size());
    rep.recall = pairwise_sum(r) / count;
    rep.ndcg = pairwise_sum(n) / count;
  }
  if (keep) rep.per_user = std::move(per_user);
  return rep;
}

inline void check_shapes(const PropagatedEmbeddings& pe, const InteractionDataset& d, std::size_t k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (pe.users().rows != d.num_users() || pe.items().rows != d.num_items())
    throw ValidationError("model shape does not match the dataset");
}

}  // namespace detail

/// Full-ranking evaluation: every item outside the user's training set is
/// a candidate; top-K by descending score, ties to the lower item ID.
/// Top-K uses a bounded heap per user; users are scored in parallel.
inline MetricsReport evaluate(const PropagatedEmbeddings& pe, const InteractionDataset& d, std::size_t k,
                              ScoreHead head, bool keep_per_user = false) {
  detail::check_shapes(pe, d, k);
  const auto users = evaluable_users(d);
  std::vector<UserMetrics> per_user(users.size());
  parallel_chunks(users.size(), [&](std::size_t lo, std::size_t hi) {
    std::vector<double> scores;
    std::vector<std::pair<double, NodeId>> heap;
    std::vector<NodeId> ranked;
    // "a before b" in the final ranking.
    auto better = [](const std::pair<double, NodeId>& a, const std::pair<double, NodeId>& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    for (std::size_t s = lo; s < hi; ++s) {
      const NodeId u = users[s];
      detail::score_all_items(pe, u, head, scores);
      const auto seen = d.positives(u);
      auto next_seen = seen.begin();
      heap.clear();
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (next_seen != seen.end() && *next_seen == i) {
          ++next_seen;
          continue;
        }
        const std::pair<double, NodeId> cand{scores[i], static_cast<NodeId>(i)};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), better);
        } else if (better(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), better);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), better);
        }
      }
      std::sort_heap(heap.begin(), heap.end(), better);
      ranked.clear();
      for (const auto& c : heap) ranked.push_back(c.second);
      per_user[s] = rank_metrics(ranked, d.test().row(u), k);
      per_user[s].user = u;
    }
  });
  return detail::summarize(k, std::move(per_user), keep_per_user);
}

inline MetricsReport evaluate(const ModelState& model, const GraphPropagator* graph, const InteractionDataset& d,
                              std::size_t k, ScoreHead head, bool keep_per_user = false) {
  return evaluate(propagate(model, graph), d, k, head, keep_per_user);
}

/// Naive reference: fully sorts every item with training positives
/// masked to -inf. Restricted to small datasets.
inline MetricsReport brute_force_reference(const PropagatedEmbeddings& pe, const InteractionDataset& d,
                                           std::size_t k, ScoreHead head, bool keep_per_user = false) {
  constexpr std::size_t kMaxUsers = 500;
  if (d.num_users() > kMaxUsers) throw ValidationError("brute_force_reference: more than 500 users");
  detail::check_shapes(pe, d, k);
  std::vector<UserMetrics> per_user;
  std::vector<double> scores;
  for (NodeId u : evaluable_users(d)) {
    detail::score_all_items(pe, u, head, scores);
    for (NodeId i : d.positives(u)) scores[i] = -std::numeric_limits<double>::infinity();
    std::vector<NodeId> order(scores.size());
    std::iota(order.begin(), order.end(), NodeId{0});
    std::sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    order.resize(std::min(k, order.size()));
    auto m = rank_metrics(order, d.test().row(u), k);
    m.user = u;
    per_user.push_back(m);
  }
  return detail::summarize(k, std::move(per_user), keep_per_user);
}

inline void write_metrics_csv(std::ostream& os, const MetricsReport& m, bool header = true) {
  if (header) os << "k,recall,ndcg,users\n";
  os << m.k << ',' << format_double(m.recall) << ',' << format_double(m.ndcg) << ',' << m.users_evaluated << '\n';
}

inline void write_metrics_text(std::ostream& os, const MetricsReport& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "Recall@%zu  %.4f\nNDCG@%zu    %.4f\nusers       %zu\n", m.k, m.recall, m.k, m.ndcg,
                m.users_evaluated);
  os << buf;
}

inline void write_per_user_csv(std::ostream& os, const MetricsReport& m) {
  os << "user,recall,ndcg\n";
  for (const auto& u : m.per_user) os << u.user << ',' << format_double(u.recall) << ',' << format_double(u.ndcg) << '\n';
}

}  // namespace spr
