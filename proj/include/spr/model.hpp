#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spr/dataset.hpp"
#include "spr/errors.hpp"
#include "spr/hash.hpp"
#include "spr/io.hpp"
#include "spr/rng.hpp"

namespace spr {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class Backbone : std::uint8_t { mf = 0, gcn = 1 };
enum class ScoreHead : std::uint8_t { dot = 0, neg_euclidean_sq = 1 };

inline std::string_view to_string(Backbone b) { return b == Backbone::mf ? "mf" : "gcn"; }
inline std::string_view to_string(ScoreHead h) { return h == ScoreHead::dot ? "dot" : "neg_euclidean_sq"; }
inline Backbone parse_backbone(std::string_view s) {
  if (s == "mf") return Backbone::mf;
  if (s == "gcn" || s == "lightgcn") return Backbone::gcn;
  throw ConfigError("unknown backbone '" + std::string(s) + "' (expected mf|gcn)");
}
inline ScoreHead parse_score_head(std::string_view s) {
  if (s == "dot") return ScoreHead::dot;
  if (s == "neg_euclidean_sq") return ScoreHead::neg_euclidean_sq;
  throw ConfigError("unknown score head '" + std::string(s) + "' (expected dot|neg_euclidean_sq)");
}

/// Trainable parameters plus Adam moment buffers congruent with them.
struct ModelState {
  Backbone backbone = Backbone::mf;
  std::size_t gcn_layers = 3;
  Matrix user_embeddings;
  Matrix item_embeddings;
  /// Shared boundary weights W (b_u = W . u); empty unless the boundary
  /// loss is in use.
  std::vector<double> boundary_w;

  Matrix user_m, user_v;
  Matrix item_m, item_v;
  std::vector<double> boundary_m, boundary_v;
  std::uint64_t step = 0;

  std::size_t dim() const { return user_embeddings.cols; }
  std::size_t num_users() const { return user_embeddings.rows; }
  std::size_t num_items() const { return item_embeddings.rows; }
  bool has_boundary() const { return !boundary_w.empty(); }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// Xavier-uniform tables, bound sqrt(6 / (N + d)) per table; W and all
/// moments start at zero.
inline ModelState init_model(std::size_t num_users, std::size_t num_items, std::size_t d,
                             Backbone backbone, std::uint64_t seed, std::size_t gcn_layers = 3,
                             bool with_boundary = false) {
  if (d < 1) throw ConfigError("embedding dimension must be >= 1");
  if (backbone == Backbone::gcn && gcn_layers < 1) throw ConfigError("gcn_layers must be >= 1");
  ModelState m;
  m.backbone = backbone;
  m.gcn_layers = backbone == Backbone::gcn ? gcn_layers : 0;
  Rng rng(seed);
  auto fill = [&](Matrix& t, std::size_t n) {
    t = Matrix(n, d);
    const double a = std::sqrt(6.0 / static_cast<double>(n + d));
    for (double& x : t.data) x = rng.uniform(-a, a);
  };
  fill(m.user_embeddings, num_users);
  fill(m.item_embeddings, num_items);
  m.user_m = m.user_v = Matrix(num_users, d);
  m.item_m = m.item_v = Matrix(num_items, d);
  if (with_boundary) m.boundary_w = m.boundary_m = m.boundary_v = std::vector<double>(d, 0.0);
  return m;
}

/// Backbone outputs G(u), G(v). For mf these alias the raw tables.
class PropagatedEmbeddings {
 public:
  static PropagatedEmbeddings alias(const Matrix& users, const Matrix& items) {
    PropagatedEmbeddings p;
    p.users_ = &users;
    p.items_ = &items;
    return p;
  }
  static PropagatedEmbeddings owned(Matrix users, Matrix items) {
    PropagatedEmbeddings p;
    p.storage_ = std::make_shared<std::pair<Matrix, Matrix>>(std::move(users), std::move(items));
    p.users_ = &p.storage_->first;
    p.items_ = &p.storage_->second;
    return p;
  }

  const Matrix& users() const { return *users_; }
  const Matrix& items() const { return *items_; }
  std::size_t dim() const { return users_->cols; }

 private:
  const Matrix* users_ = nullptr;
  const Matrix* items_ = nullptr;
  std::shared_ptr<const std::pair<Matrix, Matrix>> storage_;
};

/// Light graph convolution over the user-item bipartite graph:
/// E^(l+1) = Â E^(l) with Â(u,i) = 1 / sqrt(|N_u| |N_i|), output is the
/// mean of E^(0..L). The operator is symmetric, so the same routine maps
/// output gradients back to the raw tables.
class GraphPropagator {
 public:
  GraphPropagator() = default;

  explicit GraphPropagator(const InteractionDataset& d)
      : user_items_(&d.train()), item_users_(&d.item_users()) {
    user_norm_.resize(d.num_users());
    item_norm_.resize(d.num_items());
    for (std::size_t u = 0; u < d.num_users(); ++u) {
      const auto deg = d.train().degree(u);
      user_norm_[u] = deg ? 1.0 / std::sqrt(static_cast<double>(deg)) : 0.0;
    }
    for (std::size_t i = 0; i < d.num_items(); ++i) {
      const auto deg = d.item_users().degree(i);
      item_norm_[i] = deg ? 1.0 / std::sqrt(static_cast<double>(deg)) : 0.0;
    }
  }

  std::size_t num_users() const { return user_norm_.size(); }
  std::size_t num_items() const { return item_norm_.size(); }

  /// mean_{l=0..layers} Â^l [users; items].
  std::pair<Matrix, Matrix> apply(const Matrix& users, const Matrix& items, std::size_t layers) const {
    if (users.rows != num_users() || items.rows != num_items())
      throw ValidationError("propagate: embedding tables do not match the graph");
    Matrix acc_u = users;
    Matrix acc_i = items;
    Matrix cur_u = users;
    Matrix cur_i = items;
    Matrix next_u(users.rows, users.cols);
    Matrix next_i(items.rows, items.cols);
    for (std::size_t l = 0; l < layers; ++l) {
      step(*user_items_, user_norm_, item_norm_, cur_i, next_u);
      step(*item_users_, item_norm_, user_norm_, cur_u, next_i);
      std::swap(cur_u, next_u);
      std::swap(cur_i, next_i);
      for (std::size_t k = 0; k < acc_u.data.size(); ++k) acc_u.data[k] += cur_u.data[k];
      for (std::size_t k = 0; k < acc_i.data.size(); ++k) acc_i.data[k] += cur_i.data[k];
    }
    const double scale = 1.0 / static_cast<double>(layers + 1);
    for (double& x : acc_u.data) x *= scale;
    for (double& x : acc_i.data) x *= scale;
    return {std::move(acc_u), std::move(acc_i)};
  }

 private:
  // out[r] = sum_{c in adj(r)} norm_r * norm_c * src[c]
  static void step(const CsrMatrix& adj, const std::vector<double>& row_norm,
                   const std::vector<double>& col_norm, const Matrix& src, Matrix& out) {
    const std::size_t d = src.cols;
    std::fill(out.data.begin(), out.data.end(), 0.0);
    for (std::size_t r = 0; r < adj.rows(); ++r) {
      auto dst = out.row(r);
      for (NodeId c : adj.row(r)) {
        const double w = row_norm[r] * col_norm[c];
        const auto s = src.row(c);
        for (std::size_t k = 0; k < d; ++k) dst[k] += w * s[k];
      }
    }
  }

  const CsrMatrix* user_items_ = nullptr;
  const CsrMatrix* item_users_ = nullptr;
  std::vector<double> user_norm_;
  std::vector<double> item_norm_;
};

/// mf: aliases the raw tables. gcn: propagated, layer-averaged tables
/// (requires a propagator built on the training graph).
inline PropagatedEmbeddings propagate(const ModelState& m, const GraphPropagator* graph) {
  if (m.backbone == Backbone::mf) return PropagatedEmbeddings::alias(m.user_embeddings, m.item_embeddings);
  if (!graph) throw ValidationError("gcn backbone needs the interaction graph");
  auto [u, i] = graph->apply(m.user_embeddings, m.item_embeddings, m.gcn_layers);
  return PropagatedEmbeddings::owned(std::move(u), std::move(i));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

/// Higher is better for both heads: dot is u.v, neg_euclidean_sq is
/// -|u - v|^2.
inline double score_pair(const PropagatedEmbeddings& pe, NodeId u, NodeId i, ScoreHead head) {
  const auto eu = pe.users().row(u);
  const auto ei = pe.items().row(i);
  return head == ScoreHead::dot ? dot(eu, ei) : -squared_distance(eu, ei);
}

inline std::vector<double> score(const PropagatedEmbeddings& pe,
                                 std::span<const std::pair<NodeId, NodeId>> pairs, ScoreHead head) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [u, i] : pairs) {
    if (u >= pe.users().rows || i >= pe.items().rows) throw ValidationError("score: id out of range");
    out.push_back(score_pair(pe, u, i, head));
  }
  return out;
}

/// Gradient rows for one table, stored densely only for touched rows.
class RowGradients {
 public:
  RowGradients() = default;
  RowGradients(std::size_t rows, std::size_t dim) : dim_(dim), slot_(rows, kAbsent) {}

  std::size_t dim() const { return dim_; }
  std::size_t table_rows() const { return slot_.size(); }

  /// Row r, zero-initialized on first touch.
  std::span<double> row(NodeId r) {
    std::int64_t& s = slot_.at(r);
    if (s == kAbsent) {
      s = static_cast<std::int64_t>(rows_.size());
      rows_.push_back(r);
      values_.resize(values_.size() + dim_, 0.0);
    }
    return {values_.data() + static_cast<std::size_t>(s) * dim_, dim_};
  }

  void add(NodeId r, std::span<const double> v, double scale) {
    auto dst = row(r);
    for (std::size_t k = 0; k < dim_; ++k) dst[k] += scale * v[k];
  }

  /// Empty span when the row was never touched.
  std::span<const double> get(NodeId r) const {
    const std::int64_t s = slot_.at(r);
    if (s == kAbsent) return {};
    return {values_.data() + static_cast<std::size_t>(s) * dim_, dim_};
  }

  const std::vector<NodeId>& touched() const { return rows_; }

  double value(NodeId r, std::size_t k) const {
    const auto g = get(r);
    return g.empty() ? 0.0 : g[k];
  }

  Matrix to_dense() const {
    Matrix m(slot_.size(), dim_);
    for (std::size_t s = 0; s < rows_.size(); ++s)
      std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(s * dim_), dim_, m.row(rows_[s]).begin());
    return m;
  }

  /// Every row of a dense table becomes touched if any entry is nonzero.
  static RowGradients from_dense(const Matrix& m) {
    RowGradients g(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
      const auto src = m.row(r);
      if (std::any_of(src.begin(), src.end(), [](double x) { return x != 0.0; }))
        std::copy(src.begin(), src.end(), g.row(static_cast<NodeId>(r)).begin());
    }
    return g;
  }

 private:
  static constexpr std::int64_t kAbsent = -1;
  std::size_t dim_ = 0;
  std::vector<std::int64_t> slot_;
  std::vector<NodeId> rows_;
  std::vector<double> values_;
};

struct ParameterGradients {
  RowGradients users;
  RowGradients items;
  std::vector<double> boundary;  // empty when W is absent
};

/// Maps gradients w.r.t. backbone outputs onto the raw parameters.
inline ParameterGradients backpropagate(const ModelState& m, const GraphPropagator* graph,
                                        ParameterGradients output_grads) {
  if (m.backbone == Backbone::mf) return output_grads;
  if (!graph) throw ValidationError("gcn backbone needs the interaction graph");
  auto [gu, gi] = graph->apply(output_grads.users.to_dense(), output_grads.items.to_dense(), m.gcn_layers);
  ParameterGradients out;
  out.users = RowGradients::from_dense(gu);
  out.items = RowGradients::from_dense(gi);
  out.boundary = std::move(output_grads.boundary);
  return out;
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 coefficient; adds weight_decay * theta to the gradient of every
  /// touched embedding row.
  double weight_decay = 0.0;
};

namespace detail {

inline void check_finite(const RowGradients& g, std::string_view name) {
  for (NodeId r : g.touched())
    for (double x : g.get(r))
      if (!std::isfinite(x))
        throw ValidationError("non-finite gradient in " + std::string(name) + " row " + std::to_string(r));
}

inline void adam_row(std::span<double> theta, std::span<double> m, std::span<double> v,
                     std::span<const double> grad, const AdamHyper& h, double decay, double bc1,
                     double bc2) {
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = grad[k] + decay * theta[k];
    m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g;
    v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g * g;
    const double m_hat = m[k] / bc1;
    const double v_hat = v[k] / bc2;
    theta[k] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

}  // namespace detail

/// Sparse (lazy) Adam: only touched rows and their moments move; bias
/// correction uses the global step count.
inline void apply_gradients(ModelState& m, const ParameterGradients& g, const AdamHyper& h) {
  detail::check_finite(g.users, "user_embeddings");
  detail::check_finite(g.items, "item_embeddings");
  for (double x : g.boundary)
    if (!std::isfinite(x)) throw ValidationError("non-finite gradient in boundary_w");
  if (!g.boundary.empty() && g.boundary.size() != m.boundary_w.size())
    throw ValidationError("boundary gradient does not match boundary_w");

  ++m.step;
  const double t = static_cast<double>(m.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (NodeId r : g.users.touched())
    detail::adam_row(m.user_embeddings.row(r), m.user_m.row(r), m.user_v.row(r), g.users.get(r), h,
                     h.weight_decay, bc1, bc2);
  for (NodeId r : g.items.touched())
    detail::adam_row(m.item_embeddings.row(r), m.item_m.row(r), m.item_v.row(r), g.items.get(r), h,
                     h.weight_decay, bc1, bc2);
  if (!g.boundary.empty())
    detail::adam_row(m.boundary_w, m.boundary_m, m.boundary_v, g.boundary, h, 0.0, bc1, bc2);
}

/// Everything persisted by a checkpoint file.
struct Checkpoint {
  ModelState model;
  ScoreHead head = ScoreHead::dot;
  std::uint32_t epoch = 0;
  bool with_moments = true;
  std::string rng_state;      // sampler generator, empty if not saved
  std::string config_text;    // key=value lines of the training config
  std::string trainer_state;  // key=value lines (early-stopping bookkeeping)
};

// Binary layout (little-endian):
//   char[4] "SPRC" | u32 version | u8 backbone | u8 head | u8 has_w | u8 has_moments
//   u32 gcn_layers | u32 num_users | u32 num_items | u32 dim | u64 step | u32 epoch
//   f64[num_users*dim] users | f64[num_items*dim] items | f64[dim] W (if has_w)
//   moments in the same order (if has_moments): user m,v | item m,v | W m,v
//   str rng_state | str config_text | str trainer_state     (str = u32 len + bytes)
//   u64 FNV-1a of every preceding byte
inline constexpr std::string_view kCheckpointMagic = "SPRC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const ModelState& m = c.model;
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.backbone));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.head));
  w.put<std::uint8_t>(m.has_boundary() ? 1 : 0);
  w.put<std::uint8_t>(c.with_moments ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.gcn_layers));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.num_users()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.num_items()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.dim()));
  w.put<std::uint64_t>(m.step);
  w.put<std::uint32_t>(c.epoch);
  auto put_all = [&](std::span<const double> xs) {
    for (double x : xs) w.put<double>(x);
  };
  put_all(m.user_embeddings.data);
  put_all(m.item_embeddings.data);
  put_all(m.boundary_w);
  if (c.with_moments) {
    put_all(m.user_m.data);
    put_all(m.user_v.data);
    put_all(m.item_m.data);
    put_all(m.item_v.data);
    put_all(m.boundary_m);
    put_all(m.boundary_v);
  }
  w.str(c.rng_state);
  w.str(c.config_text);
  w.str(c.trainer_state);
  Fnv1a h;
  h.bytes(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(h.digest());
  return w.bytes();
}

/// Parses the whole image before returning, so a corrupt file never yields
/// a partially loaded model.
inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw FormatError("checkpoint: file too short");
  {
    Fnv1a h;
    h.bytes(bytes.data(), bytes.size() - 8);
    ByteReader tail(bytes.subspan(bytes.size() - 8));
    if (tail.get<std::uint64_t>() != h.digest()) throw FormatError("checkpoint: checksum mismatch (corrupt file)");
  }
  ByteReader r(bytes.first(bytes.size() - 8));
  if (r.raw(4) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  Checkpoint c;
  ModelState& m = c.model;
  const auto backbone = r.get<std::uint8_t>();
  const auto head = r.get<std::uint8_t>();
  if (backbone > 1 || head > 1) throw FormatError("checkpoint: bad enum tag");
  m.backbone = static_cast<Backbone>(backbone);
  c.head = static_cast<ScoreHead>(head);
  const bool has_w = r.get<std::uint8_t>() != 0;
  c.with_moments = r.get<std::uint8_t>() != 0;
  m.gcn_layers = r.get<std::uint32_t>();
  const std::size_t users = r.get<std::uint32_t>();
  const std::size_t items = r.get<std::uint32_t>();
  const std::size_t dim = r.get<std::uint32_t>();
  m.step = r.get<std::uint64_t>();
  c.epoch = r.get<std::uint32_t>();
  const std::size_t tensors = (users + items) * dim + (has_w ? dim : 0);
  if (dim == 0 || tensors * (c.with_moments ? 3 : 1) * 8 > r.remaining())
    throw FormatError("checkpoint: shape header inconsistent with file size");
  auto get_matrix = [&](std::size_t rows) {
    Matrix t(rows, dim);
    for (double& x : t.data) x = r.get<double>();
    return t;
  };
  auto get_vector = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = r.get<double>();
    return v;
  };
  m.user_embeddings = get_matrix(users);
  m.item_embeddings = get_matrix(items);
  m.boundary_w = get_vector(has_w ? dim : 0);
  if (c.with_moments) {
    m.user_m = get_matrix(users);
    m.user_v = get_matrix(users);
    m.item_m = get_matrix(items);
    m.item_v = get_matrix(items);
    m.boundary_m = get_vector(has_w ? dim : 0);
    m.boundary_v = get_vector(has_w ? dim : 0);
  } else {
    m.user_m = m.user_v = Matrix(users, dim);
    m.item_m = m.item_v = Matrix(items, dim);
    m.boundary_m = m.boundary_v = std::vector<double>(has_w ? dim : 0, 0.0);
  }
  c.rng_state = r.str();
  c.config_text = r.str();
  c.trainer_state = r.str();
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  for (double x : m.user_embeddings.data)
    if (!std::isfinite(x)) throw FormatError("checkpoint: non-finite parameter");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  atomic_write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace spr
