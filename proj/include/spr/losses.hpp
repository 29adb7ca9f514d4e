#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "spr/errors.hpp"
#include "spr/model.hpp"
#include "spr/sampler.hpp"

namespace spr {

enum class LossKind : std::uint8_t { mse, bce, bpr, cml, uib, spr };

inline constexpr LossKind kAllLosses[] = {LossKind::mse, LossKind::bce, LossKind::bpr,
                                          LossKind::cml, LossKind::uib, LossKind::spr};

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::bce: return "bce";
    case LossKind::bpr: return "bpr";
    case LossKind::cml: return "cml";
    case LossKind::uib: return "uib";
    case LossKind::spr: return "spr";
  }
  return "?";
}

inline LossKind parse_loss(std::string_view s) {
  for (LossKind k : kAllLosses)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected mse|bce|bpr|cml|uib|spr)");
}

inline BatchKind batch_kind_for(LossKind k) {
  switch (k) {
    case LossKind::mse:
    case LossKind::bce: return BatchKind::pointwise;
    case LossKind::spr: return BatchKind::quadruple;
    default: return BatchKind::pairwise;
  }
}

/// Only the metric-learning loss ranks by distance.
inline ScoreHead head_for(LossKind k) {
  return k == LossKind::cml ? ScoreHead::neg_euclidean_sq : ScoreHead::dot;
}

struct LossParams {
  double margin = 1.0;  // cml
};

struct LossOutput {
  double value = 0.0;  // mean over batch rows, without the L2 term
  ParameterGradients grads;
  /// Per row: the sigmoid/softplus argument, hinge argument, or residual.
  std::vector<double> aux;
};

/// softplus(x) = ln(1 + e^x) without overflow; -ln sigma(x) = softplus(-x).
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {

/// Shared plumbing: backbone forward, per-score gradient scattering, and
/// the backward map onto raw parameters.
class LossContext {
 public:
  LossContext(const ModelState& model, const GraphPropagator* graph)
      : model_(model), graph_(graph), pe_(propagate(model, graph)) {
    grads_.users = RowGradients(model.num_users(), model.dim());
    grads_.items = RowGradients(model.num_items(), model.dim());
    if (model.has_boundary()) grads_.boundary.assign(model.dim(), 0.0);
  }

  const PropagatedEmbeddings& pe() const { return pe_; }

  double dot_score(NodeId u, NodeId i) const { return score_pair(pe_, u, i, ScoreHead::dot); }
  double sq_distance(NodeId u, NodeId i) const {
    return squared_distance(pe_.users().row(u), pe_.items().row(i));
  }

  /// Adds coeff * d(u.v)/d(u, v).
  void dot_grad(NodeId u, NodeId i, double coeff) {
    if (coeff == 0.0) return;
    grads_.users.add(u, pe_.items().row(i), coeff);
    grads_.items.add(i, pe_.users().row(u), coeff);
  }

  /// Adds coeff * d|u - v|^2 / d(u, v).
  void sq_distance_grad(NodeId u, NodeId i, double coeff) {
    if (coeff == 0.0) return;
    const auto eu = pe_.users().row(u);
    const auto ei = pe_.items().row(i);
    auto gu = grads_.users.row(u);
    auto gi = grads_.items.row(i);
    for (std::size_t k = 0; k < eu.size(); ++k) {
      const double t = 2.0 * coeff * (eu[k] - ei[k]);
      gu[k] += t;
      gi[k] -= t;
    }
  }

  ParameterGradients& output_grads() { return grads_; }

  LossOutput finish(double sum, std::size_t rows, std::vector<double> aux) {
    LossOutput out;
    out.value = rows ? sum / static_cast<double>(rows) : 0.0;
    out.grads = backpropagate(model_, graph_, std::move(grads_));
    out.aux = std::move(aux);
    return out;
  }

 private:
  const ModelState& model_;
  const GraphPropagator* graph_;
  PropagatedEmbeddings pe_;
  ParameterGradients grads_;
};

inline double inv_rows(std::size_t n) { return n ? 1.0 / static_cast<double>(n) : 0.0; }

}  // namespace detail

/// mean (s_ui - y)^2
inline LossOutput mse(const TrainingBatch& batch, const ModelState& model,
                      const GraphPropagator* graph = nullptr) {
  const auto& rows = batch.as<PointwiseRow>();
  detail::LossContext ctx(model, graph);
  const double w = detail::inv_rows(rows.size());
  double sum = 0.0;
  std::vector<double> aux;
  aux.reserve(rows.size());
  for (const auto& r : rows) {
    const double residual = ctx.dot_score(r.user, r.item) - r.label;
    sum += residual * residual;
    aux.push_back(residual);
    ctx.dot_grad(r.user, r.item, 2.0 * residual * w);
  }
  return ctx.finish(sum, rows.size(), std::move(aux));
}

/// mean -[y ln sigma(s) + (1 - y) ln(1 - sigma(s))]
inline LossOutput bce(const TrainingBatch& batch, const ModelState& model,
                      const GraphPropagator* graph = nullptr) {
  const auto& rows = batch.as<PointwiseRow>();
  detail::LossContext ctx(model, graph);
  const double w = detail::inv_rows(rows.size());
  double sum = 0.0;
  std::vector<double> aux;
  aux.reserve(rows.size());
  for (const auto& r : rows) {
    const double s = ctx.dot_score(r.user, r.item);
    sum += r.label ? softplus(-s) : softplus(s);
    aux.push_back(s);
    ctx.dot_grad(r.user, r.item, (sigmoid(s) - r.label) * w);
  }
  return ctx.finish(sum, rows.size(), std::move(aux));
}

/// mean -ln sigma(s_ui - s_uj)
inline LossOutput bpr(const TrainingBatch& batch, const ModelState& model,
                      const GraphPropagator* graph = nullptr) {
  const auto& rows = batch.as<PairwiseRow>();
  detail::LossContext ctx(model, graph);
  const double w = detail::inv_rows(rows.size());
  double sum = 0.0;
  std::vector<double> aux;
  aux.reserve(rows.size());
  for (const auto& r : rows) {
    const double x = ctx.dot_score(r.user, r.pos) - ctx.dot_score(r.user, r.neg);
    sum += softplus(-x);
    aux.push_back(x);
    const double g = -sigmoid(-x) * w;
    ctx.dot_grad(r.user, r.pos, g);
    ctx.dot_grad(r.user, r.neg, -g);
  }
  return ctx.finish(sum, rows.size(), std::move(aux));
}

/// mean [m + d(u,i)^2 - d(u,j)^2]_+ ; clamped rows contribute no gradient.
inline LossOutput cml(const TrainingBatch& batch, const ModelState& model, double margin,
                      const GraphPropagator* graph = nullptr) {
  if (!(margin >= 0.0)) throw ConfigError("cml margin must be >= 0");
  const auto& rows = batch.as<PairwiseRow>();
  detail::LossContext ctx(model, graph);
  const double w = detail::inv_rows(rows.size());
  double sum = 0.0;
  std::vector<double> aux;
  aux.reserve(rows.size());
  for (const auto& r : rows) {
    const double z = margin + ctx.sq_distance(r.user, r.pos) - ctx.sq_distance(r.user, r.neg);
    aux.push_back(z);
    if (z <= 0.0) continue;
    sum += z;
    ctx.sq_distance_grad(r.user, r.pos, w);
    ctx.sq_distance_grad(r.user, r.neg, -w);
  }
  return ctx.finish(sum, rows.size(), std::move(aux));
}

/// Personalized boundary b_u = W . G(u):
/// mean -[ln sigma(s_ui - b_u) + ln sigma(b_u - s_uj)]
inline LossOutput uib(const TrainingBatch& batch, const ModelState& model,
                      const GraphPropagator* graph = nullptr) {
  if (!model.has_boundary()) throw ValidationError("uib loss needs boundary weights W in the model");
  const auto& rows = batch.as<PairwiseRow>();
  detail::LossContext ctx(model, graph);
  const double w = detail::inv_rows(rows.size());
  const auto& W = model.boundary_w;
  auto& grads = ctx.output_grads();
  double sum = 0.0;
  std::vector<double> aux;
  aux.reserve(rows.size());
  for (const auto& r : rows) {
    const auto eu = ctx.pe().users().row(r.user);
    const double b = dot(W, eu);
    const double above = ctx.dot_score(r.user, r.pos) - b;
    const double below = b - ctx.dot_score(r.user, r.neg);
    sum += softplus(-above) + softplus(-below);
    aux.push_back(b);
    const double g_above = -sigmoid(-above) * w;
    const double g_below = -sigmoid(-below) * w;
    ctx.dot_grad(r.user, r.pos, g_above);
    ctx.dot_grad(r.user, r.neg, -g_below);
    const double g_b = g_below - g_above;
    grads.users.add(r.user, W, g_b);
    for (std::size_t k = 0; k < W.size(); ++k) grads.boundary[k] += g_b * eu[k];
  }
  return ctx.finish(sum, rows.size(), std::move(aux));
}

/// Quadruple ranking: mean -ln sigma(s_ui - s_uj + s_li - s_lj). The
/// similar user l is pushed toward u's positive and away from u's negative.
inline LossOutput spr(const TrainingBatch& batch, const ModelState& model,
                      const GraphPropagator* graph = nullptr) {
  const auto& rows = batch.as<QuadrupleRow>();
  detail::LossContext ctx(model, graph);
  const double w = detail::inv_rows(rows.size());
  double sum = 0.0;
  std::vector<double> aux;
  aux.reserve(rows.size());
  for (const auto& r : rows) {
    const double x = ctx.dot_score(r.user, r.pos) - ctx.dot_score(r.user, r.neg) +
                     ctx.dot_score(r.similar, r.pos) - ctx.dot_score(r.similar, r.neg);
    sum += softplus(-x);
    aux.push_back(x);
    const double g = -sigmoid(-x) * w;
    ctx.dot_grad(r.user, r.pos, g);
    ctx.dot_grad(r.user, r.neg, -g);
    ctx.dot_grad(r.similar, r.pos, g);
    ctx.dot_grad(r.similar, r.neg, -g);
  }
  return ctx.finish(sum, rows.size(), std::move(aux));
}

inline LossOutput compute_loss(LossKind kind, const TrainingBatch& batch, const ModelState& model,
                               const GraphPropagator* graph, const LossParams& params = {}) {
  switch (kind) {
    case LossKind::mse: return mse(batch, model, graph);
    case LossKind::bce: return bce(batch, model, graph);
    case LossKind::bpr: return bpr(batch, model, graph);
    case LossKind::cml: return cml(batch, model, params.margin, graph);
    case LossKind::uib: return uib(batch, model, graph);
    case LossKind::spr: return spr(batch, model, graph);
  }
  throw ConfigError("unknown loss kind");
}

}  // namespace spr
