#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spr/config.hpp"
#include "spr/dataset.hpp"
#include "spr/eval.hpp"
#include "spr/losses.hpp"
#include "spr/model.hpp"
#include "spr/sampler.hpp"
#include "spr/similarity.hpp"

namespace spr {

struct EpochReport {
  std::size_t epoch = 0;      // 1-based
  double loss = 0.0;          // mean of batch losses
  std::size_t samples = 0;    // rows drawn this epoch (batches x rows per batch)
  double wall_ms = 0.0;       // sampling + gradient steps, evaluation excluded
  double sampling_ms = 0.0;   // sampling share of wall_ms
  std::size_t skipped = 0;    // quadruple candidates passed over
  std::optional<MetricsReport> metrics;
};

/// Drives epochs of sample -> loss -> Adam step over one model.
///
/// An epoch is ceil(M / B) batches, M the training interaction count, for
/// every loss; quadruple batches hold B * gamma rows, which the reports
/// make visible through `samples`. Fully deterministic under the seed.
class Trainer {
 public:
  Trainer(const InteractionDataset& data, const SimilarityIndex* index, TrainConfig config)
      : data_(&data), index_(index), config_(std::move(config)),
        sampler_(data, derive_seed(config_.seed, 1)) {
    config_.validate();
    check_index();
    model_ = init_model(data.num_users(), data.num_items(), config_.dim, config_.backbone,
                        derive_seed(config_.seed, 0), config_.gcn_layers, config_.loss == LossKind::uib);
    if (config_.backbone == Backbone::gcn) graph_ = GraphPropagator(data);
  }

  /// Continues from a checkpoint. Shapes must match; differing
  /// hyperparameters are allowed but reported in *warnings.
  static Trainer resume(const Checkpoint& ckpt, const InteractionDataset& data, const SimilarityIndex* index,
                        TrainConfig config, std::vector<std::string>* warnings = nullptr) {
    const ModelState& m = ckpt.model;
    if (m.num_users() != data.num_users() || m.num_items() != data.num_items())
      throw ValidationError("checkpoint shape " + std::to_string(m.num_users()) + "x" +
                            std::to_string(m.num_items()) + " does not match dataset " +
                            std::to_string(data.num_users()) + "x" + std::to_string(data.num_items()));
    if (m.dim() != config.dim || m.backbone != config.backbone ||
        m.has_boundary() != (config.loss == LossKind::uib) ||
        (m.backbone == Backbone::gcn && m.gcn_layers != config.gcn_layers))
      throw ValidationError("checkpoint model (backbone/dim/layers/boundary) does not match the config");

    auto note = [&](const std::string& s) {
      if (warnings) warnings->push_back(s);
    };
    if (!ckpt.config_text.empty()) {
      const auto saved = parse_key_values(ckpt.config_text);
      const auto now = parse_key_values(config.to_text());
      for (const auto& [k, v] : now) {
        const auto it = saved.find(k);
        if (k != "epochs" && it != saved.end() && it->second != v)
          note("config drift: " + k + " " + it->second + " -> " + v);
      }
    }
    if (!ckpt.with_moments) note("checkpoint has no optimizer moments; resumed run is not bit-compatible");
    if (ckpt.rng_state.empty()) note("checkpoint has no sampler state; resumed run is not bit-compatible");

    Trainer t(data, index, std::move(config));
    t.model_ = m;
    t.epoch_ = ckpt.epoch;
    if (!ckpt.rng_state.empty()) t.sampler_.rng().set_state(ckpt.rng_state);
    t.restore_state(ckpt.trainer_state);
    return t;
  }

  const TrainConfig& config() const { return config_; }
  const ModelState& model() const { return model_; }
  std::size_t epoch() const { return epoch_; }
  const GraphPropagator* graph() const { return config_.backbone == Backbone::gcn ? &graph_ : nullptr; }

  std::size_t batches_per_epoch() const {
    return (data_->num_train() + config_.batch_size - 1) / config_.batch_size;
  }

  /// Best model by Recall@K among evaluations so far.
  const std::optional<ModelState>& best_model() const { return best_model_; }
  double best_recall() const { return best_recall_; }
  double best_ndcg() const { return best_ndcg_; }
  std::size_t best_epoch() const { return best_epoch_; }
  bool early_stopped() const { return early_stopped_; }
  bool diverged() const { return diverged_; }
  const std::string& divergence() const { return divergence_; }
  bool finished() const { return early_stopped_ || diverged_ || epoch_ >= config_.epochs; }

  MetricsReport evaluate_now() const {
    return evaluate(model_, graph(), *data_, config_.top_k, config_.head());
  }

  TrainingBatch sample_batch() {
    switch (batch_kind_for(config_.loss)) {
      case BatchKind::pointwise: return sampler_.pointwise(config_.batch_size, config_.neg_per_pos);
      case BatchKind::pairwise: return sampler_.pairwise(config_.batch_size);
      case BatchKind::quadruple: return sampler_.quadruple(*index_, config_.batch_size, config_.gamma);
    }
    throw ConfigError("unknown batch kind");
  }

  /// One epoch, plus an evaluation when epoch % eval_every == 0. On a
  /// non-finite loss or gradient the offending step is not applied and
  /// training stops with diverged() set.
  EpochReport run_epoch() {
    using Clock = std::chrono::steady_clock;
    EpochReport rep;
    rep.epoch = epoch_ + 1;
    const AdamHyper hyper{config_.lr, 0.9, 0.999, 1e-8, config_.l2};
    const LossParams params{config_.margin};
    double loss_sum = 0.0;
    std::size_t batches = 0;
    const auto start = Clock::now();
    Clock::duration sampling{};
    for (std::size_t b = 0; b < batches_per_epoch(); ++b) {
      const auto t0 = Clock::now();
      TrainingBatch batch = sample_batch();
      sampling += Clock::now() - t0;
      rep.samples += batch.size();
      rep.skipped += batch.skipped;
      if (batch_observer_) batch_observer_(rep.epoch, batch);
      LossOutput out = compute_loss(config_.loss, batch, model_, graph(), params);
      if (!std::isfinite(out.value)) {
        diverge("non-finite loss at epoch " + std::to_string(rep.epoch) + " batch " + std::to_string(b));
        break;
      }
      try {
        apply_gradients(model_, out.grads, hyper);
      } catch (const ValidationError& e) {
        diverge(e.what());
        break;
      }
      loss_sum += out.value;
      ++batches;
    }
    rep.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    rep.sampling_ms = std::chrono::duration<double, std::milli>(sampling).count();
    rep.loss = batches ? loss_sum / static_cast<double>(batches) : std::numeric_limits<double>::quiet_NaN();
    if (diverged_) return rep;
    ++epoch_;
    if (epoch_ % config_.eval_every == 0) {
      rep.metrics = evaluate_now();
      record_evaluation(*rep.metrics);
    }
    return rep;
  }

  /// Runs until the configured epoch count, early stop, or divergence.
  /// on_epoch (optional) sees every report as it is produced.
  std::vector<EpochReport> run(const std::function<void(const EpochReport&)>& on_epoch = {}) {
    std::vector<EpochReport> reports;
    while (!finished()) {
      reports.push_back(run_epoch());
      if (on_epoch) on_epoch(reports.back());
    }
    return reports;
  }

  /// Debug hook: called with every sampled batch before its step.
  void observe_batches(std::function<void(std::size_t, const TrainingBatch&)> f) { batch_observer_ = std::move(f); }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.model = model_;
    c.head = config_.head();
    c.epoch = static_cast<std::uint32_t>(epoch_);
    c.rng_state = sampler_.rng().state();
    c.config_text = config_.to_text();
    c.trainer_state = state_text();
    return c;
  }

  Checkpoint best_checkpoint() const {
    Checkpoint c = checkpoint();
    if (best_model_) {
      c.model = *best_model_;
      c.epoch = static_cast<std::uint32_t>(best_epoch_);
    }
    return c;
  }

 private:
  void check_index() const {
    if (config_.loss == LossKind::spr && !index_)
      throw ConfigError("loss spr requires a similarity index");
    if (index_ && index_->meta().dataset_checksum != data_->checksum())
      throw ChecksumError("similarity index was built for a different dataset");
  }

  void diverge(std::string why) {
    diverged_ = true;
    divergence_ = std::move(why);
  }

  void record_evaluation(const MetricsReport& m) {
    if (!best_model_ || m.recall > best_recall_) {
      best_recall_ = m.recall;
      best_ndcg_ = m.ndcg;
      best_epoch_ = epoch_;
      best_model_ = model_;
      stale_evals_ = 0;
    } else {
      ++stale_evals_;
      if (config_.early_stop_patience > 0 && stale_evals_ >= config_.early_stop_patience) early_stopped_ = true;
    }
  }

  std::string state_text() const {
    std::ostringstream os;
    os << "best_recall=" << format_double(best_recall_) << '\n'
       << "best_ndcg=" << format_double(best_ndcg_) << '\n'
       << "best_epoch=" << best_epoch_ << '\n'
       << "stale_evals=" << stale_evals_ << '\n'
       << "has_best=" << (best_model_ ? 1 : 0) << '\n';
    return os.str();
  }

  void restore_state(const std::string& text) {
    if (text.empty()) return;
    const auto kv = parse_key_values(text);
    auto get = [&](const char* k) -> std::string {
      const auto it = kv.find(k);
      if (it == kv.end()) throw FormatError(std::string("checkpoint trainer state lacks ") + k);
      return it->second;
    };
    best_recall_ = parse_double("best_recall", get("best_recall"));
    best_ndcg_ = parse_double("best_ndcg", get("best_ndcg"));
    best_epoch_ = parse_count("best_epoch", get("best_epoch"));
    stale_evals_ = parse_count("stale_evals", get("stale_evals"));
    // The best snapshot itself lives in its own file; from here on the
    // resumed model stands in for it if nothing better comes along.
    if (get("has_best") == "1") best_model_ = model_;
  }

  const InteractionDataset* data_;
  const SimilarityIndex* index_;
  TrainConfig config_;
  Sampler sampler_;
  GraphPropagator graph_;
  ModelState model_;
  std::size_t epoch_ = 0;

  std::optional<ModelState> best_model_;
  double best_recall_ = -1.0;
  double best_ndcg_ = 0.0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_evals_ = 0;
  bool early_stopped_ = false;
  bool diverged_ = false;
  std::string divergence_;
  std::function<void(std::size_t, const TrainingBatch&)> batch_observer_;
};

struct TrainResult {
  ModelState model;
  std::vector<EpochReport> reports;
};

inline TrainResult train(const InteractionDataset& data, const SimilarityIndex* index, const TrainConfig& config) {
  Trainer t(data, index, config);
  auto reports = t.run();
  return {t.model(), std::move(reports)};
}

/// Curves CSV, one row per evaluated epoch; wall_ms and samples are
/// cumulative from the start of training.
inline void write_curves_csv(std::ostream& os, const std::vector<EpochReport>& reports, std::size_t k,
                             bool header = true, double wall_offset = 0.0, std::size_t samples_offset = 0) {
  if (header) os << "epoch,loss,recall@" << k << ",ndcg@" << k << ",wall_ms,samples\n";
  double wall = wall_offset;
  std::size_t samples = samples_offset;
  for (const auto& r : reports) {
    wall += r.wall_ms;
    samples += r.samples;
    if (!r.metrics) continue;
    os << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.metrics->recall) << ','
       << format_double(r.metrics->ndcg) << ',' << std::llround(wall) << ',' << samples << '\n';
  }
}

}  // namespace spr
