#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "spr/trainer.hpp"
#include "test_util.hpp"

using namespace spr;

namespace {

InteractionDataset small_blocks(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_blocks = 4;
  s.users_per_block = 15;
  s.items_per_block = 20;
  s.noise = 0.05;
  s.holdout = 0.2;
  s.seed = seed;
  return generate_synthetic(s);
}

TrainConfig small_config(LossKind loss) {
  TrainConfig c;
  c.loss = loss;
  c.dim = 8;
  c.batch_size = 64;
  c.gamma = 3;
  c.k_percent = 0.1;
  c.lr = 0.01;
  c.epochs = 20;
  c.eval_every = 5;
  c.early_stop_patience = 0;
  c.seed = 17;
  return c;
}

std::vector<double> losses_of(const std::vector<EpochReport>& reps) {
  std::vector<double> out;
  for (const auto& r : reps) out.push_back(r.loss);
  return out;
}

}  // namespace

TEST(Trainer, ZeroEpochsReturnsInitialModel) {
  const auto d = small_blocks(1);
  auto c = small_config(LossKind::bpr);
  c.epochs = 0;
  const auto res = train(d, nullptr, c);
  EXPECT_TRUE(res.reports.empty());
  EXPECT_EQ(res.model, init_model(d.num_users(), d.num_items(), 8, Backbone::mf, derive_seed(17, 0)));
}

TEST(Trainer, SprNeedsMatchingIndex) {
  const auto d = small_blocks(1);
  EXPECT_THROW(Trainer(d, nullptr, small_config(LossKind::spr)), ConfigError);
  const auto other = small_blocks(2);
  const auto foreign = build_similarity_index(other, Side::user, 0.1);
  EXPECT_THROW(Trainer(d, &foreign, small_config(LossKind::spr)), ChecksumError);
}

TEST(Trainer, InvalidConfigRejected) {
  const auto d = small_blocks(1);
  auto c = small_config(LossKind::bpr);
  c.lr = 0;
  EXPECT_THROW(Trainer(d, nullptr, c), ConfigError);
  c = small_config(LossKind::bpr);
  c.score_head = ScoreHead::neg_euclidean_sq;
  EXPECT_THROW(Trainer(d, nullptr, c), ConfigError);
}

TEST(Trainer, DeterministicUnderSeed) {
  const auto d = small_blocks(3);
  const auto index = build_similarity_index(d, Side::user, 0.1);
  for (LossKind loss : kAllLosses) {
    auto c = small_config(loss);
    c.epochs = 6;
    c.backbone = loss == LossKind::uib ? Backbone::gcn : Backbone::mf;
    c.gcn_layers = 2;
    const auto a = train(d, &index, c);
    const auto b = train(d, &index, c);
    EXPECT_EQ(losses_of(a.reports), losses_of(b.reports)) << to_string(loss);
    EXPECT_EQ(a.model, b.model) << to_string(loss);
    c.seed = 18;
    EXPECT_NE(train(d, &index, c).model, a.model);
  }
}

TEST(Trainer, EpochAccountingAndEvalCadence) {
  const auto d = small_blocks(4);
  const auto index = build_similarity_index(d, Side::user, 0.1);
  auto c = small_config(LossKind::bpr);
  c.epochs = 10;
  Trainer bpr_t(d, nullptr, c);
  const auto bpr_r = bpr_t.run();
  ASSERT_EQ(bpr_r.size(), 10u);
  EXPECT_EQ(bpr_t.batches_per_epoch(), (d.num_train() + 63) / 64);
  for (const auto& r : bpr_r) {
    EXPECT_EQ(r.samples, bpr_t.batches_per_epoch() * 64);
    EXPECT_EQ(r.metrics.has_value(), r.epoch % 5 == 0);
  }
  EXPECT_EQ(bpr_r.front().epoch, 1u);

  c.loss = LossKind::spr;
  const auto spr_r = train(d, &index, c).reports;
  for (std::size_t e = 0; e < spr_r.size(); ++e) EXPECT_EQ(spr_r[e].samples, 3 * bpr_r[e].samples);

  c.loss = LossKind::mse;
  c.neg_per_pos = 3;
  const auto mse_r = train(d, nullptr, c).reports;
  EXPECT_EQ(mse_r[0].samples, bpr_r[0].samples);
}

TEST(Trainer, ResumeMatchesStraightRun) {
  const auto d = small_blocks(5);
  const auto index = build_similarity_index(d, Side::user, 0.1);
  for (LossKind loss : {LossKind::spr, LossKind::uib, LossKind::bce}) {
    auto c = small_config(loss);
    c.backbone = loss == LossKind::bce ? Backbone::gcn : Backbone::mf;
    c.gcn_layers = 2;
    Trainer straight(d, &index, c);
    const auto full = straight.run();

    auto first = c;
    first.epochs = 10;
    Trainer head(d, &index, first);
    auto part = head.run();
    // Through the byte format, as the CLI would.
    const auto ckpt = decode_checkpoint(encode_checkpoint(head.checkpoint()));
    std::vector<std::string> warnings;
    Trainer tail = Trainer::resume(ckpt, d, &index, c, &warnings);
    EXPECT_TRUE(warnings.empty());
    EXPECT_EQ(tail.epoch(), 10u);
    const auto rest = tail.run();
    part.insert(part.end(), rest.begin(), rest.end());

    EXPECT_EQ(losses_of(part), losses_of(full)) << to_string(loss);
    EXPECT_EQ(tail.model(), straight.model()) << to_string(loss);
    EXPECT_EQ(tail.best_epoch(), straight.best_epoch());
    EXPECT_EQ(tail.best_recall(), straight.best_recall());
  }
}

TEST(Trainer, ResumeGuards) {
  const auto d = small_blocks(6);
  auto c = small_config(LossKind::bpr);
  c.epochs = 2;
  Trainer t(d, nullptr, c);
  t.run();
  const auto ckpt = t.checkpoint();

  std::vector<std::string> warnings;
  auto drift = c;
  drift.batch_size = 32;
  drift.epochs = 4;
  Trainer::resume(ckpt, d, nullptr, drift, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("batch_size 64 -> 32"), std::string::npos);

  auto wide = c;
  wide.dim = 9;
  EXPECT_THROW(Trainer::resume(ckpt, d, nullptr, wide), ValidationError);
  const auto smaller = fixtures::random_dataset(7, 9, 1, 3, 0.2, 1);
  EXPECT_THROW(Trainer::resume(ckpt, smaller, nullptr, c), ValidationError);

  auto bytes = encode_checkpoint(ckpt);
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Trainer, LossFallsOverWindows) {
  const auto d = small_blocks(8);
  const auto index = build_similarity_index(d, Side::user, 0.1);
  for (LossKind loss : kAllLosses) {
    auto c = small_config(loss);
    c.lr = 1e-3;  // the default
    c.epochs = 60;
    c.eval_every = 60;
    const auto reps = train(d, &index, c).reports;
    ASSERT_EQ(reps.size(), 60u);
    auto mean = [&](std::size_t lo) {
      double s = 0;
      for (std::size_t e = lo; e < lo + 20; ++e) s += reps[e].loss;
      return s / 20;
    };
    EXPECT_LE(mean(20), mean(0)) << to_string(loss);
    EXPECT_LE(mean(40), mean(20)) << to_string(loss);
  }
}

TEST(Trainer, BestCheckpointTracksBestRecall) {
  const auto d = small_blocks(9);
  auto c = small_config(LossKind::bpr);
  c.epochs = 30;
  c.eval_every = 3;
  Trainer t(d, nullptr, c);
  const auto reps = t.run();
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& r : reps)
    if (r.metrics && r.metrics->recall > best) {
      best = r.metrics->recall;
      best_epoch = r.epoch;
    }
  EXPECT_EQ(t.best_recall(), best);
  EXPECT_EQ(t.best_epoch(), best_epoch);
  const auto ckpt = t.best_checkpoint();
  EXPECT_EQ(ckpt.epoch, best_epoch);
  // Re-evaluating the saved best model reproduces its curve row.
  EXPECT_EQ(evaluate(ckpt.model, nullptr, d, 20, ScoreHead::dot).recall, best);
}

TEST(Trainer, EarlyStopping) {
  const auto d = small_blocks(10);
  auto c = small_config(LossKind::bpr);
  c.lr = 0.5;  // overshoots quickly, so recall stalls
  c.epochs = 400;
  c.eval_every = 1;
  c.early_stop_patience = 3;
  Trainer t(d, nullptr, c);
  const auto reps = t.run();
  EXPECT_TRUE(t.early_stopped());
  EXPECT_LT(reps.size(), 400u);
  EXPECT_EQ(reps.size(), t.best_epoch() + 3);
}

TEST(Trainer, DivergenceStopsWithLastFiniteModel) {
  const auto d = small_blocks(11);
  auto c = small_config(LossKind::mse);
  c.lr = 1e200;
  c.epochs = 50;
  Trainer t(d, nullptr, c);
  const auto reps = t.run();
  EXPECT_TRUE(t.diverged());
  EXPECT_FALSE(t.divergence().empty());
  EXPECT_LT(reps.size(), 50u);
  for (double x : t.model().user_embeddings.data) EXPECT_TRUE(std::isfinite(x));
  for (double x : t.model().item_embeddings.data) EXPECT_TRUE(std::isfinite(x));
}

TEST(Trainer, BprImprovesRecallFivefold) {
  SyntheticSpec s;
  s.num_blocks = 4;
  s.users_per_block = 50;
  s.items_per_block = 50;
  s.noise = 0.05;
  s.holdout = 0.2;
  s.seed = 1;
  const auto d = generate_synthetic(s);
  TrainConfig c;
  c.dim = 16;
  c.batch_size = 256;
  c.epochs = 200;
  c.eval_every = 200;
  c.early_stop_patience = 0;
  c.seed = 1;
  Trainer t(d, nullptr, c);
  const double start = t.evaluate_now().recall;
  const auto reps = t.run();
  const double end = reps.back().metrics->recall;
  EXPECT_GE(end, 5 * start) << "epoch 0 " << start << ", epoch 200 " << end;
}

TEST(Trainer, CurvesCsvIsCumulative) {
  std::vector<EpochReport> reps(4);
  for (std::size_t e = 0; e < 4; ++e) {
    reps[e].epoch = e + 1;
    reps[e].loss = 0.5;
    reps[e].wall_ms = 10.4;
    reps[e].samples = 100;
  }
  reps[1].metrics = MetricsReport{20, 0.25, 0.125, 3, {}};
  reps[3].metrics = MetricsReport{20, 0.5, 0.25, 3, {}};
  std::ostringstream os;
  write_curves_csv(os, reps, 20);
  EXPECT_EQ(os.str(),
            "epoch,loss,recall@20,ndcg@20,wall_ms,samples\n"
            "2,0.5,0.25,0.125,21,200\n"
            "4,0.5,0.5,0.25,42,400\n");
}

TEST(Trainer, ConfigTextRoundTrip) {
  auto c = small_config(LossKind::cml);
  c.margin = 0.5;
  c.sim_normalization = Normalization::row_sum;
  const auto back = TrainConfig::from_text(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_THROW(TrainConfig::from_text("lossy=bpr\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("dim=abc\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("no equals sign\n"), ConfigError);
  EXPECT_EQ(TrainConfig::from_text("# comment\n\ngamma = 7\n").gamma, 7u);
}
