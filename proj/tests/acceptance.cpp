// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit status 1
// if any criterion fails.
//
//   spr_acceptance [--record] [--only N] [--fixtures DIR]
//
// --record rewrites the synthetic-benchmark regression fixtures from the
// current build before checking against them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spr/eval.hpp"
#include "spr/losses.hpp"
#include "spr/trainer.hpp"
#include "test_util.hpp"

using namespace spr;

namespace {

struct Outcome {
  enum Status { pass, fail, skip } status = pass;
  std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome gradient_oracle() {
  constexpr std::size_t kBatches = 20;
  const auto data = fixtures::random_dataset(10, 15, 2, 7, 0.0, 2024);
  const auto index = build_similarity_index(data, Side::user, 0.3);
  const GraphPropagator graph(data);
  double worst = 0.0;
  double worst_abs = 0.0;
  std::string worst_at;
  std::size_t entries = 0;
  std::size_t kink_redraws = 0;
  for (LossKind kind : kAllLosses) {
    for (Backbone backbone : {Backbone::mf, Backbone::gcn}) {
      const GraphPropagator* g = backbone == Backbone::gcn ? &graph : nullptr;
      Sampler sampler(data, 7 + static_cast<std::uint64_t>(kind));
      std::size_t done = 0;
      for (std::uint64_t trial = 0; done < kBatches; ++trial) {
        const auto model = fixtures::random_model(10, 15, 8, backbone, 2, kind == LossKind::uib,
                                                  kind == LossKind::cml ? 0.8 : 0.5, 1000 + trial);
        TrainingBatch batch;
        switch (batch_kind_for(kind)) {
          case BatchKind::pointwise: batch = sampler.pointwise(4, 1); break;
          case BatchKind::pairwise: batch = sampler.pairwise(6); break;
          case BatchKind::quadruple: batch = sampler.quadruple(index, 3, 2); break;
        }
        const auto out = compute_loss(kind, batch, model, g);
        // The hinge is not differentiable at zero; differences across it are meaningless.
        if (kind == LossKind::cml &&
            std::any_of(out.aux.begin(), out.aux.end(), [](double z) { return std::abs(z) < 1e-4; })) {
          ++kink_redraws;
          continue;
        }
        const auto fd = oracle::finite_difference_check(
            model, out.grads, [&](const ModelState& m) { return compute_loss(kind, batch, m, g).value; });
        entries += fd.checked;
        worst_abs = std::max(worst_abs, fd.max_abs_error);
        if (fd.max_rel_error > worst) {
          worst = fd.max_rel_error;
          worst_at = std::string(to_string(kind)) + "/" + std::string(to_string(backbone));
        }
        ++done;
      }
    }
  }
  return check(worst < 1e-5,
               fmt("max rel error %.2e (%s), max abs error %.1e, over 12 x %zu batches, %zu entries, %zu cml redraws",
                   worst, worst_at.c_str(), worst_abs, kBatches, entries, kink_redraws));
}

// ---------------------------------------------------------------- 2

Outcome similarity_oracle() {
  std::size_t mismatches = 0;
  std::size_t lists = 0;
  Rng rng(99);
  for (std::uint64_t t = 0; t < 50; ++t) {
    const std::size_t users = 20 + rng.below(181);
    const std::size_t items = 20 + rng.below(181);
    const auto d = fixtures::random_dataset(users, items, 1, 1 + rng.below(15), 0.0, t);
    const double k = 0.02 + 0.2 * rng.uniform();
    for (Side side : {Side::user, Side::item}) {
      for (Normalization norm : {Normalization::row_degree, Normalization::row_sum}) {
        const std::size_t n = side == Side::user ? users : items;
        if (neighbor_quota(k, n) == 0) continue;
        const auto index = build_similarity_index(d, side, k, norm);
        const auto expected = oracle::dense_similarity(d, side, k, norm);
        for (std::size_t a = 0; a < n; ++a) {
          const auto got = index.neighbors(static_cast<NodeId>(a));
          ++lists;
          if (!std::equal(got.begin(), got.end(), expected[a].begin(), expected[a].end())) ++mismatches;
        }
      }
    }
  }
  return check(mismatches == 0, fmt("%zu of %zu neighbor lists differ from dense S (50 datasets, 2 sides, 2 norms)",
                                     mismatches, lists));
}

// ---------------------------------------------------------------- 3

Outcome metrics_oracle() {
  std::size_t mismatches = 0;
  double worst_independent = 0.0;
  Rng rng(5);
  for (std::uint64_t t = 0; t < 50; ++t) {
    const std::size_t users = 5 + rng.below(96);
    const std::size_t items = 10 + rng.below(91);
    const auto d = fixtures::random_dataset(users, items, 2, std::min<std::size_t>(12, items - 1), 0.3, 300 + t);
    const auto backbone = t % 3 == 0 ? Backbone::gcn : Backbone::mf;
    const auto m = fixtures::random_model(users, items, 6, backbone, 2, false, 1.0, 300 + t);
    const GraphPropagator graph(d);
    const auto pe = propagate(m, &graph);
    const auto head = t % 2 ? ScoreHead::dot : ScoreHead::neg_euclidean_sq;
    const std::size_t k = 1 + rng.below(30);
    const auto fast = evaluate(pe, d, k, head, true);
    if (!(fast == brute_force_reference(pe, d, k, head, true))) ++mismatches;
    std::vector<std::vector<double>> table(users, std::vector<double>(items));
    for (std::size_t u = 0; u < users; ++u)
      for (std::size_t i = 0; i < items; ++i)
        table[u][i] = score_pair(pe, static_cast<NodeId>(u), static_cast<NodeId>(i), head);
    const auto o = oracle::full_ranking(table, d, k);
    worst_independent = std::max({worst_independent, std::abs(o.recall - fast.recall), std::abs(o.ndcg - fast.ndcg)});
  }

  // test = {1, 3}; item 0 is a training positive and scores highest.
  const auto hand = InteractionDataset::from_pairs({{0, 0}}, {{0, 1}, {0, 3}}, 1, 5);
  ModelState hm = init_model(1, 5, 1, Backbone::mf, 0);
  hm.user_embeddings.data = {1.0};
  hm.item_embeddings.data = {9, 5, 4, 3, 2};
  const double ndcg = evaluate(hm, nullptr, hand, 3, ScoreHead::dot).ndcg;
  const double expected = (1.0 + 0.5) / (1.0 + 1.0 / std::log2(3.0));
  const bool hand_ok = std::abs(ndcg - expected) < 1e-6 && std::abs(ndcg - 0.9199) < 5e-4;
  return check(mismatches == 0 && worst_independent < 1e-12 && hand_ok,
               fmt("%zu/50 differ from reference; independent oracle max diff %.1e; hand NDCG %.6f (expect %.6f)",
                   mismatches, worst_independent, ndcg, expected));
}

// ---------------------------------------------------------------- 4

InteractionDataset benchmark(std::uint64_t seed) {
  return generate_synthetic(4, 50, 50, 0.05, 0.2, seed);
}

Outcome sampler_contracts() {
  const auto d = benchmark(1);
  const auto index = build_similarity_index(d, Side::user, 0.05);
  constexpr std::size_t kRows = 100000;
  Sampler a(d, 42);
  Sampler b(d, 42);
  std::size_t rows = 0;
  std::size_t violations = 0;
  bool identical = true;
  // counts[len][pos]: how often the neighbor at list position pos was chosen.
  std::map<std::size_t, std::vector<double>> counts;
  while (rows < kRows) {
    const auto batch = a.quadruple(index, 256, 4);
    identical = identical && batch == b.quadruple(index, 256, 4);
    for (const auto& r : batch.as<QuadrupleRow>()) {
      if (rows == kRows) break;
      ++rows;
      const auto nb = index.neighbors(r.user);
      const auto it = std::find_if(nb.begin(), nb.end(), [&](const Neighbor& n) { return n.id == r.similar; });
      if (!d.is_positive(r.user, r.pos) || d.is_positive(r.user, r.neg) || r.similar == r.user || it == nb.end()) {
        ++violations;
        continue;
      }
      auto& c = counts[nb.size()];
      c.resize(nb.size());
      ++c[static_cast<std::size_t>(it - nb.begin())];
    }
  }
  double worst_z = 0.0;
  for (const auto& [len, c] : counts) {
    double n = 0;
    for (double x : c) n += x;
    const double p = 1.0 / static_cast<double>(len);
    const double sigma = std::sqrt(n * p * (1 - p));
    for (double x : c) worst_z = std::max(worst_z, std::abs(x - n * p) / sigma);
  }
  return check(violations == 0 && worst_z <= 4.0 && identical,
               fmt("%zu quadruples, %zu membership violations, worst position deviation %.2f sigma, stream %s",
                   rows, violations, worst_z, identical ? "reproducible" : "NOT reproducible"));
}

// ---------------------------------------------------------------- 5, 6

struct Run {
  std::vector<double> recall;  // recall[e-1] after epoch e
  double best = 0;
  std::size_t best_epoch = 0;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr LossKind kBenchLosses[] = {LossKind::mse, LossKind::bce, LossKind::bpr, LossKind::spr};

Run run_benchmark(const InteractionDataset& d, const SimilarityIndex& index, LossKind loss, std::uint64_t seed) {
  TrainConfig c;
  c.loss = loss;
  c.dim = 16;
  c.batch_size = 256;
  c.gamma = 4;
  c.k_percent = 0.05;
  c.epochs = 200;
  c.eval_every = 1;
  c.early_stop_patience = 0;
  c.seed = seed;
  Trainer t(d, &index, c);
  Run r;
  for (const auto& rep : t.run()) r.recall.push_back(rep.metrics->recall);
  r.best = t.best_recall();
  r.best_epoch = t.best_epoch();
  return r;
}

using Results = std::map<std::pair<std::uint64_t, LossKind>, Run>;

const Results& benchmark_results() {
  static const Results results = [] {
    Results out;
    for (std::uint64_t seed : kSeeds) {
      const auto d = benchmark(seed);
      const auto index = build_similarity_index(d, Side::user, 0.05);
      for (LossKind loss : kBenchLosses) out[{seed, loss}] = run_benchmark(d, index, loss, seed);
    }
    return out;
  }();
  return results;
}

std::string fixture_path(const std::string& dir) { return dir + "/synthetic_benchmark.csv"; }

void record_fixtures(const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream os;
  os << "seed,loss,recall_at_100,recall_at_200,best_recall,best_epoch\n";
  for (const auto& [key, run] : benchmark_results())
    os << key.first << ',' << to_string(key.second) << ',' << format_double(run.recall[99]) << ','
       << format_double(run.recall[199]) << ',' << format_double(run.best) << ',' << run.best_epoch << '\n';
  atomic_write_text(fixture_path(dir), os.str());
}

// Empty string when every recorded row matches the current build.
std::string compare_fixtures(const std::string& dir) {
  std::ifstream in(fixture_path(dir));
  if (!in) return "fixture " + fixture_path(dir) + " missing (run with --record)";
  std::string line;
  std::getline(in, line);
  std::size_t checked = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) return "malformed fixture row: " + line;
    const auto it = benchmark_results().find({std::stoull(f[0]), parse_loss(f[1])});
    if (it == benchmark_results().end()) return "fixture row for an unknown run: " + line;
    const Run& r = it->second;
    const double tol = 1e-9;
    if (std::abs(r.recall[99] - std::stod(f[2])) > tol || std::abs(r.recall[199] - std::stod(f[3])) > tol ||
        std::abs(r.best - std::stod(f[4])) > tol || r.best_epoch != std::stoull(f[5]))
      return "regression vs fixture for seed " + f[0] + " " + f[1];
    ++checked;
  }
  if (checked != benchmark_results().size()) return "fixture covers " + std::to_string(checked) + " runs";
  return {};
}

Outcome convergence(const std::string& fixtures_dir) {
  const auto& res = benchmark_results();
  bool reach_ok = true;
  bool final_ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const Run& bpr = res.at({seed, LossKind::bpr});
    const Run& spr = res.at({seed, LossKind::spr});
    const double target = bpr.recall[199];
    std::size_t reach = 0;
    for (std::size_t e = 0; e < spr.recall.size() && !reach; ++e)
      if (spr.recall[e] >= target) reach = e + 1;
    reach_ok = reach_ok && reach > 0 && reach <= 100;
    final_ok = final_ok && spr.recall[199] >= target - 0.005;
    detail += fmt("\n      seed %llu: bpr@200 %.4f, spr reaches it at epoch %zu, spr@200 %.4f (best %.4f @%zu)",
                  static_cast<unsigned long long>(seed), target, reach, spr.recall[199], spr.best, spr.best_epoch);
  }
  const std::string regression = compare_fixtures(fixtures_dir);
  const std::string head = fmt("reach<=100: %s; final spr >= bpr-0.005: %s; fixtures: %s", reach_ok ? "yes" : "no",
                               final_ok ? "yes" : "no", regression.empty() ? "match" : regression.c_str());
  return check(reach_ok && final_ok && regression.empty(), head + detail);
}

Outcome loss_ordering() {
  const auto& res = benchmark_results();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const double mse = res.at({seed, LossKind::mse}).recall[199];
    const double bce = res.at({seed, LossKind::bce}).recall[199];
    const double bpr = res.at({seed, LossKind::bpr}).recall[199];
    const double spr = res.at({seed, LossKind::spr}).recall[199];
    const double pointwise = std::max(mse, bce);
    const bool seed_ok = bpr >= pointwise && spr >= pointwise;
    ok = ok && seed_ok;
    detail += fmt("\n      seed %llu @200: bpr %.4f spr %.4f | mse %.4f bce %.4f %s",
                  static_cast<unsigned long long>(seed), bpr, spr, mse, bce, seed_ok ? "" : "<- violated");
  }
  return check(ok, std::string(ok ? "3/3 seeds ordered" : "ordering violated") + detail);
}

// ---------------------------------------------------------------- 7

Outcome sampling_cost() {
  const auto d = benchmark(1);
  const auto index = build_similarity_index(d, Side::user, 0.05);
  constexpr std::size_t kBatch = 256;
  const std::size_t batches = (d.num_train() + kBatch - 1) / kBatch;
  using Clock = std::chrono::steady_clock;
  Sampler pw(d, 1);
  Sampler qd(d, 1);
  std::size_t sink = 0;
  auto time_epoch = [&](auto&& draw) {
    const auto t0 = Clock::now();
    for (std::size_t b = 0; b < batches; ++b) sink += draw().size();
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  // Interleaved repetitions, median of per-round ratios.
  std::vector<double> ratios;
  double pw_total = 0;
  double qd_total = 0;
  for (int round = 0; round < 41; ++round) {
    double p = 0;
    double q = 0;
    for (int e = 0; e < 10; ++e) {
      p += time_epoch([&] { return pw.pairwise(kBatch); });
      q += time_epoch([&] { return qd.quadruple(index, kBatch, 10); });
    }
    pw_total += p;
    qd_total += q;
    ratios.push_back(q / p);
  }
  std::nth_element(ratios.begin(), ratios.begin() + 20, ratios.end());
  const double ratio = ratios[20];
  return check(ratio >= 5.0 && ratio <= 20.0 && sink > 0,
               fmt("spr(gamma=10)/pairwise sampling time per epoch = %.2fx (pairwise %.3f ms, spr %.3f ms per epoch)",
                   ratio, 1e3 * pw_total / 410, 1e3 * qd_total / 410));
}

// ---------------------------------------------------------------- 8

Outcome gowalla() {
  const char* dir = std::getenv("SPR_GOWALLA_DIR");
  if (!dir) return {Outcome::skip, "set SPR_GOWALLA_DIR to a directory holding train.txt and test.txt"};
  const std::string base(dir);
  const auto d = load_interactions(base + "/train.txt", base + "/test.txt");
  TrainConfig c;  // d=64, B=1024, lr=1e-3, l2=1e-4 are the defaults
  c.loss = LossKind::bpr;
  c.epochs = 1000;
  c.early_stop_patience = 0;
  Trainer t(d, nullptr, c);
  const auto reps = t.run([](const EpochReport& r) {
    if (r.metrics) std::printf("      epoch %zu recall@20 %.4f\n", r.epoch, r.metrics->recall), std::fflush(stdout);
  });
  const double recall = reps.back().metrics ? reps.back().metrics->recall : t.evaluate_now().recall;
  return check(std::abs(recall - 0.1524) <= 0.005, fmt("MF+BPR recall@20 %.4f vs 0.1524 +- 0.005", recall));
}

}  // namespace

int main(int argc, char** argv) {
  bool record = false;
  int only = 0;
  std::string fixtures_dir = SPR_FIXTURE_DIR;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    if (arg == "--record") record = true;
    else if (arg == "--only" && a + 1 < argc) only = std::atoi(argv[++a]);
    else if (arg == "--fixtures" && a + 1 < argc) fixtures_dir = argv[++a];
    else {
      std::fprintf(stderr, "usage: %s [--record] [--only N] [--fixtures DIR]\n", argv[0]);
      return 2;
    }
  }
  if (record) {
    record_fixtures(fixtures_dir);
    std::printf("recorded %s\n", fixture_path(fixtures_dir).c_str());
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"similarity oracle", similarity_oracle},
      {"metrics oracle", metrics_oracle},
      {"sampler contracts", sampler_contracts},
      {"convergence speed", [&] { return convergence(fixtures_dir); }},
      {"loss ordering", loss_ordering},
      {"sampling cost", sampling_cost},
      {"gowalla mf+bpr", gowalla},
  };
  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    if (only && static_cast<std::size_t>(only) != c + 1) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::fail ? "FAIL" : "SKIP";
    std::printf("[%s] %zu %s (%.1fs): %s\n", tag, c + 1, criteria[c].first, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += o.status == Outcome::fail;
  }
  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}
