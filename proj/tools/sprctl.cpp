// sprctl: command-line front end for dataset stats, similarity indexes,
// training, evaluation, gamma sweeps and synthetic data.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spr/config.hpp"
#include "spr/dataset.hpp"
#include "spr/eval.hpp"
#include "spr/io.hpp"
#include "spr/similarity.hpp"
#include "spr/trainer.hpp"
#include "spr/version.hpp"

namespace fs = std::filesystem;
using namespace spr;

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text(const std::string& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

// ------------------------------------------------------------ data source

struct DataSource {
  std::string train;
  std::string test;
  bool synthetic = false;
  SyntheticSpec spec;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--train", train, "Training interactions (default $SPR_DATA_DIR/train.txt)");
    cmd->add_option("--test", test, "Test interactions (default $SPR_DATA_DIR/test.txt if present)");
    cmd->add_flag("--synthetic", synthetic, "Generate block-diagonal data instead of reading files");
    cmd->add_option("--blocks", spec.num_blocks, "Synthetic: number of blocks")->capture_default_str();
    cmd->add_option("--users-per-block", spec.users_per_block, "Synthetic: users per block")->capture_default_str();
    cmd->add_option("--items-per-block", spec.items_per_block, "Synthetic: items per block")->capture_default_str();
    cmd->add_option("--interactions-per-user", spec.interactions_per_user,
                    "Synthetic: positives per user, 0 = items-per-block/5")
        ->capture_default_str();
    cmd->add_option("--noise", spec.noise, "Synthetic: cross-block share")->capture_default_str();
    cmd->add_option("--holdout", spec.holdout, "Synthetic: share of positives moved to test")->capture_default_str();
    cmd->add_option("--popularity-skew", spec.popularity_skew, "Synthetic: in-block Zipf exponent")
        ->capture_default_str();
    cmd->add_option("--synth-seed", spec.seed, "Synthetic: generator seed")->capture_default_str();
  }

  void resolve() {
    if (synthetic) return;
    if (train.empty()) {
      const char* dir = std::getenv("SPR_DATA_DIR");
      if (!dir) throw ConfigError("no --train given and SPR_DATA_DIR is not set");
      train = (fs::path(dir) / "train.txt").string();
      if (test.empty() && fs::exists(fs::path(dir) / "test.txt")) test = (fs::path(dir) / "test.txt").string();
    }
    train = fs::absolute(train).string();
    if (!test.empty()) test = fs::absolute(test).string();
  }

  InteractionDataset load() {
    resolve();
    return synthetic ? generate_synthetic(spec) : load_interactions(train, test);
  }

  std::string manifest_text() const {
    std::ostringstream os;
    if (synthetic) {
      os << "data_source=synthetic\n"
         << "synth_blocks=" << spec.num_blocks << '\n'
         << "synth_users_per_block=" << spec.users_per_block << '\n'
         << "synth_items_per_block=" << spec.items_per_block << '\n'
         << "synth_interactions_per_user=" << spec.interactions_per_user << '\n'
         << "synth_noise=" << format_double(spec.noise) << '\n'
         << "synth_holdout=" << format_double(spec.holdout) << '\n'
         << "synth_popularity_skew=" << format_double(spec.popularity_skew) << '\n'
         << "synth_seed=" << spec.seed << '\n';
    } else {
      os << "data_source=files\n"
         << "train_path=" << train << '\n'
         << "test_path=" << test << '\n';
    }
    return os.str();
  }

  static DataSource from_manifest(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k) {
      const auto it = kv.find(k);
      if (it == kv.end()) throw FormatError("manifest lacks " + k);
      return it->second;
    };
    DataSource ds;
    if (get("data_source") == "synthetic") {
      ds.synthetic = true;
      ds.spec.num_blocks = parse_count("synth_blocks", get("synth_blocks"));
      ds.spec.users_per_block = parse_count("synth_users_per_block", get("synth_users_per_block"));
      ds.spec.items_per_block = parse_count("synth_items_per_block", get("synth_items_per_block"));
      ds.spec.interactions_per_user = parse_count("synth_interactions_per_user", get("synth_interactions_per_user"));
      ds.spec.noise = parse_double("synth_noise", get("synth_noise"));
      ds.spec.holdout = parse_double("synth_holdout", get("synth_holdout"));
      ds.spec.popularity_skew = parse_double("synth_popularity_skew", get("synth_popularity_skew"));
      ds.spec.seed = parse_count("synth_seed", get("synth_seed"));
    } else {
      ds.train = get("train_path");
      ds.test = get("test_path");
    }
    return ds;
  }
};

// ------------------------------------------------------------ training config

const char* const kConfigKeys[] = {"loss",   "backbone",   "dim",      "batch_size",   "gamma",
                                   "k_percent", "sim_normalization", "lr", "l2",      "margin",
                                   "neg_per_pos", "epochs",  "eval_every", "seed", "early_stop_patience",
                                   "gcn_layers", "top_k",    "score_head"};

struct ConfigSource {
  std::string file;
  std::map<std::string, std::string> flags;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--config", file, "key=value config file; flags override it")->check(CLI::ExistingFile);
    for (const char* key : kConfigKeys) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd->add_option_function<std::string>(
          "--" + flag, [this, k = std::string(key)](const std::string& v) { flags[k] = v; },
          std::string("Override config key ") + key);
    }
  }

  TrainConfig resolve() const {
    TrainConfig c = file.empty() ? TrainConfig{} : TrainConfig::from_text(read_text(file));
    for (const auto& [k, v] : flags) c.set(k, v);
    c.validate();
    return c;
  }
};

// An index fixes k_percent and the normalization; the config mirrors it so
// the manifest records what was actually used.
void align_with_index(TrainConfig& c, const SimilarityIndex& index, const ConfigSource& src) {
  const auto& meta = index.meta();
  if (src.flags.count("k_percent") && parse_double("k_percent", src.flags.at("k_percent")) != meta.k_percent)
    throw ConfigError("--k-percent " + src.flags.at("k_percent") + " conflicts with the index (built with " +
                      format_double(meta.k_percent) + ")");
  if (src.flags.count("sim_normalization") &&
      parse_normalization(src.flags.at("sim_normalization")) != meta.normalization)
    throw ConfigError("--sim-normalization conflicts with the index");
  c.k_percent = meta.k_percent;
  c.sim_normalization = meta.normalization;
}

// ------------------------------------------------------------ training runs

struct RunPaths {
  fs::path dir;
  fs::path manifest() const { return dir / "manifest.txt"; }
  fs::path curves() const { return dir / "curves.csv"; }
  fs::path best() const { return dir / "best.ckpt"; }
  fs::path last() const { return dir / "last.ckpt"; }
};

struct RunRequest {
  TrainConfig config;
  const InteractionDataset* data = nullptr;
  const SimilarityIndex* index = nullptr;
  std::string index_path;
  std::string data_manifest;
  RunPaths paths;
  std::string resume_from;
  std::string dump_batches;
  bool quiet = false;
};

struct RunResult {
  double best_recall = 0.0;
  double best_ndcg = 0.0;
  std::size_t best_epoch = 0;
  double wall_ms = 0.0;
  bool diverged = false;
  std::string divergence;
};

void write_manifest(const RunRequest& r) {
  std::ostringstream os;
  os << "engine_version=" << kEngineVersion << '\n'
     << r.data_manifest << "dataset_checksum=" << hex(r.data->checksum()) << '\n'
     << "sim_index=" << r.index_path << '\n'
     << "index_checksum=" << (r.index ? hex(index_checksum(*r.index)) : "") << '\n'
     << "seed=" << r.config.seed << '\n'
     << "resume_from=" << r.resume_from << '\n'
     << "curves=" << r.paths.curves().string() << '\n'
     << "best_checkpoint=" << r.paths.best().string() << '\n'
     << "last_checkpoint=" << r.paths.last().string() << '\n';
  std::istringstream cfg(r.config.to_text());
  for (std::string line; std::getline(cfg, line);) os << "config." << line << '\n';
  atomic_write_text(r.paths.manifest().string(), os.str());
}

// Running totals carried through checkpoints so resumed curves stay cumulative.
struct Totals {
  double wall_ms = 0.0;
  std::size_t samples = 0;
};

std::string with_totals(std::string trainer_state, const Totals& t) {
  return trainer_state + "cli_wall_ms=" + format_double(t.wall_ms) + "\ncli_samples=" + std::to_string(t.samples) + "\n";
}

Totals totals_from(const std::string& trainer_state) {
  const auto kv = parse_key_values(trainer_state);
  Totals t;
  if (kv.count("cli_wall_ms")) t.wall_ms = parse_double("cli_wall_ms", kv.at("cli_wall_ms"));
  if (kv.count("cli_samples")) t.samples = parse_count("cli_samples", kv.at("cli_samples"));
  return t;
}

// Curve rows of an earlier run up to and including `epoch`.
std::string kept_curve_rows(const fs::path& curves, std::size_t epoch) {
  std::ifstream in(curves);
  std::string out;
  std::string line;
  if (!in || !std::getline(in, line)) return out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (parse_count("curves epoch", line.substr(0, line.find(','))) <= epoch) out += line + '\n';
  }
  return out;
}

RunResult run_training(const RunRequest& r) {
  fs::create_directories(r.paths.dir);
  write_manifest(r);

  std::vector<std::string> warnings;
  std::optional<Trainer> trainer;
  Totals base;
  std::string earlier_rows;
  if (r.resume_from.empty()) {
    trainer.emplace(*r.data, r.index, r.config);
  } else {
    const Checkpoint ckpt = load_checkpoint(r.resume_from);
    trainer.emplace(Trainer::resume(ckpt, *r.data, r.index, r.config, &warnings));
    base = totals_from(ckpt.trainer_state);
    earlier_rows = kept_curve_rows(r.paths.curves(), ckpt.epoch);
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  Trainer& t = *trainer;

  std::unique_ptr<std::ofstream> dump;
  if (!r.dump_batches.empty()) {
    dump = std::make_unique<std::ofstream>(r.dump_batches);
    if (!*dump) throw IoError("cannot write " + r.dump_batches);
    *dump << "epoch,kind,u,l,i,j,label\n";
    t.observe_batches([&](std::size_t epoch, const TrainingBatch& b) {
      std::ostringstream rows;
      write_batch_csv(rows, b, false);
      std::istringstream lines(rows.str());
      for (std::string line; std::getline(lines, line);) *dump << epoch << ',' << line << '\n';
    });
  }

  std::vector<EpochReport> reports;
  Totals totals = base;
  auto save_last = [&] {
    Checkpoint c = t.checkpoint();
    c.trainer_state = with_totals(c.trainer_state, totals);
    save_checkpoint(c, r.paths.last().string());
  };
  auto write_curves = [&] {
    std::ostringstream os;
    os << "epoch,loss,recall@" << r.config.top_k << ",ndcg@" << r.config.top_k << ",wall_ms,samples\n"
       << earlier_rows;
    write_curves_csv(os, reports, r.config.top_k, false, base.wall_ms, base.samples);
    atomic_write_text(r.paths.curves().string(), os.str());
  };
  write_curves();

  t.run([&](const EpochReport& rep) {
    reports.push_back(rep);
    totals.wall_ms += rep.wall_ms;
    totals.samples += rep.samples;
    if (!rep.metrics) return;
    write_curves();
    if (t.best_epoch() == rep.epoch) save_checkpoint(t.best_checkpoint(), r.paths.best().string());
    save_last();
    if (!r.quiet)
      std::cerr << "epoch " << rep.epoch << " loss " << format_double(rep.loss) << " recall@" << r.config.top_k << ' '
                << format_double(rep.metrics->recall) << " ndcg@" << r.config.top_k << ' '
                << format_double(rep.metrics->ndcg) << '\n';
  });
  save_last();
  write_curves();
  if (!fs::exists(r.paths.best())) save_checkpoint(t.best_checkpoint(), r.paths.best().string());

  RunResult res;
  res.best_recall = t.best_recall();
  res.best_ndcg = t.best_ndcg();
  res.best_epoch = t.best_epoch();
  res.wall_ms = totals.wall_ms;
  res.diverged = t.diverged();
  res.divergence = t.divergence();
  if (t.early_stopped() && !r.quiet) std::cerr << "early stop at epoch " << t.epoch() << '\n';
  return res;
}

// ------------------------------------------------------------ commands

int cmd_stats(DataSource& ds) {
  write_stats_csv(std::cout, stats(ds.load()));
  return 0;
}

int cmd_gen_synth(DataSource& ds, const std::string& out) {
  ds.synthetic = true;
  const auto d = ds.load();
  fs::create_directories(out);
  dump_interactions(d, (fs::path(out) / "train.txt").string(), (fs::path(out) / "test.txt").string());
  write_stats_csv(std::cout, stats(d));
  return 0;
}

int cmd_build_sim(DataSource& ds, const std::string& side, double k, const std::string& norm, const std::string& out,
                  bool stamp_time) {
  const auto d = ds.load();
  auto index = build_similarity_index(d, parse_side(side), k, parse_normalization(norm));
  if (stamp_time)
    index.meta().build_time =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  save_index(index, out);
  std::cout << "nodes,quota,entries,empty_nodes,checksum\n"
            << index.num_nodes() << ',' << index.quota() << ',' << index.total_entries() << ','
            << index.empty_nodes().size() << ',' << hex(index_checksum(index)) << '\n';
  return 0;
}

struct TrainArgs {
  DataSource data;
  ConfigSource config;
  std::string sim_index;
  std::string out;
  std::string resume;
  std::string dump_batches;
  bool quiet = false;
};

int cmd_train(TrainArgs& a) {
  TrainConfig config = a.config.resolve();
  const auto d = a.data.load();
  std::optional<SimilarityIndex> index;
  if (!a.sim_index.empty()) {
    a.sim_index = fs::absolute(a.sim_index).string();
    index = load_index(a.sim_index, d);
    align_with_index(config, *index, a.config);
  } else if (config.loss == LossKind::spr) {
    throw ConfigError("loss spr requires --sim-index (build one with `sprctl build-sim`)");
  }
  RunRequest r;
  r.config = config;
  r.data = &d;
  r.index = index ? &*index : nullptr;
  r.index_path = a.sim_index;
  r.data_manifest = a.data.manifest_text();
  r.paths.dir = fs::absolute(a.out);
  r.resume_from = a.resume.empty() ? "" : fs::absolute(a.resume).string();
  r.dump_batches = a.dump_batches;
  r.quiet = a.quiet;
  const auto res = run_training(r);
  if (res.diverged) {
    std::cerr << "error: training diverged: " << res.divergence << " (last finite state in " << r.paths.last().string()
              << ")\n";
    return 3;
  }
  std::cout << "best_epoch,best_recall,best_ndcg,wall_ms\n"
            << res.best_epoch << ',' << format_double(res.best_recall) << ',' << format_double(res.best_ndcg) << ','
            << std::llround(res.wall_ms) << '\n';
  return 0;
}

int cmd_eval(DataSource& ds, const std::string& checkpoint, std::size_t k, const std::string& per_user,
             const std::string& format) {
  const auto d = ds.load();
  const Checkpoint c = load_checkpoint(checkpoint);
  if (c.model.num_users() != d.num_users() || c.model.num_items() != d.num_items())
    throw ValidationError("checkpoint is " + std::to_string(c.model.num_users()) + "x" +
                          std::to_string(c.model.num_items()) + " but the dataset is " +
                          std::to_string(d.num_users()) + "x" + std::to_string(d.num_items()));
  std::optional<GraphPropagator> graph;
  if (c.model.backbone == Backbone::gcn) graph.emplace(d);
  const auto rep = evaluate(c.model, graph ? &*graph : nullptr, d, k, c.head, !per_user.empty());
  if (format == "text")
    write_metrics_text(std::cout, rep);
  else
    write_metrics_csv(std::cout, rep);
  if (!per_user.empty()) {
    std::ostringstream os;
    write_per_user_csv(os, rep);
    atomic_write_text(per_user, os.str());
  }
  return 0;
}

struct SweepArgs {
  TrainArgs train;
  std::string key = "gamma";
  std::vector<std::size_t> values;
};

int cmd_sweep(SweepArgs& a) {
  if (a.key != "gamma") throw ConfigError("only --key gamma is supported");
  TrainConfig base = a.train.config.resolve();
  if (base.epochs < base.eval_every) throw ConfigError("sweep needs epochs >= eval_every to report a best epoch");
  const auto d = a.train.data.load();
  std::optional<SimilarityIndex> index;
  if (!a.train.sim_index.empty()) {
    a.train.sim_index = fs::absolute(a.train.sim_index).string();
    index = load_index(a.train.sim_index, d);
    align_with_index(base, *index, a.train.config);
  } else if (base.loss == LossKind::spr) {
    throw ConfigError("loss spr requires --sim-index");
  }
  std::sort(a.values.begin(), a.values.end());
  a.values.erase(std::unique(a.values.begin(), a.values.end()), a.values.end());

  std::ostringstream summary;
  summary << "gamma,best_recall,best_ndcg,epochs_to_best,wall_ms\n";
  int failures = 0;
  for (std::size_t g : a.values) {
    RunRequest r;
    r.config = base;
    r.config.gamma = g;
    r.data = &d;
    r.index = index ? &*index : nullptr;
    r.index_path = a.train.sim_index;
    r.data_manifest = a.train.data.manifest_text();
    r.paths.dir = fs::path(a.train.out) / ("gamma_" + std::to_string(g));
    r.quiet = a.train.quiet;
    try {
      r.config.validate();
      const auto res = run_training(r);
      if (res.diverged) throw ValidationError("diverged: " + res.divergence);
      summary << g << ',' << format_double(res.best_recall) << ',' << format_double(res.best_ndcg) << ','
              << res.best_epoch << ',' << std::llround(res.wall_ms) << '\n';
      std::cerr << "gamma " << g << ": best recall " << format_double(res.best_recall) << " at epoch "
                << res.best_epoch << '\n';
    } catch (const std::exception& e) {
      ++failures;
      summary << g << ",,,,\n";
      std::cerr << "error: gamma " << g << " failed: " << e.what() << '\n';
    }
    atomic_write_text((fs::path(a.train.out) / "summary.csv").string(), summary.str());
  }
  std::cout << summary.str();
  return failures ? 1 : 0;
}

// Curve rows without the wall_ms column.
std::vector<std::string> comparable_rows(const fs::path& curves) {
  std::ifstream in(curves);
  if (!in) throw IoError("cannot open " + curves.string());
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw FormatError("curves row with " + std::to_string(f.size()) + " fields: " + line);
    rows.push_back(f[0] + ',' + f[1] + ',' + f[2] + ',' + f[3] + ',' + f[5]);
  }
  return rows;
}

int cmd_replay(const std::string& run_dir, std::string scratch) {
  const RunPaths original{run_dir};
  const auto kv = parse_key_values(read_text(original.manifest().string()));
  if (kv.count("engine_version") && kv.at("engine_version") != kEngineVersion)
    std::cerr << "warning: run was made with engine " << kv.at("engine_version") << ", replaying with "
              << kEngineVersion << '\n';
  std::string config_text;
  for (const auto& [k, v] : kv)
    if (k.rfind("config.", 0) == 0) config_text += k.substr(7) + "=" + v + "\n";
  const TrainConfig config = TrainConfig::from_text(config_text);
  DataSource ds = DataSource::from_manifest(kv);
  const auto d = ds.load();
  if (hex(d.checksum()) != kv.at("dataset_checksum"))
    throw ChecksumError("dataset checksum differs from the manifest; inputs changed since the run");
  std::optional<SimilarityIndex> index;
  const std::string index_path = kv.count("sim_index") ? kv.at("sim_index") : "";
  if (!index_path.empty()) {
    index = load_index(index_path, d);
    if (hex(index_checksum(*index)) != kv.at("index_checksum"))
      throw ChecksumError("similarity index differs from the manifest");
  }
  if (scratch.empty()) scratch = (fs::path(run_dir) / "replay").string();
  RunRequest r;
  r.config = config;
  r.data = &d;
  r.index = index ? &*index : nullptr;
  r.index_path = index_path;
  r.data_manifest = ds.manifest_text();
  r.paths.dir = scratch;
  r.quiet = true;
  run_training(r);
  const auto want = comparable_rows(original.curves());
  const auto got = comparable_rows(r.paths.curves());
  if (want != got) {
    std::cerr << "replay differs: " << want.size() << " recorded rows vs " << got.size() << " replayed\n";
    for (std::size_t k = 0; k < std::min(want.size(), got.size()); ++k)
      if (want[k] != got[k]) {
        std::cerr << "  first difference:\n    recorded " << want[k] << "\n    replayed " << got[k] << '\n';
        break;
      }
    return 1;
  }
  std::cout << "replay matches: " << want.size() - 1 << " curve rows identical (wall_ms ignored)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised personalized ranking: training and evaluation engine"};
  app.set_version_flag("--version", std::string(kEngineVersion));
  app.require_subcommand(1);

  DataSource stats_data;
  auto* stats_cmd = app.add_subcommand("stats", "Print users,items,interactions,density");
  stats_data.add_options(stats_cmd);

  DataSource synth_data;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("gen-synth", "Write a block-diagonal synthetic split");
  synth_data.add_options(synth_cmd);
  synth_cmd->add_option("--out", synth_out, "Output directory for train.txt and test.txt")->required();

  DataSource sim_data;
  std::string sim_side = "user";
  double sim_k = 0.01;
  std::string sim_norm = "row-degree";
  std::string sim_out;
  bool sim_stamp = false;
  auto* sim_cmd = app.add_subcommand("build-sim", "Build a top-k% co-occurrence similarity index");
  sim_data.add_options(sim_cmd);
  sim_cmd->add_option("--side", sim_side, "user|item")->capture_default_str();
  sim_cmd->add_option("--k-percent", sim_k, "Neighbor quota as a fraction of nodes")->capture_default_str();
  sim_cmd->add_option("--normalization", sim_norm, "row-degree|row-sum")->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "Index file")->required();
  sim_cmd->add_flag("--stamp-time", sim_stamp, "Record the build time (makes rebuilt files differ)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one model; writes manifest, curves and checkpoints");
  train.data.add_options(train_cmd);
  train.config.add_options(train_cmd);
  train_cmd->add_option("--sim-index", train.sim_index, "Similarity index (required for --loss spr)");
  train_cmd->add_option("--out", train.out, "Run directory")->required();
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--dump-batches", train.dump_batches, "Write every sampled batch as CSV");
  train_cmd->add_flag("--quiet", train.quiet, "No per-evaluation progress on stderr");

  DataSource eval_data;
  std::string eval_ckpt;
  std::size_t eval_k = 20;
  std::string eval_per_user;
  std::string eval_format = "csv";
  auto* eval_cmd = app.add_subcommand("eval", "Full-ranking Recall@K / NDCG@K of a checkpoint");
  eval_data.add_options(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-k,--k", eval_k, "Cutoff K")->capture_default_str();
  eval_cmd->add_option("--per-user", eval_per_user, "Also write per-user metrics to this CSV");
  eval_cmd->add_option("--format", eval_format, "csv|text")->check(CLI::IsMember({"csv", "text"}))->capture_default_str();

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "One training run per gamma value plus a summary CSV");
  sweep.train.data.add_options(sweep_cmd);
  sweep.train.config.add_options(sweep_cmd);
  sweep_cmd->add_option("--sim-index", sweep.train.sim_index, "Similarity index");
  sweep_cmd->add_option("--out", sweep.train.out, "Sweep directory")->required();
  sweep_cmd->add_option("--key", sweep.key, "Swept config key")->capture_default_str();
  sweep_cmd->add_option("--values", sweep.values, "Comma-separated values")->required()->delimiter(',');
  sweep_cmd->add_flag("--quiet", sweep.train.quiet, "No per-evaluation progress on stderr");

  std::string replay_dir;
  std::string replay_scratch;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run a training run from its manifest and compare curves");
  replay_cmd->add_option("--run", replay_dir, "Run directory holding manifest.txt")->required();
  replay_cmd->add_option("--scratch", replay_scratch, "Where to write the replay (default RUN/replay)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*stats_cmd) return cmd_stats(stats_data);
    if (*synth_cmd) return cmd_gen_synth(synth_data, synth_out);
    if (*sim_cmd) return cmd_build_sim(sim_data, sim_side, sim_k, sim_norm, sim_out, sim_stamp);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval_data, eval_ckpt, eval_k, eval_per_user, eval_format);
    if (*sweep_cmd) return cmd_sweep(sweep);
    if (*replay_cmd) return cmd_replay(replay_dir, replay_scratch);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
