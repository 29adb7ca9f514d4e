#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "spr/errors.hpp"
#include "spr/losses.hpp"
#include "spr/model.hpp"
#include "spr/similarity.hpp"

namespace spr {

inline double parse_double(std::string_view key, std::string_view v) {
  double x = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  return x;
}

inline std::uint64_t parse_count(std::string_view key, std::string_view v) {
  std::uint64_t x = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  return x;
}

/// Flat key=value text: one pair per line, '#' starts a comment, blank
/// lines ignored. Later keys override earlier ones.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

/// Training hyperparameters. Defaults: d=64, B=1024, lr=1e-3, L2=1e-4, gamma=10.
struct TrainConfig {
  LossKind loss = LossKind::bpr;
  Backbone backbone = Backbone::mf;
  std::size_t dim = 64;
  std::size_t batch_size = 1024;
  std::size_t gamma = 10;
  double k_percent = 0.01;
  Normalization sim_normalization = Normalization::row_degree;
  double lr = 1e-3;
  double l2 = 1e-4;
  double margin = 1.0;
  std::size_t neg_per_pos = 1;
  std::size_t epochs = 1000;
  std::size_t eval_every = 20;
  std::uint64_t seed = 2024;
  std::size_t early_stop_patience = 10;  // evaluations; 0 disables
  std::size_t gcn_layers = 3;
  std::size_t top_k = 20;
  std::optional<ScoreHead> score_head;  // defaults to the loss's head

  ScoreHead head() const { return score_head.value_or(head_for(loss)); }

  /// Returns false for keys this struct does not own.
  bool set(std::string_view key, std::string_view v) {
    if (key == "loss") loss = parse_loss(v);
    else if (key == "backbone") backbone = parse_backbone(v);
    else if (key == "dim") dim = parse_count(key, v);
    else if (key == "batch_size") batch_size = parse_count(key, v);
    else if (key == "gamma") gamma = parse_count(key, v);
    else if (key == "k_percent") k_percent = parse_double(key, v);
    else if (key == "sim_normalization") sim_normalization = parse_normalization(v);
    else if (key == "lr") lr = parse_double(key, v);
    else if (key == "l2") l2 = parse_double(key, v);
    else if (key == "margin") margin = parse_double(key, v);
    else if (key == "neg_per_pos") neg_per_pos = parse_count(key, v);
    else if (key == "epochs") epochs = parse_count(key, v);
    else if (key == "eval_every") eval_every = parse_count(key, v);
    else if (key == "seed") seed = parse_count(key, v);
    else if (key == "early_stop_patience") early_stop_patience = parse_count(key, v);
    else if (key == "gcn_layers") gcn_layers = parse_count(key, v);
    else if (key == "top_k") top_k = parse_count(key, v);
    else if (key == "score_head") score_head = parse_score_head(v);
    else return false;
    return true;
  }

  void validate() const {
    if (dim < 1 || batch_size < 1 || gamma < 1 || neg_per_pos < 1 || top_k < 1 || eval_every < 1)
      throw ConfigError("dim, batch_size, gamma, neg_per_pos, top_k and eval_every must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(l2 >= 0.0)) throw ConfigError("l2 must be >= 0");
    if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
    if (!(k_percent > 0.0 && k_percent <= 1.0)) throw ConfigError("k_percent must lie in (0, 1]");
    if (backbone == Backbone::gcn && gcn_layers < 1) throw ConfigError("gcn_layers must be >= 1");
    if (head() != head_for(loss))
      throw ConfigError("score head " + std::string(to_string(head())) + " is invalid for loss " +
                        std::string(to_string(loss)) + " (expects " + std::string(to_string(head_for(loss))) + ")");
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "loss=" << to_string(loss) << '\n'
       << "backbone=" << to_string(backbone) << '\n'
       << "dim=" << dim << '\n'
       << "batch_size=" << batch_size << '\n'
       << "gamma=" << gamma << '\n'
       << "k_percent=" << format_double(k_percent) << '\n'
       << "sim_normalization=" << to_string(sim_normalization) << '\n'
       << "lr=" << format_double(lr) << '\n'
       << "l2=" << format_double(l2) << '\n'
       << "margin=" << format_double(margin) << '\n'
       << "neg_per_pos=" << neg_per_pos << '\n'
       << "epochs=" << epochs << '\n'
       << "eval_every=" << eval_every << '\n'
       << "seed=" << seed << '\n'
       << "early_stop_patience=" << early_stop_patience << '\n'
       << "gcn_layers=" << gcn_layers << '\n'
       << "top_k=" << top_k << '\n'
       << "score_head=" << to_string(head()) << '\n';
    return os.str();
  }

  static TrainConfig from_text(std::string_view text) {
    TrainConfig c;
    for (const auto& [k, v] : parse_key_values(text))
      if (!c.set(k, v)) throw ConfigError("unknown config key '" + k + "'");
    return c;
  }
};

}  // namespace spr
