#pragma once

// Run configuration: a flat key=value file plus overrides. Later assignments
// win, so callers apply the file first and command-line values after it.
// Unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pgd/data.hpp"
#include "pgd/error.hpp"
#include "pgd/network.hpp"
#include "pgd/trainer.hpp"

namespace pgd {

struct RunSpec {
  std::uint64_t seed = 0;

  // data: a CSV path, or empty to synthesize
  std::string data;
  TaskKind task = TaskKind::regression;
  std::size_t n = 2000;
  Eigen::Index input_dim = 8;
  Eigen::Index output_dim = 1;
  Eigen::Index classes = 3;
  double noise_sd = 0.1;
  double separation = 4.0;
  double val_fraction = 0.2;

  // network
  std::vector<Eigen::Index> hidden{32};
  Activation activation = Activation::tanh;

  Algorithm algo = Algorithm::predicted;
  TrainConfig train;
};

namespace detail {

inline std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (is.fail() || !is.eof())
    fail(ErrorKind::config, "key '" + key + "': cannot parse '" + value + "'");
  if constexpr (std::is_unsigned_v<T>)
    require(value.find('-') == std::string::npos, ErrorKind::config, "key '" + key + "' must be >= 0");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail(ErrorKind::config, "key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<Eigen::Index> parse_widths(const std::string& key, const std::string& v) {
  std::vector<Eigen::Index> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_number<Eigen::Index>(key, trim_ws(part)));
  require(!out.empty(), ErrorKind::config, "key '" + key + "' needs at least one width");
  return out;
}

inline LossKind parse_loss(const std::string& v) {
  if (v == "squared" || v == "mse") return LossKind::squared_vector;
  if (v == "cross_entropy" || v == "ce") return LossKind::cross_entropy;
  fail(ErrorKind::config, "unknown loss '" + v + "'");
}

inline std::string loss_name(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "squared"; }

inline std::string join_widths(const std::vector<Eigen::Index>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

inline std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

struct KeyHandler {
  std::function<void(RunSpec&, const std::string&)> set;
  std::function<std::string(const RunSpec&)> get;
};

inline const std::map<std::string, KeyHandler>& key_table() {
  using K = const std::string&;
  static const std::map<std::string, KeyHandler> table = {
      {"seed", {[](RunSpec& s, K v) { s.seed = parse_number<std::uint64_t>("seed", v); s.train.seed = s.seed; },
                [](const RunSpec& s) { return std::to_string(s.seed); }}},
      {"data", {[](RunSpec& s, K v) { s.data = v; }, [](const RunSpec& s) { return s.data; }}},
      {"task", {[](RunSpec& s, K v) {
                  s.task = parse_task_kind(v);
                  s.train.loss.kind = s.task == TaskKind::classification ? LossKind::cross_entropy
                                                                          : LossKind::squared_vector;
                },
                [](const RunSpec& s) { return to_string(s.task); }}},
      {"n", {[](RunSpec& s, K v) { s.n = parse_number<std::size_t>("n", v); },
             [](const RunSpec& s) { return std::to_string(s.n); }}},
      {"input_dim", {[](RunSpec& s, K v) { s.input_dim = parse_number<Eigen::Index>("input_dim", v); },
                     [](const RunSpec& s) { return std::to_string(s.input_dim); }}},
      {"output_dim", {[](RunSpec& s, K v) { s.output_dim = parse_number<Eigen::Index>("output_dim", v); },
                      [](const RunSpec& s) { return std::to_string(s.output_dim); }}},
      {"classes", {[](RunSpec& s, K v) { s.classes = parse_number<Eigen::Index>("classes", v); },
                   [](const RunSpec& s) { return std::to_string(s.classes); }}},
      {"noise_sd", {[](RunSpec& s, K v) { s.noise_sd = parse_number<double>("noise_sd", v); },
                    [](const RunSpec& s) { return num(s.noise_sd); }}},
      {"separation", {[](RunSpec& s, K v) { s.separation = parse_number<double>("separation", v); },
                      [](const RunSpec& s) { return num(s.separation); }}},
      {"val_fraction", {[](RunSpec& s, K v) { s.val_fraction = parse_number<double>("val_fraction", v); },
                        [](const RunSpec& s) { return num(s.val_fraction); }}},
      {"hidden", {[](RunSpec& s, K v) { s.hidden = parse_widths("hidden", v); },
                  [](const RunSpec& s) { return join_widths(s.hidden); }}},
      {"activation", {[](RunSpec& s, K v) { s.activation = parse_activation(v); },
                      [](const RunSpec& s) { return to_string(s.activation); }}},
      {"algo", {[](RunSpec& s, K v) { s.algo = parse_algorithm(v); },
                [](const RunSpec& s) { return to_string(s.algo); }}},
      {"epochs", {[](RunSpec& s, K v) { s.train.epochs = parse_number<std::int64_t>("epochs", v); },
                  [](const RunSpec& s) { return std::to_string(s.train.epochs); }}},
      {"batch_size", {[](RunSpec& s, K v) { s.train.batch_size = parse_number<std::size_t>("batch_size", v); },
                      [](const RunSpec& s) { return std::to_string(s.train.batch_size); }}},
      {"f", {[](RunSpec& s, K v) { s.train.control_fraction = parse_number<double>("f", v); },
             [](const RunSpec& s) { return num(s.train.control_fraction); }}},
      {"loss", {[](RunSpec& s, K v) { s.train.loss.kind = parse_loss(v); },
                [](const RunSpec& s) { return loss_name(s.train.loss.kind); }}},
      {"smoothing", {[](RunSpec& s, K v) { s.train.loss.smoothing = parse_number<double>("smoothing", v); },
                     [](const RunSpec& s) { return num(s.train.loss.smoothing); }}},
      {"optimizer", {[](RunSpec& s, K v) { s.train.optimizer = parse_optimizer(v); },
                     [](const RunSpec& s) { return to_string(s.train.optimizer); }}},
      {"lr", {[](RunSpec& s, K v) { s.train.learning_rate = parse_number<double>("lr", v); },
              [](const RunSpec& s) { return num(s.train.learning_rate); }}},
      {"lr_decay", {[](RunSpec& s, K v) { s.train.lr_decay = parse_number<double>("lr_decay", v); },
                    [](const RunSpec& s) { return num(s.train.lr_decay); }}},
      {"momentum", {[](RunSpec& s, K v) { s.train.momentum = parse_number<double>("momentum", v); },
                    [](const RunSpec& s) { return num(s.train.momentum); }}},
      {"weight_decay", {[](RunSpec& s, K v) { s.train.weight_decay = parse_number<double>("weight_decay", v); },
                        [](const RunSpec& s) { return num(s.train.weight_decay); }}},
      {"refit_period", {[](RunSpec& s, K v) { s.train.refit.period = parse_number<std::int64_t>("refit_period", v); },
                        [](const RunSpec& s) { return std::to_string(s.train.refit.period); }}},
      {"buffer_capacity",
       {[](RunSpec& s, K v) { s.train.refit.buffer_capacity = parse_number<std::int64_t>("buffer_capacity", v); },
        [](const RunSpec& s) { return std::to_string(s.train.refit.buffer_capacity); }}},
      {"ridge_lambda", {[](RunSpec& s, K v) { s.train.refit.ridge_lambda = parse_number<double>("ridge_lambda", v); },
                        [](const RunSpec& s) { return num(s.train.refit.ridge_lambda); }}},
      {"rank", {[](RunSpec& s, K v) { s.train.refit.rank = parse_number<Eigen::Index>("rank", v); },
                [](const RunSpec& s) { return std::to_string(s.train.refit.rank); }}},
      {"predictor", {[](RunSpec& s, K v) { s.train.refit.kind = parse_predictor_kind(v); },
                     [](const RunSpec& s) { return to_string(s.train.refit.kind); }}},
      {"warmup", {[](RunSpec& s, K v) { s.train.warmup = parse_bool("warmup", v); },
                  [](const RunSpec& s) { return std::string(s.train.warmup ? "true" : "false"); }}},
      {"reduce_precision",
       {[](RunSpec& s, K v) { s.train.reduce_precision = parse_bool("reduce_precision", v); },
        [](const RunSpec& s) { return std::string(s.train.reduce_precision ? "true" : "false"); }}},
      {"budget", {[](RunSpec& s, K v) {
                    if (v.empty() || v == "none") s.train.budget.reset();
                    else s.train.budget = parse_number<double>("budget", v);
                  },
                  [](const RunSpec& s) { return s.train.budget ? num(*s.train.budget) : std::string("none"); }}},
      {"eval_every", {[](RunSpec& s, K v) { s.train.eval_every = parse_number<std::int64_t>("eval_every", v); },
                      [](const RunSpec& s) { return std::to_string(s.train.eval_every); }}},
      {"cost_forward", {[](RunSpec& s, K v) { s.train.cost_model.forward = parse_number<double>("cost_forward", v); },
                        [](const RunSpec& s) { return num(s.train.cost_model.forward); }}},
      {"cost_backward",
       {[](RunSpec& s, K v) { s.train.cost_model.backward = parse_number<double>("cost_backward", v); },
        [](const RunSpec& s) { return num(s.train.cost_model.backward); }}},
      {"cost_cheap_forward",
       {[](RunSpec& s, K v) { s.train.cost_model.cheap_forward = parse_number<double>("cost_cheap_forward", v); },
        [](const RunSpec& s) { return num(s.train.cost_model.cheap_forward); }}},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::key_table()) keys.push_back(k);
  return keys;
}

/// Assigns one key. Unknown keys raise ConfigError.
inline void apply_setting(RunSpec& spec, const std::string& key, const std::string& value) {
  const auto& table = detail::key_table();
  const auto it = table.find(key);
  if (it == table.end()) fail(ErrorKind::config, "unknown config key '" + key + "'");
  it->second.set(spec, value);
}

/// Parses "key=value" into its parts.
inline std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) fail(ErrorKind::config, "expected key=value, got '" + text + "'");
  const std::string key = detail::trim_ws(text.substr(0, eq));
  require(!key.empty(), ErrorKind::config, "empty key in '" + text + "'");
  return {key, detail::trim_ws(text.substr(eq + 1))};
}

/// Applies a config text: one key=value per line, '#' starts a comment.
inline void apply_config_text(RunSpec& spec, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim_ws(line);
    if (line.empty()) continue;
    try {
      const auto [k, v] = split_assignment(line);
      apply_setting(spec, k, v);
    } catch (const Error& e) {
      fail(e.kind(), origin + ":" + std::to_string(lineno) + ": " + e.message());
    }
  }
}

inline void apply_config_file(RunSpec& spec, const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(spec, ss.str(), path);
}

/// Every key with its resolved value, sorted by key; re-reading the dump
/// reproduces the spec.
inline std::string effective_config(const RunSpec& spec) {
  std::string out;
  for (const auto& [k, h] : detail::key_table()) out += k + "=" + h.get(spec) + "\n";
  return out;
}

/// Loads or synthesizes the dataset a RunSpec describes.
inline Dataset make_dataset(const RunSpec& spec) {
  if (!spec.data.empty()) {
    CsvSchema schema;
    schema.kind = spec.task;
    schema.val_fraction = spec.val_fraction;
    return load_csv(spec.data, schema);
  }
  if (spec.task == TaskKind::classification)
    return gen_blobs(spec.n, spec.classes, spec.input_dim, spec.separation, spec.seed, spec.val_fraction);
  return gen_regression(spec.n, spec.input_dim, spec.noise_sd, spec.seed, spec.output_dim, spec.val_fraction);
}

inline NetworkConfig network_config(const RunSpec& spec, const Dataset& data) {
  NetworkConfig cfg;
  cfg.input_dim = data.input_dim();
  cfg.output_dim = data.output_dim();
  cfg.hidden_widths = spec.hidden;
  cfg.activation = spec.activation;
  cfg.seed = spec.seed;
  return cfg;
}

}  // namespace pgd
