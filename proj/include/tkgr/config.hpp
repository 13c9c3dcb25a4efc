#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tkgr/model.hpp"
#include "tkgr/trainer.hpp"

namespace tkgr {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error("config: " + what) {}
};

/// Flat key = value run configuration. Every field of the encoder, verbalizer,
/// history, loss, and training configurations is addressable; unknown keys are
/// an error, and every key has a default (the struct initializers below).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  std::string train_file;
  std::string valid_file;
  std::string test_file;
  std::string descriptions_file;
  std::string output_dir = "out";
  bool add_inverses = true;

  static RunConfig load(std::istream& in);
  static RunConfig load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void write(std::ostream& out) const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline const char* order_name(HistoryOrder o) {
  switch (o) {
    case HistoryOrder::descending: return "descending";
    case HistoryOrder::ascending: return "ascending";
    case HistoryOrder::random_order: return "random";
  }
  return "?";
}

inline const char* form_name(HistoryForm f) {
  return f == HistoryForm::pairs ? "pairs" : "entities";
}

inline const char* reparam_name(ReparamMode m) {
  return m == ReparamMode::embedding ? "embedding" : "mlp";
}

inline const char* bool_name(bool b) { return b ? "true" : "false"; }

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  EncoderConfig& ec = model.encoder;
  VerbalizeOptions& vo = model.verbalize;
  HistoryConfig& hc = model.history;
  LossConfig& lc = model.loss;
  TrainConfig& tc = train;

  if (key == "train_file") train_file = value;
  else if (key == "valid_file") valid_file = value;
  else if (key == "test_file") test_file = value;
  else if (key == "descriptions_file") descriptions_file = value;
  else if (key == "output_dir") output_dir = value;
  else if (key == "add_inverses") add_inverses = parse_bool(key, value);

  else if (key == "encoder.layers") ec.layers = parse_int(key, value);
  else if (key == "encoder.width") ec.width = parse_int(key, value);
  else if (key == "encoder.heads") ec.heads = parse_int(key, value);
  else if (key == "encoder.prefix_len") ec.prefix_len = parse_int(key, value);
  else if (key == "encoder.max_seq") ec.max_seq = parse_int(key, value);
  else if (key == "encoder.reparam") {
    if (value == "embedding") ec.reparam = ReparamMode::embedding;
    else if (value == "mlp") ec.reparam = ReparamMode::mlp;
    else throw ConfigError("key '" + key + "': expected embedding|mlp, got '" + value + "'");
  }

  else if (key == "verbalize.description_budget") vo.description_budget = parse_int(key, value);
  else if (key == "verbalize.total_budget") vo.total_budget = parse_int(key, value);
  else if (key == "verbalize.include_timestamp") vo.include_timestamp = parse_bool(key, value);
  else if (key == "verbalize.include_description")
    vo.include_description = parse_bool(key, value);

  else if (key == "history.order") {
    if (value == "descending") hc.order = HistoryOrder::descending;
    else if (value == "ascending") hc.order = HistoryOrder::ascending;
    else if (value == "random") hc.order = HistoryOrder::random_order;
    else
      throw ConfigError("key '" + key + "': expected descending|ascending|random, got '" +
                        value + "'");
  } else if (key == "history.form") {
    if (value == "pairs") hc.form = HistoryForm::pairs;
    else if (value == "entities") hc.form = HistoryForm::entities;
    else throw ConfigError("key '" + key + "': expected pairs|entities, got '" + value + "'");
  } else if (key == "history.max_items") hc.max_items = parse_int(key, value);
  else if (key == "history.strict_less") hc.strict_less = parse_bool(key, value);
  else if (key == "history.seed") hc.seed = static_cast<uint64_t>(parse_int(key, value));

  else if (key == "loss.tau_init") lc.tau_init = parse_double(key, value);
  else if (key == "loss.gamma") lc.gamma = parse_double(key, value);
  else if (key == "loss.pre_batch_depth") lc.pre_batch_depth = parse_int(key, value);
  else if (key == "loss.use_self_negatives") lc.use_self_negatives = parse_bool(key, value);
  else if (key == "loss.tau_min") lc.tau_min = parse_double(key, value);

  else if (key == "train.lr") tc.lr = parse_double(key, value);
  else if (key == "train.epochs") tc.epochs = parse_int(key, value);
  else if (key == "train.batch_size") tc.batch_size = parse_int(key, value);
  else if (key == "train.seed") tc.seed = static_cast<uint64_t>(parse_int(key, value));
  else if (key == "train.freeze_policy") tc.freeze_policy = parse_freeze_policy(value);
  else if (key == "train.clip_norm") tc.clip_norm = parse_double(key, value);
  else if (key == "train.weight_decay") tc.weight_decay = parse_double(key, value);
  else if (key == "train.backbone_epochs") tc.backbone_epochs = parse_int(key, value);
  else if (key == "train.support_finetune_steps")
    tc.support_finetune_steps = parse_int(key, value);
  else if (key == "train.in_batch_cap") tc.in_batch_cap = parse_int(key, value);

  else throw ConfigError("unknown key '" + key + "'");
}

inline RunConfig RunConfig::load(std::istream& in) {
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    cfg.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return load(in);
}

/// Effective-config echo: every key with its resolved value, re-loadable.
inline void RunConfig::write(std::ostream& out) const {
  using namespace detail;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "train_file = " << train_file << "\n";
  out << "valid_file = " << valid_file << "\n";
  out << "test_file = " << test_file << "\n";
  out << "descriptions_file = " << descriptions_file << "\n";
  out << "output_dir = " << output_dir << "\n";
  out << "add_inverses = " << bool_name(add_inverses) << "\n";
  out << "encoder.layers = " << model.encoder.layers << "\n";
  out << "encoder.width = " << model.encoder.width << "\n";
  out << "encoder.heads = " << model.encoder.heads << "\n";
  out << "encoder.prefix_len = " << model.encoder.prefix_len << "\n";
  out << "encoder.max_seq = " << model.encoder.max_seq << "\n";
  out << "encoder.reparam = " << reparam_name(model.encoder.reparam) << "\n";
  out << "verbalize.description_budget = " << model.verbalize.description_budget << "\n";
  out << "verbalize.total_budget = " << model.verbalize.total_budget << "\n";
  out << "verbalize.include_timestamp = " << bool_name(model.verbalize.include_timestamp)
      << "\n";
  out << "verbalize.include_description = " << bool_name(model.verbalize.include_description)
      << "\n";
  out << "history.order = " << order_name(model.history.order) << "\n";
  out << "history.form = " << form_name(model.history.form) << "\n";
  out << "history.max_items = " << model.history.max_items << "\n";
  out << "history.strict_less = " << bool_name(model.history.strict_less) << "\n";
  out << "history.seed = " << model.history.seed << "\n";
  out << "loss.tau_init = " << num(model.loss.tau_init) << "\n";
  out << "loss.gamma = " << num(model.loss.gamma) << "\n";
  out << "loss.pre_batch_depth = " << model.loss.pre_batch_depth << "\n";
  out << "loss.use_self_negatives = " << bool_name(model.loss.use_self_negatives) << "\n";
  out << "loss.tau_min = " << num(model.loss.tau_min) << "\n";
  out << "train.lr = " << num(train.lr) << "\n";
  out << "train.epochs = " << train.epochs << "\n";
  out << "train.batch_size = " << train.batch_size << "\n";
  out << "train.seed = " << train.seed << "\n";
  out << "train.freeze_policy = " << freeze_policy_name(train.freeze_policy) << "\n";
  out << "train.clip_norm = " << num(train.clip_norm) << "\n";
  out << "train.weight_decay = " << num(train.weight_decay) << "\n";
  out << "train.backbone_epochs = " << train.backbone_epochs << "\n";
  out << "train.support_finetune_steps = " << train.support_finetune_steps << "\n";
  out << "train.in_batch_cap = " << train.in_batch_cap << "\n";
}

}  // namespace tkgr
