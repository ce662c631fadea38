#include "cont/config.hpp"

#include "cont/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace cont {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")", key);
}

long parse_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const long x = parse_long(key, v);
  if (x < -(1L << 31) || x >= (1L << 31)) bad_value(key, v, "a 32-bit integer");
  return static_cast<int>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (pos != v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Entry {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define INT_KEY(name, field)                                                                              \
  Entry {                                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_int(name, v); },               \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                                \
  }
#define DBL_KEY(name, field)                                                                              \
  Entry {                                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(name, v); },            \
        [](const ExperimentConfig& c) { return fmt(c.field); }                                           \
  }
#define STR_KEY(name, field)                                                                              \
  Entry {                                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = v; },                                \
        [](const ExperimentConfig& c) { return c.field; }                                                \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"seed",
            [](ExperimentConfig& c, const std::string& v) {
              const long s = parse_long("seed", v);
              if (s < 0) bad_value("seed", v, "a non-negative integer");
              c.seed = static_cast<std::uint64_t>(s);
            },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      Entry{"mode", [](ExperimentConfig& c, const std::string& v) { c.train.mode = parse_mode(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.train.mode)); }},
      DBL_KEY("alpha", alpha),

      INT_KEY("model.d_model", model.d_model),
      INT_KEY("model.n_layers", model.n_layers),
      INT_KEY("model.n_heads", model.n_heads),
      INT_KEY("model.ffn_dim", model.ffn_dim),
      DBL_KEY("model.dropout", model.dropout_rate),
      INT_KEY("model.max_len", model.max_len),
      DBL_KEY("model.label_smoothing", model.label_smoothing),

      INT_KEY("beam.beam_size", beam.beam_size),
      INT_KEY("beam.max_len", beam.max_len),
      DBL_KEY("beam.length_penalty", beam.length_penalty),
      INT_KEY("beam.num_groups", beam.num_groups),
      DBL_KEY("beam.diversity_strength", beam.diversity_strength),

      INT_KEY("train.warmup_steps", train.warmup_steps),
      INT_KEY("train.warmup_patience", train.warmup_patience),
      INT_KEY("train.max_steps", train.max_steps),
      INT_KEY("train.batch_size", train.batch_size),
      DBL_KEY("train.learning_rate", train.adam.learning_rate),
      DBL_KEY("train.adam_beta1", train.adam.beta1),
      DBL_KEY("train.adam_beta2", train.adam.beta2),
      DBL_KEY("train.adam_eps", train.adam.eps),
      INT_KEY("train.lr_warmup_steps", train.adam.warmup_steps),
      Entry{"train.lr_schedule",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "constant") c.train.adam.schedule = LrSchedule::Constant;
              else if (v == "inverse_sqrt") c.train.adam.schedule = LrSchedule::InverseSqrt;
              else bad_value("train.lr_schedule", v, "constant or inverse_sqrt");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.train.adam.schedule == LrSchedule::Constant ? "constant" : "inverse_sqrt");
            }},
      DBL_KEY("train.clip_norm", train.clip_norm),
      INT_KEY("train.m", train.m),
      Entry{"train.train_beam_size",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto") c.train.train_beam_size.reset();
              else c.train.train_beam_size = parse_int("train.train_beam_size", v);
            },
            [](const ExperimentConfig& c) {
              return c.train.train_beam_size ? std::to_string(*c.train.train_beam_size) : std::string("auto");
            }},
      DBL_KEY("train.selfgen_ratio", train.selfgen_ratio),
      DBL_KEY("train.gamma", train.loss.gamma),
      DBL_KEY("train.tau", train.loss.tau),
      DBL_KEY("train.ctr_weight", train.ctr_weight),
      DBL_KEY("train.diversity_strength", train.diversity_strength),
      INT_KEY("train.gen_max_len", train.gen_max_len),
      DBL_KEY("train.length_penalty", train.length_penalty),
      INT_KEY("train.validate_every", train.validate_every),
      INT_KEY("train.early_stop_patience", train.early_stop_patience),
      INT_KEY("train.validate_samples", train.validate_samples),

      INT_KEY("oracle.max_ngram", train.oracle.max_ngram),
      DBL_KEY("oracle.smoothing", train.oracle.smoothing),

      Entry{"data.format",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "jsonl") c.data.format = DatasetFormat::Jsonl;
              else if (v == "parallel-text") c.data.format = DatasetFormat::ParallelText;
              else bad_value("data.format", v, "jsonl or parallel-text");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.data.format == DatasetFormat::Jsonl ? "jsonl" : "parallel-text");
            }},
      STR_KEY("data.train", data.train),
      STR_KEY("data.dev", data.dev),
      STR_KEY("data.test", data.test),
      STR_KEY("data.source_field", data.source_field),
      STR_KEY("data.target_field", data.target_field),

      Entry{"synthetic.task", [](ExperimentConfig& c, const std::string& v) { c.synthetic.task = parse_task(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.synthetic.task)); }},
      INT_KEY("synthetic.vocab_size", synthetic.vocab_size),
      INT_KEY("synthetic.min_len", synthetic.min_len),
      INT_KEY("synthetic.max_len", synthetic.max_len),
      DBL_KEY("synthetic.noise_rate", synthetic.noise_rate),
      INT_KEY("synthetic.n_train", synthetic.n_train),
      INT_KEY("synthetic.n_dev", synthetic.n_dev),
      INT_KEY("synthetic.n_test", synthetic.n_test),
  };
  return table;
}

#undef INT_KEY
#undef DBL_KEY
#undef STR_KEY

void require(bool ok, const char* key, const std::string& msg) {
  if (!ok) throw ConfigError(msg, key);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'", key);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value", trim(t));
    set_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.train.seed = cfg.seed;
  cfg.synthetic.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& e : entries()) out += e.key + "=" + e.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::model_text() const {
  std::string out;
  for (const auto& e : entries()) {
    if (e.key.rfind("model.", 0) == 0) out += e.key + "=" + e.get(*this) + "\n";
  }
  return out;
}

void ExperimentConfig::validate() const {
  const auto& m = model;
  require(m.d_model >= 1, "model.d_model", "model.d_model must be >= 1");
  require(m.n_heads >= 1 && m.d_model % m.n_heads == 0, "model.n_heads", "model.n_heads must divide model.d_model");
  require(m.n_layers >= 1, "model.n_layers", "model.n_layers must be >= 1");
  require(m.ffn_dim >= 1, "model.ffn_dim", "model.ffn_dim must be >= 1");
  require(m.dropout_rate >= 0.0 && m.dropout_rate < 1.0, "model.dropout", "model.dropout must lie in [0, 1)");
  require(m.max_len >= 1, "model.max_len", "model.max_len must be >= 1");
  require(m.label_smoothing >= 0.0 && m.label_smoothing < 1.0, "model.label_smoothing",
          "model.label_smoothing must lie in [0, 1)");

  require(beam.beam_size >= 1, "beam.beam_size", "beam.beam_size must be >= 1");
  require(beam.max_len >= 1, "beam.max_len", "beam.max_len must be >= 1");
  require(beam.max_len <= m.max_len, "beam.max_len", "beam.max_len must not exceed model.max_len");
  require(beam.length_penalty > 0.0, "beam.length_penalty", "beam.length_penalty must be > 0");
  require(beam.num_groups >= 1 && beam.beam_size % beam.num_groups == 0, "beam.num_groups",
          "beam.num_groups must divide beam.beam_size");
  require(beam.diversity_strength >= 0.0, "beam.diversity_strength", "beam.diversity_strength must be >= 0");

  train.validate();
  require(train.gen_max_len <= m.max_len, "train.gen_max_len", "train.gen_max_len must not exceed model.max_len");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha", "alpha must lie in [0, 1]");
  synthetic.validate();
}

}  // namespace cont
