#include "cont/checkpoint.hpp"

#include "cont/error.hpp"
#include "cont/hash.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace cont {

namespace {

constexpr char kWeightsMagic[8] = {'C', 'O', 'N', 'T', 'W', 'T', '0', '1'};
constexpr char kOptimMagic[8] = {'C', 'O', 'N', 'T', 'O', 'P', '0', '1'};

struct Writer {
  std::ofstream out;
  std::string path;
  explicit Writer(const std::string& p) : out(p, std::ios::binary), path(p) {
    if (!out) throw IoError("cannot write " + p);
  }
  void bytes(const void* d, std::size_t n) { out.write(static_cast<const char*>(d), static_cast<std::streamsize>(n)); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void finish() {
    out.flush();
    if (!out) throw IoError("failed writing " + path);
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw IoError("cannot read " + p);
  }
  void bytes(void* d, std::size_t n) {
    in.read(static_cast<char*>(d), static_cast<std::streamsize>(n));
    if (!in) throw IoError(path + ": truncated file");
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = u64();
    if (n > (1u << 20)) throw IoError(path + ": corrupt string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Matrix matrix() {
    const auto r = u64(), c = u64();
    if (r > (1u << 24) || c > (1u << 24)) throw IoError(path + ": corrupt matrix shape");
    Matrix m(static_cast<long>(r), static_cast<long>(c));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  void magic(const char (&expected)[8]) {
    char got[8];
    bytes(got, 8);
    if (std::memcmp(got, expected, 8) != 0) throw IoError(path + ": bad magic");
  }
};

nlohmann::json model_json(const ModelConfig& m) {
  return {{"d_model", m.d_model},     {"n_layers", m.n_layers},         {"n_heads", m.n_heads},
          {"ffn_dim", m.ffn_dim},     {"dropout", m.dropout_rate},      {"vocab_size", m.vocab_size},
          {"max_len", m.max_len},     {"label_smoothing", m.label_smoothing}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.d_model = j.at("d_model").get<int>();
  m.n_layers = j.at("n_layers").get<int>();
  m.n_heads = j.at("n_heads").get<int>();
  m.ffn_dim = j.at("ffn_dim").get<int>();
  m.dropout_rate = j.at("dropout").get<double>();
  m.vocab_size = j.at("vocab_size").get<int>();
  m.max_len = j.at("max_len").get<int>();
  m.label_smoothing = j.at("label_smoothing").get<double>();
  return m;
}

nlohmann::json adam_json(const AdamConfig& a) {
  return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps},
          {"warmup_steps", a.warmup_steps},
          {"schedule", a.schedule == LrSchedule::Constant ? "constant" : "inverse_sqrt"}};
}

AdamConfig adam_from_json(const nlohmann::json& j) {
  AdamConfig a;
  a.learning_rate = j.at("learning_rate").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
  a.warmup_steps = j.at("warmup_steps").get<int>();
  a.schedule = j.at("schedule").get<std::string>() == "constant" ? LrSchedule::Constant : LrSchedule::InverseSqrt;
  return a;
}

}  // namespace

std::string model_config_hash(const ModelConfig& m) { return hex64(fnv1a64(model_json(m).dump())); }

std::string vocab_hash(const Vocab& v) { return v.fingerprint(); }

void save_checkpoint(const std::string& dir, const TrainState& state, const Vocab& vocab, const ExperimentConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const auto& names = state.model.parameter_names();
  const auto& params = state.model.parameters();
  {
    Writer w(dir + "/weights.bin");
    w.bytes(kWeightsMagic, 8);
    w.u64(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      w.str(names[i]);
      w.matrix(params[i]);
    }
    w.finish();
  }
  {
    Writer w(dir + "/optimizer.bin");
    w.bytes(kOptimMagic, 8);
    w.u64(static_cast<std::uint64_t>(state.optimizer.steps()));
    const auto& m = state.optimizer.first_moments();
    const auto& v = state.optimizer.second_moments();
    w.u64(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      w.matrix(m[i]);
      w.matrix(v[i]);
    }
    w.finish();
  }
  vocab.save(dir + "/vocab.txt");
  {
    std::ofstream out(dir + "/config.txt");
    out << cfg.to_text();
    if (!out) throw IoError("failed writing " + dir + "/config.txt");
  }
  nlohmann::ordered_json man;
  man["version"] = kCheckpointVersion;
  man["step"] = state.step;
  man["config_hash"] = model_config_hash(state.model.config());
  man["vocab_hash"] = vocab_hash(vocab);
  man["model"] = model_json(state.model.config());
  man["adam"] = adam_json(state.optimizer.config());
  man["mode"] = to_string(cfg.train.mode);
  man["warmed_up"] = state.warmed_up;
  man["has_best"] = state.has_best;
  man["best_dev"] = state.best_dev;
  man["stale_validations"] = state.stale_validations;
  man["parameters"] = state.model.num_parameters();
  std::ofstream out(dir + "/manifest.json");
  out << man.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + dir + "/manifest.json");
}

nlohmann::json read_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("cannot read " + dir + "/manifest.json");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  }
}

Checkpoint load_checkpoint(const std::string& dir, const LoadOptions& opts) {
  const nlohmann::json man = read_manifest(dir);
  try {
    const int version = man.at("version").get<int>();
    if (version > kCheckpointVersion)
      throw IoError(dir + ": checkpoint version " + std::to_string(version) + " is newer than supported " +
                    std::to_string(kCheckpointVersion));
    const ModelConfig model = model_from_json(man.at("model"));
    const std::string cfg_hash = man.at("config_hash").get<std::string>();
    if (cfg_hash != model_config_hash(model) && !opts.force)
      throw ConfigError(dir + ": manifest config hash does not match its model section", "config_hash");
    if (opts.expected_model) {
      ModelConfig want = *opts.expected_model;
      want.vocab_size = model.vocab_size;
      if (model_config_hash(want) != cfg_hash && !opts.force)
        throw ConfigError(dir + ": model config hash mismatch (checkpoint " + cfg_hash + ", config " +
                              model_config_hash(want) + "); use --force to load anyway",
                          "config_hash");
    }
    Vocab vocab = Vocab::load(dir + "/vocab.txt");
    const std::string vh = man.at("vocab_hash").get<std::string>();
    if (vocab_hash(vocab) != vh && !opts.force)
      throw ConfigError(dir + ": vocab.txt does not match the manifest vocab hash", "vocab_hash");
    if (opts.expected_vocab_hash && *opts.expected_vocab_hash != vh && !opts.force)
      throw ConfigError(dir + ": vocab hash mismatch (checkpoint " + vh + ", data " + *opts.expected_vocab_hash +
                            "); use --force to load anyway",
                        "vocab_hash");

    Transformer t(model, 0);
    {
      Reader r(dir + "/weights.bin");
      r.magic(kWeightsMagic);
      const auto n = r.u64();
      if (n != t.parameters().size()) throw IoError(dir + "/weights.bin: parameter count mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        Matrix m = r.matrix();
        auto& p = t.parameters()[i];
        if (name != t.parameter_names()[i] || m.rows() != p.rows() || m.cols() != p.cols())
          throw IoError(dir + "/weights.bin: unexpected tensor " + name);
        p = std::move(m);
      }
    }
    TrainState state(std::move(t), adam_from_json(man.at("adam")));
    {
      Reader r(dir + "/optimizer.bin");
      r.magic(kOptimMagic);
      const long steps = static_cast<long>(r.u64());
      const auto n = r.u64();
      if (n != state.model.parameters().size()) throw IoError(dir + "/optimizer.bin: moment count mismatch");
      std::vector<Matrix> m, v;
      for (std::size_t i = 0; i < n; ++i) {
        m.push_back(r.matrix());
        v.push_back(r.matrix());
      }
      state.optimizer.restore(steps, std::move(m), std::move(v));
    }
    state.step = man.at("step").get<long>();
    state.warmed_up = man.at("warmed_up").get<bool>();
    state.has_best = man.at("has_best").get<bool>();
    state.best_dev = man.at("best_dev").get<double>();
    state.stale_validations = man.at("stale_validations").get<int>();
    return Checkpoint{std::move(state), std::move(vocab), model, man};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  }
}

}  // namespace cont
