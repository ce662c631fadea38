#include "cont/cli.hpp"

#include "cont/checkpoint.hpp"
#include "cont/config.hpp"
#include "cont/error.hpp"
#include "cont/evaluation.hpp"
#include "cont/synthetic.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace cont {

namespace {

struct Options {
  std::string config, out, checkpoint, split = "dev", input, hyp, ref, metrics, grid, ratios;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<int> beam;
  std::optional<std::string> mode;
  std::optional<int> limit;
  int steps = 20;
  bool force = false;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.synthetic.seed = *o.seed;
  }
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.beam) {
    cfg.beam.beam_size = *o.beam;
    if (cfg.beam.beam_size % cfg.beam.num_groups != 0) cfg.beam.num_groups = 1;
  }
  if (o.mode) cfg.train.mode = parse_mode(*o.mode);
  cfg.validate();
  return cfg;
}

void need(const std::string& v, const char* what) {
  if (v.empty()) throw ConfigError(std::string("missing ") + what, what);
}

std::vector<TextPair> read_pairs(const ExperimentConfig& cfg, const std::string& path, const char* key) {
  need(path, key);
  return read_split(cfg.data, path);
}

struct Data {
  Vocab vocab;
  Dataset train, dev;
};

Data load_training_data(const ExperimentConfig& cfg) {
  const auto train = read_pairs(cfg, cfg.data.train, "data.train");
  const auto dev = read_pairs(cfg, cfg.data.dev, "data.dev");
  Data d;
  d.vocab = build_vocab(train);
  d.train = encode_pairs(d.vocab, train);
  d.dev = encode_pairs(d.vocab, dev);
  return d;
}

std::string split_path(const ExperimentConfig& cfg, const std::string& split) {
  if (split == "train") return cfg.data.train;
  if (split == "dev") return cfg.data.dev;
  if (split == "test") return cfg.data.test;
  throw ConfigError("unknown split '" + split + "' (expected train, dev or test)", "split");
}

Dataset load_eval_data(const ExperimentConfig& cfg, const Options& o, const Vocab& vocab) {
  std::vector<TextPair> pairs;
  if (!o.input.empty()) {
    pairs = read_jsonl(o.input, cfg.data.source_field, cfg.data.target_field);
  } else {
    const std::string path = split_path(cfg, o.split);
    need(path, ("data." + o.split).c_str());
    pairs = read_split(cfg.data, path);
  }
  Dataset d = encode_pairs(vocab, pairs);
  if (o.limit && *o.limit >= 0 && static_cast<std::size_t>(*o.limit) < d.size()) d.resize(static_cast<std::size_t>(*o.limit));
  return d;
}

Checkpoint open_checkpoint(const ExperimentConfig& cfg, const Options& o, std::optional<std::string> vocab_fp = {}) {
  need(o.checkpoint, "--checkpoint");
  LoadOptions lo;
  lo.expected_model = cfg.model;
  lo.expected_vocab_hash = std::move(vocab_fp);
  lo.force = o.force;
  Checkpoint c = load_checkpoint(o.checkpoint, lo);
  c.state.optimizer.set_config(cfg.train.adam);
  return c;
}

std::vector<double> parse_list(const std::string& s, const char* key) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid list entry '" + item + "'", key);
    }
  }
  if (out.empty()) throw ConfigError("empty list", key);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

std::string fixed2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

StepCallback progress(std::ostream& err) {
  return [&err](const TrainState& s, const MetricRow& r) {
    if (!r.dev_nll) return;
    err << "step " << s.step << " nll " << r.nll;
    if (r.ctr) err << " ctr " << *r.ctr;
    err << " dev_nll " << *r.dev_nll;
    if (r.dev_ctr) err << " dev_ctr " << *r.dev_ctr;
    err << '\n';
  };
}

int cmd_make_synthetic(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  need(o.out, "--out");
  write_synthetic(cfg.synthetic, o.out);
  out << "wrote " << cfg.synthetic.n_train << "/" << cfg.synthetic.n_dev << "/" << cfg.synthetic.n_test << " "
      << to_string(cfg.synthetic.task) << " pairs to " << o.out << '\n';
  return 0;
}

int cmd_warmup(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o);
  need(o.out, "--out");
  Data d = load_training_data(cfg);
  cfg.model.vocab_size = d.vocab.size();
  TrainState init(Transformer(cfg.model, cfg.seed), cfg.train.adam);
  TrainState st = warmup_train(std::move(init), d.train, d.dev, cfg.train, progress(err));
  save_checkpoint(o.out, st, d.vocab, cfg);
  write_metric_log(o.metrics.empty() ? o.out + "/metrics.csv" : o.metrics, st.history);
  out << "warmup steps=" << st.step << " best_dev_nll=" << st.best_dev << " checkpoint=" << o.out << '\n';
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(o);
  need(o.out, "--out");
  Data d = load_training_data(cfg);
  Checkpoint ck = open_checkpoint(cfg, o, d.vocab.fingerprint());
  const long before = search_invocations();
  TrainState st = train_loop(std::move(ck.state), d.train, d.dev, cfg.train, progress(err));
  const long searches = search_invocations() - before;
  save_checkpoint(o.out, st, ck.vocab, cfg);
  write_metric_log(o.metrics.empty() ? o.out + "/metrics.csv" : o.metrics, st.history);
  out << "train mode=" << to_string(cfg.train.mode) << " steps=" << st.step << " best_dev=" << st.best_dev
      << " beam_searches=" << searches << " checkpoint=" << o.out << '\n';
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  Checkpoint ck = open_checkpoint(cfg, o);
  const Dataset data = load_eval_data(cfg, o, ck.vocab);
  const auto hyps = rerank_outputs(decode_candidates(ck.state.model, data, cfg.beam), cfg.alpha);
  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out);
    if (!file) throw IoError("cannot write " + o.out);
  }
  std::ostream& sink = o.out.empty() ? out : file;
  for (const auto& h : hyps) sink << ck.vocab.decode(h) << '\n';
  if (!sink) throw IoError("failed writing hypotheses");
  if (!o.out.empty()) {
    const double bleu = corpus_bleu(hyps, references_of(data));
    out << "generated " << hyps.size() << " outputs alpha=" << cfg.alpha << " beam=" << cfg.beam.beam_size
        << " BLEU " << fixed2(bleu) << '\n';
  }
  return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  need(o.hyp, "--hyp");
  need(o.ref, "--ref");
  const ExperimentConfig cfg = resolve_config(o);
  const auto hyp_lines = read_lines(o.hyp);
  std::vector<std::string> ref_lines;
  if (o.ref.size() > 6 && o.ref.substr(o.ref.size() - 6) == ".jsonl") {
    for (const auto& p : read_jsonl(o.ref, cfg.data.source_field, cfg.data.target_field)) ref_lines.push_back(p.target);
  } else {
    ref_lines = read_lines(o.ref);
  }
  if (hyp_lines.size() != ref_lines.size())
    throw InputError("evaluate: " + std::to_string(hyp_lines.size()) + " hypotheses vs " +
                     std::to_string(ref_lines.size()) + " references");
  std::map<std::string, int> ids;
  const auto to_ids = [&](const std::string& line) {
    TokenSequence s;
    for (const auto& t : split_whitespace(line)) s.push_back(ids.emplace(t, Vocab::kReserved + static_cast<int>(ids.size())).first->second);
    return s;
  };
  std::vector<TokenSequence> hyps, refs;
  for (const auto& l : hyp_lines) hyps.push_back(to_ids(l));
  for (const auto& l : ref_lines) refs.push_back(to_ids(l));
  nlohmann::json snapshot = {{"hypotheses", o.hyp}, {"references", o.ref}};
  const EvalReport report = evaluate_outputs(hyps, refs, snapshot);
  if (!o.out.empty()) {
    std::ofstream f(o.out);
    f << report.to_json().dump(2) << '\n';
    if (!f) throw IoError("cannot write " + o.out);
  }
  out << "BLEU " << fixed2(report.corpus_bleu) << '\n';
  return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  Checkpoint ck = open_checkpoint(cfg, o);
  const Dataset data = load_eval_data(cfg, o, ck.vocab);
  const auto grid = o.grid.empty() ? default_alpha_grid() : parse_list(o.grid, "--grid");
  const AblationTable t = ablate_alpha(ck.state.model, data, grid, cfg.beam);
  if (!o.out.empty()) write_ablation_csv(o.out, t);
  out << "alpha,bleu\n";
  for (const auto& r : t) out << fixed2(r.alpha) << ',' << fixed2(r.bleu) << '\n';
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  Data d = load_training_data(cfg);
  Checkpoint ck = open_checkpoint(cfg, o, d.vocab.fingerprint());
  if (o.limit && *o.limit >= 0 && static_cast<std::size_t>(*o.limit) < d.dev.size()) d.dev.resize(static_cast<std::size_t>(*o.limit));
  const auto ratios = o.ratios.empty() ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0} : parse_list(o.ratios, "--ratios");
  const auto rows = selfgen_ratio_sweep(ck.state, d.train, d.dev, cfg.train, ratios, o.steps, cfg.beam, cfg.alpha);
  if (!o.out.empty()) write_sweep_csv(o.out, rows);
  out << "ratio,steps_per_sec,dev_bleu\n";
  for (const auto& r : rows) out << r.ratio << ',' << r.steps_per_second << ',' << fixed2(r.dev_bleu) << '\n';
  return 0;
}

int cmd_export(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(o);
  need(o.out, "--out");
  Checkpoint ck = open_checkpoint(cfg, o);
  const Dataset data = load_eval_data(cfg, o, ck.vocab);
  const auto records = collect_representations(ck.state.model, data, cfg.beam, cfg.train.oracle, cfg.train.batch_size);
  write_representations(o.out, records);
  out << "exported " << records.size() << " representations to " << o.out << '\n';
  return 0;
}

int fail(std::ostream& err, const char* kind, const std::string& msg, const std::string& key, int code) {
  err << "error: kind=" << kind;
  if (!key.empty()) err << " key=" << key;
  err << " message=\"" << one_line(msg) << "\"\n";
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive sequence-to-sequence training and decoding"};
  app.name("cont");
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value experiment config");
    c->add_option("--seed", o.seed, "overrides the config seed");
    c->add_option("--out", o.out, "output path");
  };
  const auto modeled = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    c->add_flag("--force", o.force, "load despite config or vocab hash mismatches");
    c->add_option("--alpha", o.alpha, "rerank balance in [0, 1]");
    c->add_option("--beam", o.beam, "beam size");
  };
  const auto data_opts = [&](CLI::App* c) {
    c->add_option("--split", o.split, "train, dev or test");
    c->add_option("--input", o.input, "JSONL file used instead of a configured split");
    c->add_option("--limit", o.limit, "use only the first N examples");
  };

  auto* mk = app.add_subcommand("make-synthetic", "write a synthetic dataset");
  common(mk);
  auto* warm = app.add_subcommand("warmup", "NLL warm-up training");
  common(warm);
  warm->add_option("--metrics", o.metrics, "metric CSV path");
  auto* train = app.add_subcommand("train", "second-stage training from a warm-up checkpoint");
  common(train);
  train->add_option("--checkpoint", o.checkpoint, "warm-up checkpoint")->required();
  train->add_option("--mode", o.mode, "training mode");
  train->add_option("--metrics", o.metrics, "metric CSV path");
  train->add_flag("--force", o.force, "load despite config or vocab hash mismatches");
  auto* gen = app.add_subcommand("generate", "decode a split");
  common(gen);
  modeled(gen);
  data_opts(gen);
  auto* ev = app.add_subcommand("evaluate", "corpus BLEU of a hypothesis file");
  common(ev);
  ev->add_option("--hyp", o.hyp, "hypotheses, one per line")->required();
  ev->add_option("--ref", o.ref, "references, one per line, or a JSONL file")->required();
  auto* abl = app.add_subcommand("ablate-alpha", "dev BLEU over a grid of alpha");
  common(abl);
  modeled(abl);
  data_opts(abl);
  abl->add_option("--grid", o.grid, "comma-separated alphas");
  auto* sw = app.add_subcommand("sweep-ratio", "throughput and quality per self-generated ratio");
  common(sw);
  modeled(sw);
  sw->add_option("--ratios", o.ratios, "comma-separated ratios");
  sw->add_option("--steps", o.steps, "updates per ratio");
  sw->add_option("--limit", o.limit, "dev examples scored");
  auto* ex = app.add_subcommand("export-reps", "dump pooled representations as JSON lines");
  common(ex);
  modeled(ex);
  data_opts(ex);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), "", 2);
  }

  try {
    if (*mk) return cmd_make_synthetic(o, out);
    if (*warm) return cmd_warmup(o, out, err);
    if (*train) return cmd_train(o, out, err);
    if (*gen) return cmd_generate(o, out);
    if (*ev) return cmd_evaluate(o, out);
    if (*abl) return cmd_ablate(o, out);
    if (*sw) return cmd_sweep(o, out);
    if (*ex) return cmd_export(o, out);
  } catch (const ConfigError& e) {
    return fail(err, "config", e.what(), e.key(), 2);
  } catch (const InputError& e) {
    return fail(err, "input", e.what(), "", 3);
  } catch (const IoError& e) {
    return fail(err, "io", e.what(), "", 4);
  } catch (const DivergenceError& e) {
    return fail(err, "divergence", e.what(), "", 5);
  } catch (const ContractError& e) {
    return fail(err, "contract", e.what(), "", 1);
  } catch (const std::exception& e) {
    return fail(err, "internal", e.what(), "", 1);
  }
  return fail(err, "usage", "no subcommand", "", 2);
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cont
