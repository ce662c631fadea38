#include "cont/evaluation.hpp"

#include "cont/error.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace cont {

namespace {

using NgramCounts = std::map<std::vector<int>, long>;

NgramCounts count_ngrams(const TokenSequence& s, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
    ++out[std::vector<int>(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i) + n)];
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Representation pooled_target(const Transformer& model, const TokenSequence& source, const TokenSequence& target) {
  Tape tape(false);
  const auto b = model.bind(tape, nullptr);
  Var enc = model.encode_graph(tape, b, source, nullptr);
  Var z = ag::mean_rows(tape, model.decode_graph(tape, b, enc, target, nullptr).states);
  return Representation(tape.value(z).row(0).transpose());
}

}  // namespace

double corpus_bleu(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references,
                   int max_n) {
  if (hypotheses.empty()) throw InputError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw InputError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  std::vector<long> matches(static_cast<std::size_t>(max_n), 0), totals(static_cast<std::size_t>(max_n), 0);
  long hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const TokenSequence h = strip_special(hypotheses[s]);
    const TokenSequence r = strip_special(references[s]);
    hyp_len += static_cast<long>(h.size());
    ref_len += static_cast<long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = count_ngrams(h, n);
      const auto rc = count_ngrams(r, n);
      for (const auto& [gram, c] : hc) {
        const auto it = rc.find(gram);
        if (it != rc.end()) matches[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
        totals[static_cast<std::size_t>(n - 1)] += c;
      }
    }
  }
  if (hyp_len == 0) return ref_len == 0 ? 100.0 : 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < max_n; ++n) {
    if (totals[static_cast<std::size_t>(n)] == 0) continue;
    if (matches[static_cast<std::size_t>(n)] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches[static_cast<std::size_t>(n)]) /
                        static_cast<double>(totals[static_cast<std::size_t>(n)]));
    ++orders;
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return std::clamp(100.0 * bp * std::exp(log_sum / orders), 0.0, 100.0);
}

nlohmann::json EvalReport::to_json() const {
  return {{"corpus_bleu", corpus_bleu},
          {"sentence_scores", sentence_scores},
          {"config", config},
          {"wall_seconds", wall_seconds}};
}

EvalReport evaluate_outputs(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references,
                            nlohmann::json config) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r;
  r.corpus_bleu = corpus_bleu(hypotheses, references);
  const OracleConfig oc;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    r.sentence_scores.push_back(100.0 * oracle_score(hypotheses[i], references[i], oc));
  r.config = std::move(config);
  r.wall_seconds = seconds_since(t0);
  return r;
}

std::vector<CandidateSet> decode_candidates(const Transformer& model, const Dataset& data, const BeamConfig& beam) {
  const TransformerStepModel step(model);
  std::vector<CandidateSet> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(beam_search(step, data[i].source, beam));
    out.back().source_id = static_cast<int>(i);
  }
  return out;
}

std::vector<TokenSequence> rerank_outputs(const std::vector<CandidateSet>& cands, double alpha) {
  std::vector<TokenSequence> out;
  out.reserve(cands.size());
  for (const auto& c : cands) out.push_back(rerank_select(c, c.source_representation, alpha).output_ids());
  return out;
}

std::vector<TokenSequence> references_of(const Dataset& data) {
  std::vector<TokenSequence> out;
  for (const auto& ex : data) out.push_back(strip_special(ex.target));
  return out;
}

std::vector<double> default_alpha_grid() { return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}; }

AblationTable ablate_alpha(const std::vector<CandidateSet>& cands, const std::vector<TokenSequence>& references,
                           const std::vector<double>& grid) {
  AblationTable t;
  for (double a : grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw InputError("ablate_alpha: alpha outside [0, 1]");
    t.push_back({a, corpus_bleu(rerank_outputs(cands, a), references)});
  }
  return t;
}

AblationTable ablate_alpha(const Transformer& model, const Dataset& dev, const std::vector<double>& grid,
                           const BeamConfig& beam) {
  return ablate_alpha(decode_candidates(model, dev, beam), references_of(dev), grid);
}

void write_ablation_csv(const std::string& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "alpha,bleu\n";
  char buf[64];
  for (const auto& r : table) {
    std::snprintf(buf, sizeof buf, "%.2f,%.4f\n", r.alpha, r.bleu);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<RepresentationRecord> collect_representations(const Transformer& model, const Dataset& inputs,
                                                          const BeamConfig& beam, const OracleConfig& oracle,
                                                          int batch_size) {
  CONT_EXPECT(batch_size >= 1, "collect_representations: batch_size < 1");
  const TransformerStepModel step(model);
  std::vector<RepresentationRecord> out;
  const std::size_t n = inputs.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    for (std::size_t i = start; i < end; ++i) {
      const Example& ex = inputs[i];
      const CandidateSet cs = beam_search(step, ex.source, beam);
      const Representation& zx = cs.source_representation;
      const auto add = [&](const char* group, double score, const Representation& z) {
        out.push_back({static_cast<int>(i), group, score, cosine_similarity(zx, z), z.z});
      };
      add("ground_truth", 1.0, pooled_target(model, ex.source, ex.target));
      for (const auto& c : cs.candidates) add("beam_hypothesis", oracle_score(c.ids, ex.target, oracle), c.representation);
      for (std::size_t j = start; j < end; ++j) {
        if (j == i || inputs[j].target == ex.target) continue;
        add("batch_target", oracle_score(inputs[j].target, ex.target, oracle),
            pooled_target(model, ex.source, inputs[j].target));
      }
    }
  }
  return out;
}

void write_representations(const std::string& path, const std::vector<RepresentationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["source"] = r.source;
    j["group"] = r.group;
    j["oracle_score"] = r.oracle_score;
    j["source_cosine"] = r.source_cosine;
    j["z"] = std::vector<double>(r.z.data(), r.z.data() + r.z.size());
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<RepresentationRecord> read_representations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<RepresentationRecord> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RepresentationRecord r;
      r.source = j.at("source").get<int>();
      r.group = j.at("group").get<std::string>();
      r.oracle_score = j.at("oracle_score").get<double>();
      r.source_cosine = j.at("source_cosine").get<double>();
      const auto z = j.at("z").get<std::vector<double>>();
      r.z = Eigen::Map<const Vector>(z.data(), static_cast<long>(z.size()));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void export_representations(const Transformer& model, const Dataset& inputs, const BeamConfig& beam,
                            const OracleConfig& oracle, int batch_size, const std::string& path) {
  write_representations(path, collect_representations(model, inputs, beam, oracle, batch_size));
}

std::vector<SweepRow> selfgen_ratio_sweep(const TrainState& warm, const Dataset& train, const Dataset& dev,
                                          const TrainConfig& cfg_in, const std::vector<double>& ratios, int steps,
                                          const BeamConfig& beam, double alpha) {
  std::vector<SweepRow> rows;
  const auto refs = references_of(dev);
  for (double ratio : ratios) {
    TrainConfig cfg = cfg_in;
    cfg.selfgen_ratio = ratio;
    cfg.train_beam_size.reset();
    if (cfg.mode == BaselineMode::MLE || cfg.mode == BaselineMode::DropoutCl) cfg.mode = BaselineMode::ContNPairs;
    if (ratio > 0.0 && cfg.mode == BaselineMode::NaiveClNPairs) cfg.mode = BaselineMode::ContNPairs;
    if (ratio > 0.0 && cfg.mode == BaselineMode::NaiveClInfoNCE) cfg.mode = BaselineMode::ContInfoNCE;
    cfg.validate();
    TrainState state = warm;
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < steps; ++s) {
      std::vector<const Example*> batch;
      for (int i : batch_indices(train.size(), cfg.batch_size, state.step, cfg.seed)) batch.push_back(&train[static_cast<std::size_t>(i)]);
      train_step(state, batch, cfg);
    }
    const double secs = seconds_since(t0);
    SweepRow r;
    r.ratio = ratio;
    r.steps_per_second = secs > 0.0 ? steps / secs : 0.0;
    r.dev_bleu = corpus_bleu(rerank_outputs(decode_candidates(state.model, dev, beam), alpha), refs);
    rows.push_back(r);
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "ratio,steps_per_sec,dev_bleu\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f\n", r.ratio, r.steps_per_second, r.dev_bleu);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace cont
