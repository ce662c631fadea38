#pragma once

#include "cont/dataset.hpp"
#include "cont/decoding.hpp"
#include "cont/oracle.hpp"
#include "cont/training.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace cont {

// Corpus-level BLEU in [0, 100] over token ids; specials are ignored. Counts are
// aggregated over the corpus before the precisions are formed. Orders for which the
// whole hypothesis side has no n-grams are left out of the geometric mean.
double corpus_bleu(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references,
                   int max_n = 4);

struct EvalReport {
  double corpus_bleu = 0.0;
  std::vector<double> sentence_scores;  // smoothed sentence BLEU, 0-100
  nlohmann::json config;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

EvalReport evaluate_outputs(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references,
                            nlohmann::json config = nlohmann::json::object());

// One beam-search pass over every source of `data`.
std::vector<CandidateSet> decode_candidates(const Transformer& model, const Dataset& data, const BeamConfig& beam);
std::vector<TokenSequence> rerank_outputs(const std::vector<CandidateSet>& cands, double alpha);
std::vector<TokenSequence> references_of(const Dataset& data);

struct AblationRow {
  double alpha = 0.0;
  double bleu = 0.0;
};
using AblationTable = std::vector<AblationRow>;

std::vector<double> default_alpha_grid();

// Reranks one shared pool of beam candidates per alpha.
AblationTable ablate_alpha(const std::vector<CandidateSet>& cands, const std::vector<TokenSequence>& references,
                           const std::vector<double>& grid);
AblationTable ablate_alpha(const Transformer& model, const Dataset& dev, const std::vector<double>& grid,
                           const BeamConfig& beam);
void write_ablation_csv(const std::string& path, const AblationTable& table);

struct RepresentationRecord {
  int source = 0;
  std::string group;  // batch_target, beam_hypothesis or ground_truth
  double oracle_score = 0.0;
  double source_cosine = 0.0;  // cos(z_x, z)
  Vector z;
};

// Per input: the ground truth, the beam hypotheses and the targets of the other rows of
// its batch (exact copies of its own target skipped). Inputs are grouped into batches
// of batch_size in order.
std::vector<RepresentationRecord> collect_representations(const Transformer& model, const Dataset& inputs,
                                                          const BeamConfig& beam, const OracleConfig& oracle,
                                                          int batch_size);
void write_representations(const std::string& path, const std::vector<RepresentationRecord>& records);
std::vector<RepresentationRecord> read_representations(const std::string& path);
void export_representations(const Transformer& model, const Dataset& inputs, const BeamConfig& beam,
                            const OracleConfig& oracle, int batch_size, const std::string& path);

struct SweepRow {
  double ratio = 0.0;
  double steps_per_second = 0.0;
  double dev_bleu = 0.0;
};

// Fixed-budget training from the same warm-up state per ratio, then dev BLEU with
// rerank decoding at alpha.
std::vector<SweepRow> selfgen_ratio_sweep(const TrainState& warm, const Dataset& train, const Dataset& dev,
                                          const TrainConfig& cfg, const std::vector<double>& ratios, int steps,
                                          const BeamConfig& beam, double alpha);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace cont
