#pragma once

#include "cont/contrastive.hpp"
#include "cont/dataset.hpp"
#include "cont/decoding.hpp"
#include "cont/model.hpp"
#include "cont/optimizer.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cont {

enum class BaselineMode { MLE, NaiveClInfoNCE, NaiveClNPairs, ContInfoNCE, ContNPairs, DropoutCl };

const char* to_string(BaselineMode m);
BaselineMode parse_mode(const std::string& s);
bool is_contrastive(BaselineMode m);

struct TrainConfig {
  BaselineMode mode = BaselineMode::ContNPairs;
  int warmup_steps = 2000;     // cap on warm-up updates
  int warmup_patience = 3;     // validations without dev-NLL improvement before warm-up ends
  int max_steps = 1000;        // cap on updates of the second stage
  int batch_size = 16;
  AdamConfig adam;
  double clip_norm = 1.0;
  int m = 16;                              // contrastive samples per source (ground truth excluded)
  std::optional<int> train_beam_size;      // defaults to round(selfgen_ratio * m)
  double selfgen_ratio = 0.75;
  LossConfig loss;                         // gamma, tau; kind follows mode
  double ctr_weight = 1.0;
  double diversity_strength = 1.0;
  int gen_max_len = 32;                    // generated tokens per candidate, EOS included
  double length_penalty = 1.0;
  int validate_every = 100;
  int early_stop_patience = 3;
  int validate_samples = 0;                // dev examples used per validation; 0 = all
  OracleConfig oracle;
  std::uint64_t seed = 1;

  int effective_beam_size() const;
  LossKind loss_kind() const;
  void validate() const;
};

struct MetricRow {
  long step = 0;
  double nll = 0.0;
  std::optional<double> ctr;
  double total = 0.0;
  std::optional<double> dev_nll;
  std::optional<double> dev_ctr;
};

struct TrainState {
  Transformer model;
  Adam optimizer;
  long step = 0;
  double best_dev = 0.0;
  bool has_best = false;
  bool warmed_up = false;
  int stale_validations = 0;
  std::optional<double> start_dev;  // validation before the first step of train_loop
  std::vector<MetricRow> history;

  TrainState(Transformer m, const AdamConfig& adam) : model(std::move(m)), optimizer(adam, model.parameters()) {}
};

struct StepMetrics {
  double nll = 0.0;
  std::optional<double> ctr;
  double total = 0.0;
};

// Per-source inputs of the contrastive term, captured for inspection.
struct StepDetail {
  std::vector<CandidateSet> candidates;       // ranked when the loss is N-pairs
  std::vector<Representation> anchors;
  std::vector<std::vector<Representation>> reps;  // aligned with candidates
  std::vector<double> ctr;                    // per source
};

// Rows of `data` used at global step `step`: epoch-wise permutations derived from seed.
std::vector<int> batch_indices(std::size_t dataset_size, int batch_size, long step, std::uint64_t seed);

// Up to m candidates per source: effective_beam_size() diverse-beam hypotheses from the
// current model (no dropout, no gradient), then targets of other batch rows taken
// cyclically from i + 1, skipping exact copies of the source's own target. Naive and
// MLE modes generate nothing. `warnings` collects shortfall messages.
std::vector<CandidateSet> assemble_candidates(const std::vector<const Example*>& batch, const Transformer& model,
                                              const TrainConfig& cfg, std::vector<std::string>* warnings = nullptr);

// One optimizer update on nll + ctr_weight * ctr over the batch. nll is the token
// mean; ctr the per-source mean. Throws DivergenceError on a non-finite loss.
StepMetrics train_step(TrainState& state, const std::vector<const Example*>& batch, const TrainConfig& cfg,
                       StepDetail* detail = nullptr);

// Loss evaluation without updates; dropout off. Mirrors train_step's objective.
struct DevMetrics {
  double nll = 0.0;
  std::optional<double> ctr;
};
DevMetrics evaluate_objective(const Transformer& model, const Dataset& dev, const TrainConfig& cfg);

// One source's objective without dropout: nll_weight * token-mean NLL + ctr_weight * ctr.
// With grads, its gradient is accumulated there.
struct SourceLoss {
  double nll = 0.0;
  std::optional<double> ctr;
  double total = 0.0;
};
SourceLoss source_loss(const Transformer& model, const Example& ex, const CandidateSet* cands, const TrainConfig& cfg,
                       Gradients* grads = nullptr, double nll_weight = 1.0);

using StepCallback = std::function<void(const TrainState&, const MetricRow&)>;

// NLL-only training; validates dev NLL every validate_every steps, stops after
// warmup_patience validations without improvement or at warmup_steps. Returns the best
// validated state, flagged warmed_up.
TrainState warmup_train(TrainState init, const Dataset& train, const Dataset& dev, const TrainConfig& cfg,
                        const StepCallback& on_step = {});

// Second stage from a warm-up state (required unless mode is MLE). Validates before
// the first step and every validate_every steps on dev_ctr (dev NLL for MLE); stops
// after early_stop_patience non-improving validations or max_steps. Returns the best
// validated state; its history holds every step taken.
TrainState train_loop(TrainState start, const Dataset& train, const Dataset& dev, const TrainConfig& cfg,
                      const StepCallback& on_step = {});

// Two dropout passes of the decoder over the ground truth; pooled representations.
std::pair<Representation, Representation> dropout_cl_positives(const Transformer& model, const Example& ex, Rng& rng);

void write_metric_log(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace cont
