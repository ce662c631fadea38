#pragma once

#include "cont/batch.hpp"
#include "cont/model.hpp"

#include <atomic>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cont {

struct BeamConfig {
  int beam_size = 4;
  // Maximum generated tokens per hypothesis, EOS included.
  int max_len = 32;
  double length_penalty = 1.0;
  int num_groups = 1;
  double diversity_strength = 0.0;

  void validate() const;
};

struct Candidate {
  TokenSequence ids;  // starts with BOS; ends with EOS unless cut at max_len
  double log_likelihood = 0.0;
  double length_penalized_score = 0.0;
  Representation representation;
  std::optional<double> oracle_score;
  std::optional<int> rank;
  int group = 0;
  bool from_batch = false;
  bool ground_truth = false;

  // Generated tokens (EOS included), i.e. ids without the leading BOS.
  int length() const { return static_cast<int>(ids.size()) - 1; }
  TokenSequence target_ids() const { return {ids.begin() + 1, ids.end()}; }
  // Output text ids: BOS and a trailing EOS removed.
  TokenSequence output_ids() const;
};

struct CandidateSet {
  int source_id = 0;
  std::vector<Candidate> candidates;
  std::optional<int> ground_truth_index;
  Representation source_representation;
  // Set when fewer distinct hypotheses than requested could be produced.
  bool exhausted = false;
};

// Incremental next-token model for one source. Slots index fed prefixes; -1 is the
// empty prefix.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  virtual std::vector<int> feed(std::span<const int> parents, std::span<const int> tokens, Matrix& log_probs,
                                Matrix& states) = 0;
  virtual Representation source_representation() const = 0;
};

class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::unique_ptr<DecoderSession> start(std::span<const int> source) const = 0;
  virtual int vocab_size() const = 0;
};

class TransformerStepModel final : public StepModel {
 public:
  explicit TransformerStepModel(const Transformer& model) : model_(model) {}
  std::unique_ptr<DecoderSession> start(std::span<const int> source) const override;
  int vocab_size() const override { return model_.config().vocab_size; }

 private:
  const Transformer& model_;
};

double length_penalized(double log_likelihood, int length, double length_penalty);

CandidateSet beam_search(const StepModel& model, std::span<const int> source, const BeamConfig& cfg);
std::vector<CandidateSet> beam_search(const StepModel& model, const PaddedBatch& x, const BeamConfig& cfg);

// Groups decoded in lock-step; a group's choices at step t are penalized by
// diversity_strength per earlier-group selection of the same token at step t. Zero
// strength or a single group is plain beam search.
CandidateSet diverse_beam_search(const StepModel& model, std::span<const int> source, const BeamConfig& cfg);
std::vector<CandidateSet> diverse_beam_search(const StepModel& model, const PaddedBatch& x, const BeamConfig& cfg);

// alpha * cos(z_x, z_c) + (1 - alpha) * exp(length_penalized_score) per candidate.
std::vector<double> rerank_scores(const CandidateSet& cands, const Representation& source, double alpha);
// Argmax of rerank_scores; ties go to the lowest index.
int rerank_index(const CandidateSet& cands, const Representation& source, double alpha);
const Candidate& rerank_select(const CandidateSet& cands, const Representation& source, double alpha);

std::vector<TokenSequence> generate(const StepModel& model, const PaddedBatch& x, const BeamConfig& cfg,
                                    double alpha);

// Number of searches run since start; lets callers assert that no search happened.
long search_invocations();

}  // namespace cont
