#pragma once

#include "cont/batch.hpp"
#include "cont/tensor.hpp"

#include <span>
#include <vector>

namespace cont {

// Smoothed sentence-level BLEU used to rank contrastive candidates.
struct OracleConfig {
  int max_ngram = 4;
  // Add-k constant on precisions of order > 1.
  double smoothing = 1.0;

  void validate() const;
};

// Tokens other than PAD/BOS/EOS, in order.
TokenSequence strip_special(std::span<const int> ids);

// Score in [0, 1]. An empty sequence after stripping scores 0 and sets *empty if given.
double oracle_score(std::span<const int> candidate, std::span<const int> reference, const OracleConfig& cfg,
                    bool* empty = nullptr);

// oracle_score for every row of `candidates` against one reference, computed with
// one-hot equality products: each n-gram order is the elementwise product of shifted
// unigram equality matrices, and clipped counts come from comparing an n-gram's
// occurrence index within the candidate with its reference count.
std::vector<double> batch_oracle_scores(const PaddedBatch& candidates, std::span<const int> reference,
                                        const OracleConfig& cfg, int* empty_rows = nullptr);

// Brevity-penalized geometric mean of (smoothed) precisions from clipped counts.
double combine_ngram_counts(std::span<const long> matches, std::span<const long> totals, long candidate_len,
                            long reference_len, const OracleConfig& cfg);

}  // namespace cont
