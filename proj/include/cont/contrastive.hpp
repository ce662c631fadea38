#pragma once

#include "cont/decoding.hpp"
#include "cont/model.hpp"
#include "cont/oracle.hpp"

#include <span>
#include <vector>

namespace cont {

enum class LossKind { NPairs, InfoNCE };

struct LossConfig {
  double gamma = 0.01;
  double tau = 0.1;
  LossKind kind = LossKind::NPairs;

  void validate() const;
};

struct ContrastivePair {
  int pos = 0;  // candidate index with the better (smaller) rank
  int neg = 0;
  double margin = 0.0;
};
using ContrastivePairs = std::vector<ContrastivePair>;

// Scores every non-ground-truth candidate against `reference` and assigns ranks. If the
// set has no ground truth, one is inserted at index 0 (ids BOS + reference, EOS-terminated). The
// ground truth takes oracle score 1.0 and rank 0; the rest sort by oracle score desc,
// then length-penalized score desc, then index. Candidate order is left unchanged.
CandidateSet rank_candidates(CandidateSet set, std::span<const int> reference, const OracleConfig& cfg);

// Candidate indices sorted by rank.
std::vector<int> ranked_order(const CandidateSet& ranked);

// All pairs with rank(pos) < rank(neg), margin gamma * (rank(neg) - rank(pos)).
ContrastivePairs build_pairs(const CandidateSet& ranked, double gamma);

struct LossGrad {
  double loss = 0.0;
  Vector anchor_grad;
  std::vector<Vector> rep_grads;
};

// Sum over pairs of max(0, cos(z_x, z_neg) - cos(z_x, z_pos) + margin); reps are indexed
// like the candidate set. The hinge has zero slope where its argument is <= 0.
double npairs_loss(const Representation& anchor, const std::vector<Representation>& reps,
                   const ContrastivePairs& pairs);
LossGrad npairs_loss_grad(const Representation& anchor, const std::vector<Representation>& reps,
                          const ContrastivePairs& pairs);

// -log softmax over {positive} + negatives of cos(anchor, .) / tau, at the positive.
// rep_grads[0] is the positive's gradient, followed by the negatives in order.
double infonce_loss(const Representation& anchor, const Representation& positive,
                    const std::vector<Representation>& negatives, double tau);
LossGrad infonce_loss_grad(const Representation& anchor, const Representation& positive,
                           const std::vector<Representation>& negatives, double tau);

}  // namespace cont
