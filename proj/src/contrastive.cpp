#include "cont/contrastive.hpp"

#include "cont/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cont {

namespace {

struct CosParts {
  double value;
  Vector d_a;
  Vector d_b;
};

// Unclamped cosine and its partials.
CosParts cosine_parts(const Representation& a, const Representation& b) {
  CONT_EXPECT(a.z.size() == b.z.size(), "cosine: dimension mismatch");
  if (a.norm < kNormFloor || b.norm < kNormFloor) throw ContractError("cosine: near-zero norm");
  const double inv = 1.0 / (a.norm * b.norm);
  const double c = a.z.dot(b.z) * inv;
  CosParts p{c, b.z * inv - a.z * (c / (a.norm * a.norm)), a.z * inv - b.z * (c / (b.norm * b.norm))};
  return p;
}

double cosine_raw(const Representation& a, const Representation& b) {
  CONT_EXPECT(a.z.size() == b.z.size(), "cosine: dimension mismatch");
  if (a.norm < kNormFloor || b.norm < kNormFloor) throw ContractError("cosine: near-zero norm");
  return a.z.dot(b.z) / (a.norm * b.norm);
}

void check_pair(const ContrastivePair& p, std::size_t n) {
  if (p.pos < 0 || p.neg < 0 || static_cast<std::size_t>(p.pos) >= n || static_cast<std::size_t>(p.neg) >= n)
    throw ContractError("npairs_loss: pair index out of range");
}

}  // namespace

void LossConfig::validate() const {
  CONT_EXPECT(gamma > 0.0, "loss: gamma must be > 0");
  CONT_EXPECT(tau > 0.0, "loss: tau must be > 0");
}

CandidateSet rank_candidates(CandidateSet set, std::span<const int> reference, const OracleConfig& cfg) {
  if (!set.ground_truth_index) {
    Candidate gt;
    gt.ids.push_back(Vocab::kBos);
    gt.ids.insert(gt.ids.end(), reference.begin(), reference.end());
    if (reference.empty() || reference.back() != Vocab::kEos) gt.ids.push_back(Vocab::kEos);
    gt.ground_truth = true;
    set.candidates.insert(set.candidates.begin(), std::move(gt));
    set.ground_truth_index = 0;
  }
  const int n = static_cast<int>(set.candidates.size());
  const int gti = *set.ground_truth_index;
  CONT_EXPECT(gti >= 0 && gti < n, "rank_candidates: ground_truth_index out of range");

  std::vector<TokenSequence> rows;
  for (const auto& c : set.candidates) rows.push_back(c.ids);
  const auto scores = batch_oracle_scores(PaddedBatch(rows), reference, cfg);
  for (int i = 0; i < n; ++i) set.candidates[static_cast<std::size_t>(i)].oracle_score = i == gti ? 1.0 : scores[static_cast<std::size_t>(i)];

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if ((a == gti) != (b == gti)) return a == gti;
    const auto& ca = set.candidates[static_cast<std::size_t>(a)];
    const auto& cb = set.candidates[static_cast<std::size_t>(b)];
    if (*ca.oracle_score != *cb.oracle_score) return *ca.oracle_score > *cb.oracle_score;
    if (ca.length_penalized_score != cb.length_penalized_score)
      return ca.length_penalized_score > cb.length_penalized_score;
    return a < b;
  });
  for (int r = 0; r < n; ++r) set.candidates[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])].rank = r;
  return set;
}

std::vector<int> ranked_order(const CandidateSet& ranked) {
  std::vector<int> order(ranked.candidates.size(), -1);
  for (std::size_t i = 0; i < ranked.candidates.size(); ++i) {
    const auto& r = ranked.candidates[i].rank;
    CONT_EXPECT(r && *r >= 0 && static_cast<std::size_t>(*r) < order.size() && order[static_cast<std::size_t>(*r)] < 0,
                "ranked_order: ranks are not a permutation");
    order[static_cast<std::size_t>(*r)] = static_cast<int>(i);
  }
  return order;
}

ContrastivePairs build_pairs(const CandidateSet& ranked, double gamma) {
  const auto order = ranked_order(ranked);
  ContrastivePairs pairs;
  const int n = static_cast<int>(order.size());
  if (n < 2) return pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) pairs.push_back({order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)], gamma * (b - a)});
  }
  return pairs;
}

double npairs_loss(const Representation& anchor, const std::vector<Representation>& reps,
                   const ContrastivePairs& pairs) {
  std::vector<double> cos(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i) cos[i] = cosine_raw(anchor, reps[i]);
  double loss = 0.0;
  for (const auto& p : pairs) {
    check_pair(p, reps.size());
    loss += std::max(0.0, cos[static_cast<std::size_t>(p.neg)] - cos[static_cast<std::size_t>(p.pos)] + p.margin);
  }
  return loss;
}

LossGrad npairs_loss_grad(const Representation& anchor, const std::vector<Representation>& reps,
                          const ContrastivePairs& pairs) {
  std::vector<CosParts> parts;
  parts.reserve(reps.size());
  for (const auto& r : reps) parts.push_back(cosine_parts(anchor, r));
  std::vector<double> dcos(reps.size(), 0.0);
  LossGrad out;
  for (const auto& p : pairs) {
    check_pair(p, reps.size());
    const double arg = parts[static_cast<std::size_t>(p.neg)].value - parts[static_cast<std::size_t>(p.pos)].value + p.margin;
    if (arg > 0.0) {
      out.loss += arg;
      dcos[static_cast<std::size_t>(p.neg)] += 1.0;
      dcos[static_cast<std::size_t>(p.pos)] -= 1.0;
    }
  }
  out.anchor_grad = Vector::Zero(anchor.z.size());
  for (std::size_t i = 0; i < reps.size(); ++i) {
    out.anchor_grad += dcos[i] * parts[i].d_a;
    out.rep_grads.push_back(dcos[i] * parts[i].d_b);
  }
  return out;
}

LossGrad infonce_loss_grad(const Representation& anchor, const Representation& positive,
                           const std::vector<Representation>& negatives, double tau) {
  CONT_EXPECT(tau > 0.0, "infonce_loss: tau must be > 0");
  std::vector<CosParts> parts;
  parts.push_back(cosine_parts(anchor, positive));
  for (const auto& r : negatives) parts.push_back(cosine_parts(anchor, r));
  std::vector<double> s(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) s[i] = parts[i].value / tau;
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  LossGrad out;
  out.loss = lse - s[0];
  out.anchor_grad = Vector::Zero(anchor.z.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double ds = std::exp(s[i] - lse) - (i == 0 ? 1.0 : 0.0);
    const double dc = ds / tau;
    out.anchor_grad += dc * parts[i].d_a;
    out.rep_grads.push_back(dc * parts[i].d_b);
  }
  return out;
}

double infonce_loss(const Representation& anchor, const Representation& positive,
                    const std::vector<Representation>& negatives, double tau) {
  CONT_EXPECT(tau > 0.0, "infonce_loss: tau must be > 0");
  std::vector<double> s;
  s.push_back(cosine_raw(anchor, positive) / tau);
  for (const auto& r : negatives) s.push_back(cosine_raw(anchor, r) / tau);
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  return mx + std::log(z) - s[0];
}

}  // namespace cont
