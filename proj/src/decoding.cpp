#include "cont/decoding.hpp"

#include "cont/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace cont {

namespace {

std::atomic<long> g_searches{0};

class TransformerSession final : public DecoderSession {
 public:
  TransformerSession(const Transformer& model, std::span<const int> source) : dec_(model, source) {}
  std::vector<int> feed(std::span<const int> parents, std::span<const int> tokens, Matrix& log_probs,
                        Matrix& states) override {
    return dec_.feed(parents, tokens, log_probs, states);
  }
  Representation source_representation() const override {
    return Representation(dec_.encoder_states().colwise().mean().transpose());
  }

 private:
  IncrementalDecoder dec_;
};

struct Hyp {
  int slot = -1;
  TokenSequence ids;
  double ll = 0.0;
  Vector state_sum;
  int fed = 0;
  RowVector log_probs;
};

struct Group {
  int width = 0;
  std::vector<Hyp> active;
  std::vector<Candidate> finished;
  bool done = false;
};

struct Expansion {
  double key;
  double ll;
  int hyp;
  int token;
};

struct PendingFeed {
  int group;
  Hyp hyp;
  int token;
};

Candidate finalize(const Hyp& h, int token, double ll, double length_penalty, int group) {
  Candidate c;
  c.ids = h.ids;
  c.ids.push_back(token);
  c.log_likelihood = std::min(ll, 0.0);
  c.length_penalized_score = length_penalized(c.log_likelihood, c.length(), length_penalty);
  c.representation = Representation(h.state_sum / static_cast<double>(h.fed));
  c.group = group;
  return c;
}

// Lock-step search over groups of equal width. Each group runs the usual
// top-2w selection: EOS expansions ranked inside the top w are finalized, the best
// w non-EOS expansions continue. Earlier groups' selections at the same step
// penalize later groups' keys.
CandidateSet grouped_search(const StepModel& model, std::span<const int> source, const BeamConfig& cfg,
                            int groups, double strength) {
  ++g_searches;
  auto session = model.start(source);
  const int vocab = model.vocab_size();
  const int width = cfg.beam_size / groups;

  Matrix lp, st;
  const int root_parent = -1;
  const int bos = Vocab::kBos;
  const auto root_slot = session->feed(std::span<const int>(&root_parent, 1), std::span<const int>(&bos, 1), lp, st);
  Hyp root;
  root.slot = root_slot[0];
  root.ids = {Vocab::kBos};
  root.state_sum = st.row(0).transpose();
  root.fed = 1;
  root.log_probs = lp.row(0);

  std::vector<Group> gs(static_cast<std::size_t>(groups));
  for (auto& g : gs) {
    g.width = width;
    g.active.push_back(root);
  }

  std::vector<double> penalty(static_cast<std::size_t>(vocab), 0.0);
  for (int step = 1; step <= cfg.max_len; ++step) {
    const bool last = step == cfg.max_len;
    std::fill(penalty.begin(), penalty.end(), 0.0);
    std::vector<PendingFeed> pending;
    for (int gi = 0; gi < groups; ++gi) {
      Group& g = gs[static_cast<std::size_t>(gi)];
      if (g.done) continue;
      std::vector<Expansion> ex;
      ex.reserve(g.active.size() * static_cast<std::size_t>(vocab));
      for (int a = 0; a < static_cast<int>(g.active.size()); ++a) {
        const Hyp& h = g.active[static_cast<std::size_t>(a)];
        for (int v = 0; v < vocab; ++v) {
          if (v == Vocab::kPad || v == Vocab::kBos) continue;
          const double ll = h.ll + h.log_probs(v);
          ex.push_back({ll - strength * penalty[static_cast<std::size_t>(v)], ll, a, v});
        }
      }
      const std::size_t keep = std::min(ex.size(), static_cast<std::size_t>(2 * g.width));
      std::partial_sort(ex.begin(), ex.begin() + static_cast<std::ptrdiff_t>(keep), ex.end(),
                        [](const Expansion& x, const Expansion& y) {
                          if (x.key != y.key) return x.key > y.key;
                          if (x.hyp != y.hyp) return x.hyp < y.hyp;
                          return x.token < y.token;
                        });
      std::vector<Hyp> next;
      for (std::size_t r = 0; r < keep; ++r) {
        const Expansion& e = ex[r];
        const Hyp& parent = g.active[static_cast<std::size_t>(e.hyp)];
        if (last) {
          if (static_cast<int>(r) >= g.width) break;
          g.finished.push_back(finalize(parent, e.token, e.ll, cfg.length_penalty, gi));
          penalty[static_cast<std::size_t>(e.token)] += 1.0;
        } else if (e.token == Vocab::kEos) {
          if (static_cast<int>(r) < g.width) {
            g.finished.push_back(finalize(parent, e.token, e.ll, cfg.length_penalty, gi));
            penalty[static_cast<std::size_t>(e.token)] += 1.0;
          }
        } else if (static_cast<int>(next.size()) < g.width) {
          Hyp h = parent;
          h.ids.push_back(e.token);
          h.ll = e.ll;
          next.push_back(std::move(h));
          penalty[static_cast<std::size_t>(e.token)] += 1.0;
        }
      }
      g.active.clear();
      if (last || static_cast<int>(g.finished.size()) >= g.width || next.empty()) {
        g.done = true;
        continue;
      }
      for (auto& h : next) pending.push_back({gi, std::move(h), 0});
    }
    if (pending.empty()) break;

    std::vector<int> parents, tokens;
    for (const auto& p : pending) {
      parents.push_back(p.hyp.slot);
      tokens.push_back(p.hyp.ids.back());
    }
    const auto slots = session->feed(parents, tokens, lp, st);
    for (std::size_t i = 0; i < pending.size(); ++i) {
      Hyp& h = pending[i].hyp;
      h.slot = slots[i];
      h.state_sum += st.row(static_cast<Eigen::Index>(i)).transpose();
      h.fed += 1;
      h.log_probs = lp.row(static_cast<Eigen::Index>(i));
      gs[static_cast<std::size_t>(pending[i].group)].active.push_back(std::move(h));
    }
  }

  CandidateSet out;
  out.source_representation = session->source_representation();
  const auto by_score = [](const Candidate& a, const Candidate& b) {
    return a.length_penalized_score > b.length_penalized_score;
  };
  std::vector<Candidate> merged;
  for (auto& g : gs) {
    std::stable_sort(g.finished.begin(), g.finished.end(), by_score);
    if (static_cast<int>(g.finished.size()) > g.width) g.finished.resize(static_cast<std::size_t>(g.width));
    for (auto& c : g.finished) merged.push_back(std::move(c));
  }
  std::stable_sort(merged.begin(), merged.end(), by_score);
  std::map<TokenSequence, bool> seen;
  for (auto& c : merged) {
    if (seen.emplace(c.ids, true).second) out.candidates.push_back(std::move(c));
  }
  out.exhausted = static_cast<int>(out.candidates.size()) < cfg.beam_size;
  return out;
}

}  // namespace

void BeamConfig::validate() const {
  CONT_EXPECT(beam_size >= 1, "beam: beam_size must be >= 1");
  CONT_EXPECT(max_len >= 1, "beam: max_len must be >= 1");
  CONT_EXPECT(length_penalty > 0.0, "beam: length_penalty must be > 0");
  CONT_EXPECT(num_groups >= 1 && beam_size % num_groups == 0, "beam: num_groups must divide beam_size");
  CONT_EXPECT(diversity_strength >= 0.0, "beam: diversity_strength must be >= 0");
}

TokenSequence Candidate::output_ids() const {
  TokenSequence out(ids.begin() + (ids.empty() ? 0 : 1), ids.end());
  if (!out.empty() && out.back() == Vocab::kEos) out.pop_back();
  return out;
}

std::unique_ptr<DecoderSession> TransformerStepModel::start(std::span<const int> source) const {
  return std::make_unique<TransformerSession>(model_, source);
}

double length_penalized(double log_likelihood, int length, double length_penalty) {
  return log_likelihood / std::pow(static_cast<double>(std::max(length, 1)), length_penalty);
}

CandidateSet beam_search(const StepModel& model, std::span<const int> source, const BeamConfig& cfg) {
  cfg.validate();
  return grouped_search(model, source, cfg, 1, 0.0);
}

std::vector<CandidateSet> beam_search(const StepModel& model, const PaddedBatch& x, const BeamConfig& cfg) {
  std::vector<CandidateSet> out;
  for (int i = 0; i < x.batch(); ++i) {
    out.push_back(beam_search(model, x.row(i), cfg));
    out.back().source_id = i;
  }
  return out;
}

CandidateSet diverse_beam_search(const StepModel& model, std::span<const int> source, const BeamConfig& cfg) {
  cfg.validate();
  if (cfg.num_groups == 1 || cfg.diversity_strength == 0.0) return grouped_search(model, source, cfg, 1, 0.0);
  return grouped_search(model, source, cfg, cfg.num_groups, cfg.diversity_strength);
}

std::vector<CandidateSet> diverse_beam_search(const StepModel& model, const PaddedBatch& x, const BeamConfig& cfg) {
  std::vector<CandidateSet> out;
  for (int i = 0; i < x.batch(); ++i) {
    out.push_back(diverse_beam_search(model, x.row(i), cfg));
    out.back().source_id = i;
  }
  return out;
}

std::vector<double> rerank_scores(const CandidateSet& cands, const Representation& source, double alpha) {
  CONT_EXPECT(alpha >= 0.0 && alpha <= 1.0, "rerank: alpha must lie in [0, 1]");
  std::vector<double> s;
  s.reserve(cands.candidates.size());
  for (const auto& c : cands.candidates) {
    const double sim = alpha > 0.0 ? cosine_similarity(source, c.representation) : 0.0;
    s.push_back(alpha * sim + (1.0 - alpha) * std::exp(c.length_penalized_score));
  }
  return s;
}

int rerank_index(const CandidateSet& cands, const Representation& source, double alpha) {
  CONT_EXPECT(!cands.candidates.empty(), "rerank_select: empty candidate set");
  const auto s = rerank_scores(cands, source, alpha);
  int best = 0;
  for (int i = 1; i < static_cast<int>(s.size()); ++i) {
    if (s[static_cast<std::size_t>(i)] > s[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

const Candidate& rerank_select(const CandidateSet& cands, const Representation& source, double alpha) {
  return cands.candidates[static_cast<std::size_t>(rerank_index(cands, source, alpha))];
}

std::vector<TokenSequence> generate(const StepModel& model, const PaddedBatch& x, const BeamConfig& cfg,
                                    double alpha) {
  std::vector<TokenSequence> out;
  for (int i = 0; i < x.batch(); ++i) {
    const CandidateSet cands = beam_search(model, x.row(i), cfg);
    out.push_back(rerank_select(cands, cands.source_representation, alpha).output_ids());
  }
  return out;
}

long search_invocations() { return g_searches.load(); }

}  // namespace cont
