#include "cont/training.hpp"

#include "cont/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

namespace cont {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kDropoutStream = 0x44524f50ULL << 20;

Representation rep_of(const Tape& t, Var v) { return Representation(t.value(v).row(0).transpose()); }

void seed_vec(Tape& t, Var v, const Vector& g, double scale) { t.seed(v, (g * scale).transpose()); }

bool uses_npairs(BaselineMode m) { return m == BaselineMode::NaiveClNPairs || m == BaselineMode::ContNPairs; }

struct SourceResult {
  double nll_sum = 0.0;
  long tokens = 0;
  std::optional<double> ctr;
  Representation anchor;
  std::vector<Representation> reps;
  CandidateSet ranked;
};

// Forward (and, with grads, backward) of one source's share of the objective. The
// nll term is seeded with nll_weight, the contrastive term with ctr_scale.
SourceResult source_objective(const Transformer& model, Gradients* grads, const Example& ex,
                              const CandidateSet* cands, const TrainConfig& cfg, Rng* rng, double nll_weight,
                              double ctr_scale) {
  SourceResult res;
  Tape tape(grads != nullptr);
  const auto b = model.bind(tape, grads);
  Var enc = model.encode_graph(tape, b, ex.source, rng);
  auto gt = model.decode_graph(tape, b, enc, ex.target, rng);
  Var nll = ag::cross_entropy_sum(tape, gt.logits, ex.target, 1.0, model.config().label_smoothing);
  res.nll_sum = tape.value(nll)(0, 0);
  res.tokens = static_cast<long>(ex.target.size());
  if (grads) tape.seed(nll, Matrix::Constant(1, 1, nll_weight));

  if (is_contrastive(cfg.mode) && cands) {
    Var zx = ag::mean_rows(tape, enc);
    Var zy = ag::mean_rows(tape, gt.states);
    const auto candidate_rep = [&](const Candidate& c) {
      return ag::mean_rows(tape, model.decode_graph(tape, b, enc, c.target_ids(), rng).states);
    };
    if (uses_npairs(cfg.mode)) {
      res.ranked = rank_candidates(*cands, ex.target, cfg.oracle);
      std::vector<Var> vars;
      for (const auto& c : res.ranked.candidates) vars.push_back(c.ground_truth ? zy : candidate_rep(c));
      res.anchor = rep_of(tape, zx);
      for (Var v : vars) res.reps.push_back(rep_of(tape, v));
      const auto lg = npairs_loss_grad(res.anchor, res.reps, build_pairs(res.ranked, cfg.loss.gamma));
      res.ctr = lg.loss;
      if (grads) {
        seed_vec(tape, zx, lg.anchor_grad, ctr_scale);
        for (std::size_t i = 0; i < vars.size(); ++i) seed_vec(tape, vars[i], lg.rep_grads[i], ctr_scale);
      }
    } else if (cfg.mode == BaselineMode::DropoutCl) {
      Var zy2 = candidate_rep(res.ranked.candidates.emplace_back([&] {
        Candidate c;
        c.ids.push_back(Vocab::kBos);
        c.ids.insert(c.ids.end(), ex.target.begin(), ex.target.end());
        c.ground_truth = true;
        return c;
      }()));
      std::vector<Var> negs;
      for (const auto& c : cands->candidates) {
        negs.push_back(candidate_rep(c));
        res.ranked.candidates.push_back(c);
      }
      const Representation a = rep_of(tape, zy), p = rep_of(tape, zy2);
      std::vector<Representation> neg_reps;
      for (Var v : negs) neg_reps.push_back(rep_of(tape, v));
      const auto l1 = infonce_loss_grad(a, p, neg_reps, cfg.loss.tau);
      const auto l2 = infonce_loss_grad(p, a, neg_reps, cfg.loss.tau);
      res.ctr = 0.5 * (l1.loss + l2.loss);
      res.anchor = a;
      res.reps.push_back(p);
      res.reps.insert(res.reps.end(), neg_reps.begin(), neg_reps.end());
      if (grads) {
        const double s = 0.5 * ctr_scale;
        seed_vec(tape, zy, l1.anchor_grad + l2.rep_grads[0], s);
        seed_vec(tape, zy2, l1.rep_grads[0] + l2.anchor_grad, s);
        for (std::size_t i = 0; i < negs.size(); ++i) seed_vec(tape, negs[i], l1.rep_grads[i + 1] + l2.rep_grads[i + 1], s);
      }
    } else {
      // InfoNCE with the ground truth as the positive and every candidate as a negative.
      std::vector<Var> negs;
      for (const auto& c : cands->candidates) negs.push_back(candidate_rep(c));
      res.ranked = *cands;
      res.anchor = rep_of(tape, zx);
      const Representation pos = rep_of(tape, zy);
      std::vector<Representation> neg_reps;
      for (Var v : negs) neg_reps.push_back(rep_of(tape, v));
      const auto lg = infonce_loss_grad(res.anchor, pos, neg_reps, cfg.loss.tau);
      res.ctr = lg.loss;
      res.reps.push_back(pos);
      res.reps.insert(res.reps.end(), neg_reps.begin(), neg_reps.end());
      if (grads) {
        seed_vec(tape, zx, lg.anchor_grad, ctr_scale);
        seed_vec(tape, zy, lg.rep_grads[0], ctr_scale);
        for (std::size_t i = 0; i < negs.size(); ++i) seed_vec(tape, negs[i], lg.rep_grads[i + 1], ctr_scale);
      }
    }
  }
  if (grads) tape.backward();
  return res;
}

bool finite_grads(const Gradients& g) {
  for (const auto& m : g) {
    if (!m.allFinite()) return false;
  }
  return true;
}

}  // namespace

const char* to_string(BaselineMode m) {
  switch (m) {
    case BaselineMode::MLE: return "MLE";
    case BaselineMode::NaiveClInfoNCE: return "NAIVE_CL_INFONCE";
    case BaselineMode::NaiveClNPairs: return "NAIVE_CL_NPAIRS";
    case BaselineMode::ContInfoNCE: return "CONT_INFONCE";
    case BaselineMode::ContNPairs: return "CONT_NPAIRS";
    case BaselineMode::DropoutCl: return "DROPOUT_CL";
  }
  return "?";
}

BaselineMode parse_mode(const std::string& s) {
  for (auto m : {BaselineMode::MLE, BaselineMode::NaiveClInfoNCE, BaselineMode::NaiveClNPairs,
                 BaselineMode::ContInfoNCE, BaselineMode::ContNPairs, BaselineMode::DropoutCl}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown mode '" + s + "'", "mode");
}

bool is_contrastive(BaselineMode m) { return m != BaselineMode::MLE; }

int TrainConfig::effective_beam_size() const {
  switch (mode) {
    case BaselineMode::MLE:
    case BaselineMode::NaiveClInfoNCE:
    case BaselineMode::NaiveClNPairs:
    case BaselineMode::DropoutCl:
      return 0;
    default:
      return train_beam_size ? *train_beam_size : static_cast<int>(std::lround(selfgen_ratio * m));
  }
}

LossKind TrainConfig::loss_kind() const { return uses_npairs(mode) ? LossKind::NPairs : LossKind::InfoNCE; }

void TrainConfig::validate() const {
  const auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(msg, key); };
  if (m < 2) fail("train.m", "train.m must be >= 2");
  if (selfgen_ratio < 0.0 || selfgen_ratio > 1.0) fail("train.selfgen_ratio", "train.selfgen_ratio must lie in [0, 1]");
  if (train_beam_size && (*train_beam_size < 0 || *train_beam_size > m))
    fail("train.train_beam_size", "train.train_beam_size must lie in [0, train.m]");
  if (batch_size < 1) fail("train.batch_size", "train.batch_size must be >= 1");
  if (warmup_steps < 0) fail("train.warmup_steps", "train.warmup_steps must be >= 0");
  if (max_steps < 0) fail("train.max_steps", "train.max_steps must be >= 0");
  if (validate_every < 1) fail("train.validate_every", "train.validate_every must be >= 1");
  if (early_stop_patience < 0) fail("train.early_stop_patience", "train.early_stop_patience must be >= 0");
  if (warmup_patience < 0) fail("train.warmup_patience", "train.warmup_patience must be >= 0");
  if (adam.learning_rate <= 0.0) fail("train.learning_rate", "train.learning_rate must be > 0");
  if (gen_max_len < 1) fail("train.gen_max_len", "train.gen_max_len must be >= 1");
  if (ctr_weight < 0.0) fail("train.ctr_weight", "train.ctr_weight must be >= 0");
  if (diversity_strength < 0.0) fail("train.diversity_strength", "train.diversity_strength must be >= 0");
  if (length_penalty <= 0.0) fail("train.length_penalty", "train.length_penalty must be > 0");
  if (loss.gamma <= 0.0) fail("train.gamma", "train.gamma must be > 0");
  if (loss.tau <= 0.0) fail("train.tau", "train.tau must be > 0");
  if (oracle.max_ngram < 1) fail("oracle.max_ngram", "oracle.max_ngram must be >= 1");
  if (oracle.smoothing < 0.0) fail("oracle.smoothing", "oracle.smoothing must be >= 0");
}

std::vector<int> batch_indices(std::size_t n, int batch_size, long step, std::uint64_t seed) {
  CONT_EXPECT(n > 0, "batch_indices: empty dataset");
  std::vector<int> out;
  long cached_epoch = -1;
  std::vector<int> perm(n);
  for (int j = 0; j < batch_size; ++j) {
    const long k = step * batch_size + j;
    const long epoch = k / static_cast<long>(n);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(mix_seed(seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(k % static_cast<long>(n))]);
  }
  return out;
}

std::vector<CandidateSet> assemble_candidates(const std::vector<const Example*>& batch, const Transformer& model,
                                              const TrainConfig& cfg, std::vector<std::string>* warnings) {
  const int beam = cfg.effective_beam_size();
  const int k = static_cast<int>(batch.size());
  std::vector<CandidateSet> out(static_cast<std::size_t>(k));
  const TransformerStepModel step_model(model);
  BeamConfig bc;
  bc.beam_size = std::max(beam, 1);
  bc.num_groups = bc.beam_size;
  bc.diversity_strength = cfg.diversity_strength;
  bc.max_len = cfg.gen_max_len;
  bc.length_penalty = cfg.length_penalty;
  for (int i = 0; i < k; ++i) {
    CandidateSet& cs = out[static_cast<std::size_t>(i)];
    cs.source_id = i;
    if (beam > 0) {
      CandidateSet gen = diverse_beam_search(step_model, batch[static_cast<std::size_t>(i)]->source, bc);
      cs.candidates = std::move(gen.candidates);
      cs.source_representation = std::move(gen.source_representation);
      cs.exhausted = gen.exhausted;
    }
    const auto& own = batch[static_cast<std::size_t>(i)]->target;
    for (int off = 1; off < k && static_cast<int>(cs.candidates.size()) < cfg.m; ++off) {
      const Example& other = *batch[static_cast<std::size_t>((i + off) % k)];
      if (other.target == own) continue;
      Candidate c;
      c.ids.push_back(Vocab::kBos);
      c.ids.insert(c.ids.end(), other.target.begin(), other.target.end());
      c.log_likelihood = 0.0;
      c.length_penalized_score = -std::numeric_limits<double>::infinity();
      c.from_batch = true;
      cs.candidates.push_back(std::move(c));
    }
    if (warnings && static_cast<int>(cs.candidates.size()) < cfg.m && cfg.mode != BaselineMode::MLE)
      warnings->push_back("source " + std::to_string(i) + ": only " + std::to_string(cs.candidates.size()) +
                          " of " + std::to_string(cfg.m) + " contrastive candidates");
  }
  return out;
}

StepMetrics train_step(TrainState& state, const std::vector<const Example*>& batch, const TrainConfig& cfg,
                       StepDetail* detail) {
  CONT_EXPECT(!batch.empty(), "train_step: empty batch");
  std::vector<CandidateSet> cands;
  if (is_contrastive(cfg.mode)) cands = assemble_candidates(batch, state.model, cfg);

  long tokens = 0;
  for (const auto* ex : batch) tokens += static_cast<long>(ex->target.size());
  Gradients grads = state.model.zero_gradients();
  Rng rng(mix_seed(cfg.seed, kDropoutStream + static_cast<std::uint64_t>(state.step)));
  Rng* drop = state.model.config().dropout_rate > 0.0 ? &rng : nullptr;
  const double ctr_scale = cfg.ctr_weight / static_cast<double>(batch.size());

  double nll_sum = 0.0, ctr_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto r = source_objective(state.model, &grads, *batch[i], cands.empty() ? nullptr : &cands[i], cfg, drop,
                              1.0 / static_cast<double>(tokens), ctr_scale);
    nll_sum += r.nll_sum;
    if (r.ctr) ctr_sum += *r.ctr;
    if (detail) {
      detail->candidates.push_back(std::move(r.ranked));
      detail->anchors.push_back(std::move(r.anchor));
      detail->reps.push_back(std::move(r.reps));
      detail->ctr.push_back(r.ctr.value_or(0.0));
    }
  }
  StepMetrics m;
  m.nll = nll_sum / static_cast<double>(tokens);
  if (is_contrastive(cfg.mode)) m.ctr = ctr_sum / static_cast<double>(batch.size());
  m.total = m.nll + cfg.ctr_weight * m.ctr.value_or(0.0);
  if (!std::isfinite(m.total) || !finite_grads(grads))
    throw DivergenceError("non-finite loss at step " + std::to_string(state.step) + " (nll=" + std::to_string(m.nll) +
                          ", ctr=" + std::to_string(m.ctr.value_or(0.0)) + "); last good state is step " +
                          std::to_string(state.step));
  clip_global_norm(grads, cfg.clip_norm);
  state.optimizer.step(state.model.parameters(), grads);
  ++state.step;
  return m;
}

DevMetrics evaluate_objective(const Transformer& model, const Dataset& dev, const TrainConfig& cfg) {
  CONT_EXPECT(!dev.empty(), "evaluate_objective: empty dev set");
  const std::size_t n = cfg.validate_samples > 0 ? std::min(dev.size(), static_cast<std::size_t>(cfg.validate_samples))
                                                 : dev.size();
  double nll_sum = 0.0, ctr_sum = 0.0;
  long tokens = 0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(cfg.batch_size)); ++i) batch.push_back(&dev[i]);
    std::vector<CandidateSet> cands;
    if (is_contrastive(cfg.mode)) cands = assemble_candidates(batch, model, cfg);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto r = source_objective(model, nullptr, *batch[i], cands.empty() ? nullptr : &cands[i], cfg, nullptr, 0.0, 0.0);
      nll_sum += r.nll_sum;
      tokens += r.tokens;
      if (r.ctr) ctr_sum += *r.ctr;
    }
  }
  DevMetrics m;
  m.nll = nll_sum / static_cast<double>(tokens);
  if (is_contrastive(cfg.mode)) m.ctr = ctr_sum / static_cast<double>(n);
  return m;
}

SourceLoss source_loss(const Transformer& model, const Example& ex, const CandidateSet* cands, const TrainConfig& cfg,
                       Gradients* grads, double nll_weight) {
  const double tokens = static_cast<double>(ex.target.size());
  const auto r = source_objective(model, grads, ex, cands, cfg, nullptr, nll_weight / tokens, cfg.ctr_weight);
  SourceLoss out;
  out.nll = r.nll_sum / tokens;
  out.ctr = r.ctr;
  out.total = nll_weight * out.nll + cfg.ctr_weight * r.ctr.value_or(0.0);
  return out;
}

namespace {

std::vector<const Example*> gather(const Dataset& data, const std::vector<int>& idx) {
  std::vector<const Example*> out;
  for (int i : idx) out.push_back(&data[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

TrainState warmup_train(TrainState state, const Dataset& train, const Dataset& dev, const TrainConfig& cfg_in,
                        const StepCallback& on_step) {
  TrainConfig cfg = cfg_in;
  cfg.mode = BaselineMode::MLE;
  cfg.validate();
  std::optional<TrainState> best;
  while (state.step < cfg.warmup_steps) {
    MetricRow row;
    const StepMetrics m = train_step(state, gather(train, batch_indices(train.size(), cfg.batch_size, state.step, cfg.seed)), cfg);
    row.step = state.step;
    row.nll = m.nll;
    row.total = m.total;
    const bool validate = state.step % cfg.validate_every == 0 || state.step == cfg.warmup_steps;
    bool stop = false;
    if (validate) {
      const double dev_nll = evaluate_objective(state.model, dev, cfg).nll;
      row.dev_nll = dev_nll;
      if (!state.has_best || dev_nll < state.best_dev) {
        state.best_dev = dev_nll;
        state.has_best = true;
        state.stale_validations = 0;
      } else {
        stop = ++state.stale_validations > cfg.warmup_patience;
      }
    }
    state.history.push_back(row);
    if (on_step) on_step(state, row);
    if (validate && state.stale_validations == 0) best.emplace(state);
    if (stop) break;
  }
  TrainState out = best ? std::move(*best) : std::move(state);
  if (best) out.history = state.history;
  out.warmed_up = true;
  out.stale_validations = 0;
  return out;
}

TrainState train_loop(TrainState state, const Dataset& train, const Dataset& dev, const TrainConfig& cfg,
                      const StepCallback& on_step) {
  cfg.validate();
  if (is_contrastive(cfg.mode) && !state.warmed_up)
    throw ConfigError("train: mode " + std::string(to_string(cfg.mode)) + " requires a warm-up checkpoint", "checkpoint");
  const auto objective = [&](const DevMetrics& d) { return is_contrastive(cfg.mode) ? *d.ctr : d.nll; };

  const long first = state.step;
  state.history.clear();
  const DevMetrics start = evaluate_objective(state.model, dev, cfg);
  state.start_dev = objective(start);
  state.best_dev = *state.start_dev;
  state.has_best = true;
  state.stale_validations = 0;
  TrainState best = state;

  while (state.step < first + cfg.max_steps) {
    const StepMetrics m = train_step(state, gather(train, batch_indices(train.size(), cfg.batch_size, state.step, cfg.seed)), cfg);
    MetricRow row;
    row.step = state.step;
    row.nll = m.nll;
    row.ctr = m.ctr;
    row.total = m.total;
    const long taken = state.step - first;
    const bool validate = taken % cfg.validate_every == 0 || taken == cfg.max_steps;
    bool improved = false, stop = false;
    if (validate) {
      const DevMetrics d = evaluate_objective(state.model, dev, cfg);
      row.dev_nll = d.nll;
      row.dev_ctr = d.ctr;
      const double v = objective(d);
      if (v < state.best_dev) {
        state.best_dev = v;
        state.stale_validations = 0;
        improved = true;
      } else {
        stop = ++state.stale_validations > cfg.early_stop_patience;
      }
    }
    state.history.push_back(row);
    if (on_step) on_step(state, row);
    if (improved) best = state;
    if (stop) break;
  }
  best.history = std::move(state.history);
  best.stale_validations = 0;
  return best;
}

std::pair<Representation, Representation> dropout_cl_positives(const Transformer& model, const Example& ex, Rng& rng) {
  if (model.config().dropout_rate <= 0.0)
    std::cerr << "warning: dropout_rate is 0; dropout views are identical\n";
  Tape tape(false);
  const auto b = model.bind(tape, nullptr);
  Rng* drop = model.config().dropout_rate > 0.0 ? &rng : nullptr;
  Var enc = model.encode_graph(tape, b, ex.source, drop);
  Var a = ag::mean_rows(tape, model.decode_graph(tape, b, enc, ex.target, drop).states);
  Var c = ag::mean_rows(tape, model.decode_graph(tape, b, enc, ex.target, drop).states);
  return {rep_of(tape, a), rep_of(tape, c)};
}

void write_metric_log(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metric log " + path);
  const auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return std::string(buf);
  };
  out << "step,nll,ctr,total,dev_nll,dev_ctr\n";
  for (const auto& r : rows)
    out << r.step << ',' << opt(r.nll) << ',' << opt(r.ctr) << ',' << opt(r.total) << ',' << opt(r.dev_nll) << ','
        << opt(r.dev_ctr) << '\n';
  if (!out) throw IoError("failed writing metric log " + path);
}

}  // namespace cont
