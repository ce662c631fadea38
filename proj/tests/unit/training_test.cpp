#include "cont/error.hpp"
#include "cont/training.hpp"
#include "support/gen.hpp"
#include "support/gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace cont;
using cont::testing::Gen;

namespace {

// Reverse task over ids 4..11 with EOS-terminated targets.
Dataset toy_data(Gen& g, int n, int max_len = 6) {
  Dataset d;
  for (int i = 0; i < n; ++i) {
    Example ex;
    ex.source = g.tokens(3, max_len, 8);
    ex.target.assign(ex.source.rbegin(), ex.source.rend());
    ex.target.push_back(Vocab::kEos);
    d.push_back(ex);
  }
  return d;
}

TrainConfig small_config(BaselineMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.batch_size = 4;
  c.m = 4;
  c.gen_max_len = 8;
  c.validate_every = 5;
  c.warmup_steps = 10;
  c.warmup_patience = 100;
  c.max_steps = 10;
  c.adam.learning_rate = 3e-3;
  return c;
}

std::vector<const Example*> ptrs(const Dataset& d, std::size_t from, std::size_t n) {
  std::vector<const Example*> out;
  for (std::size_t i = from; i < from + n; ++i) out.push_back(&d[i]);
  return out;
}

}  // namespace

TEST_CASE("batch order is an epoch-wise permutation fixed by the seed") {
  for (std::size_t n : {1u, 7u, 10u}) {
    for (int b : {1, 3, 5}) {
      std::vector<int> seen;
      const long steps_per_two_epochs = static_cast<long>(2 * n) / b;
      for (long s = 0; s < steps_per_two_epochs; ++s) {
        const auto idx = batch_indices(n, b, s, 9);
        CHECK(idx == batch_indices(n, b, s, 9));
        seen.insert(seen.end(), idx.begin(), idx.end());
      }
      for (std::size_t e = 0; e + n <= seen.size(); e += n) {
        std::set<int> epoch(seen.begin() + static_cast<long>(e), seen.begin() + static_cast<long>(e + n));
        CHECK(epoch.size() == n);
        CHECK(*epoch.rbegin() == static_cast<int>(n) - 1);
      }
    }
  }
  CHECK(batch_indices(100, 10, 0, 1) != batch_indices(100, 10, 0, 2));
  CHECK_THROWS_AS(batch_indices(0, 1, 0, 1), ContractError);
}

TEST_CASE("train config validation and beam sizing") {
  TrainConfig c;
  c.mode = BaselineMode::ContNPairs;
  c.m = 16;
  c.selfgen_ratio = 0.75;
  CHECK(c.effective_beam_size() == 12);
  c.train_beam_size = 5;
  CHECK(c.effective_beam_size() == 5);
  c.mode = BaselineMode::NaiveClNPairs;
  CHECK(c.effective_beam_size() == 0);
  c.mode = BaselineMode::ContNPairs;
  c.train_beam_size = 17;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "train.train_beam_size");
  }
  c.train_beam_size.reset();
  c.selfgen_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_mode("CONT_NPAIRS") == BaselineMode::ContNPairs);
  CHECK_THROWS_AS(parse_mode("cont"), ConfigError);
  for (auto m : {BaselineMode::MLE, BaselineMode::NaiveClInfoNCE, BaselineMode::NaiveClNPairs, BaselineMode::ContInfoNCE,
                 BaselineMode::ContNPairs, BaselineMode::DropoutCl})
    CHECK(parse_mode(to_string(m)) == m);
}

TEST_CASE("candidate assembly: from-batch fill, duplicates and naive modes") {
  Gen g(61);
  const Transformer model(cont::testing::tiny_model_config(), 1);
  Dataset d = toy_data(g, 6);
  d[3].target = d[0].target;  // exact copy of row 0's target
  const auto batch = ptrs(d, 0, 6);

  TrainConfig c = small_config(BaselineMode::NaiveClNPairs);
  c.m = 10;
  const long before = search_invocations();
  std::vector<std::string> warnings;
  const auto sets = assemble_candidates(batch, model, c, &warnings);
  CHECK(search_invocations() == before);
  REQUIRE(sets.size() == 6);
  // Row 0 pulls rows 1, 2, 4, 5 (row 3 duplicates its target).
  std::vector<TokenSequence> got;
  for (const auto& cand : sets[0].candidates) {
    CHECK(cand.from_batch);
    CHECK(std::isinf(cand.length_penalized_score));
    got.push_back(cand.target_ids());
  }
  CHECK(got == std::vector<TokenSequence>{d[1].target, d[2].target, d[4].target, d[5].target});
  // Row 4 starts at row 5 and wraps around.
  CHECK(sets[4].candidates.front().target_ids() == d[5].target);
  CHECK(sets[4].candidates[1].target_ids() == d[0].target);
  CHECK(!warnings.empty());

  c.mode = BaselineMode::ContNPairs;
  c.m = 4;
  c.selfgen_ratio = 0.5;
  const auto cont_sets = assemble_candidates(batch, model, c);
  CHECK(search_invocations() == before + 6);
  for (const auto& s : cont_sets) {
    CHECK(s.candidates.size() <= 4u);
    int generated = 0;
    for (const auto& cand : s.candidates) generated += cand.from_batch ? 0 : 1;
    CHECK(generated <= 2);
    CHECK(generated >= 1);
  }
}

TEST_CASE("training reduces the loss and MLE never searches") {
  Gen g(62);
  const Dataset d = toy_data(g, 8);
  TrainConfig c = small_config(BaselineMode::MLE);
  TrainState st(Transformer(cont::testing::tiny_model_config(12, 16), 2), c.adam);
  const auto batch = ptrs(d, 0, 8);
  const long before = search_invocations();
  const double first = train_step(st, batch, c).nll;
  double last = first;
  for (int i = 0; i < 40; ++i) last = train_step(st, batch, c).nll;
  CHECK(last < first);
  CHECK(st.step == 41);
  CHECK(search_invocations() == before);
}

TEST_CASE("contrastive steps report per-source losses") {
  Gen g(63);
  const Dataset d = toy_data(g, 8);
  for (auto mode : {BaselineMode::NaiveClInfoNCE, BaselineMode::NaiveClNPairs, BaselineMode::ContInfoNCE,
                    BaselineMode::ContNPairs, BaselineMode::DropoutCl}) {
    TrainConfig c = small_config(mode);
    TrainState st(Transformer(cont::testing::tiny_model_config(12, 16), 2), c.adam);
    StepDetail detail;
    const auto m = train_step(st, ptrs(d, 0, 4), c, &detail);
    REQUIRE(m.ctr);
    CHECK(std::isfinite(*m.ctr));
    REQUIRE(detail.ctr.size() == 4);
    double mean = 0.0;
    for (double x : detail.ctr) mean += x / 4.0;
    CHECK(*m.ctr == doctest::Approx(mean));
    CHECK(m.total == doctest::Approx(m.nll + c.ctr_weight * *m.ctr));
    if (mode == BaselineMode::ContNPairs || mode == BaselineMode::NaiveClNPairs) {
      for (const auto& cs : detail.candidates) {
        CHECK(cs.ground_truth_index == 0);
        CHECK(cs.candidates[0].rank == 0);
      }
    }
  }
}

TEST_CASE("zero self-generated ratio reproduces naive training") {
  Gen g(64);
  const Dataset d = toy_data(g, 12);
  TrainConfig naive = small_config(BaselineMode::NaiveClNPairs);
  TrainConfig cont = naive;
  cont.mode = BaselineMode::ContNPairs;
  cont.selfgen_ratio = 0.0;
  TrainState a(Transformer(cont::testing::tiny_model_config(12, 16), 3), naive.adam);
  TrainState b = a;
  for (int s = 0; s < 15; ++s) {
    const auto idx = batch_indices(d.size(), 4, a.step, naive.seed);
    std::vector<const Example*> batch;
    for (int i : idx) batch.push_back(&d[static_cast<std::size_t>(i)]);
    const auto ma = train_step(a, batch, naive);
    const auto mb = train_step(b, batch, cont);
    CHECK(ma.nll == mb.nll);
    CHECK(*ma.ctr == *mb.ctr);
  }
}

TEST_CASE("objective gradients through the model") {
  Gen g(65);
  Transformer m(cont::testing::tiny_model_config(), 4);
  Example ex{g.tokens(2, 6, 8), g.tokens(2, 5, 8)};
  ex.target.push_back(Vocab::kEos);
  const CandidateSet cands = cont::testing::random_candidates(g, 5, 12, 5);
  for (auto mode : {BaselineMode::ContNPairs, BaselineMode::ContInfoNCE, BaselineMode::DropoutCl}) {
    TrainConfig c;
    c.mode = mode;
    c.loss.gamma = 0.05;
    c.loss.tau = 0.5;
    const auto r = cont::testing::check_objective_gradients(m, ex, &cands, c, 0.0, 40, g);
    CHECK(r.checked > 20);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("dropout views") {
  Gen g(66);
  ModelConfig mc = cont::testing::tiny_model_config(12, 16);
  mc.dropout_rate = 0.3;
  const Transformer m(mc, 5);
  Example ex{g.tokens(2, 6, 8), g.tokens(2, 5, 8)};
  Rng rng(1);
  const auto [a, b] = dropout_cl_positives(m, ex, rng);
  CHECK((a.z - b.z).norm() > 1e-6);
  mc.dropout_rate = 0.0;
  const Transformer m0(mc, 5);
  const auto [c, d] = dropout_cl_positives(m0, ex, rng);
  CHECK((c.z - d.z).norm() == 0.0);
}

TEST_CASE("non-finite loss raises and leaves the state untouched") {
  Gen g(67);
  const Dataset d = toy_data(g, 4);
  TrainConfig c = small_config(BaselineMode::MLE);
  TrainState st(Transformer(cont::testing::tiny_model_config(), 6), c.adam);
  st.model.parameters()[0].setConstant(std::nan(""));
  const Matrix before = st.model.parameters()[1];
  CHECK_THROWS_AS(train_step(st, ptrs(d, 0, 4), c), DivergenceError);
  CHECK(st.step == 0);
  CHECK(st.model.parameters()[1] == before);
}

TEST_CASE("warm-up and second stage bookkeeping") {
  Gen g(68);
  const Dataset train = toy_data(g, 16), dev = toy_data(g, 6);
  TrainConfig c = small_config(BaselineMode::MLE);
  const TrainState init(Transformer(cont::testing::tiny_model_config(12, 16), 7), c.adam);

  TrainConfig zero = c;
  zero.warmup_steps = 0;
  const TrainState same = warmup_train(init, train, dev, zero);
  CHECK(same.warmed_up);
  CHECK(same.step == 0);
  for (std::size_t i = 0; i < same.model.parameters().size(); ++i) CHECK(same.model.parameters()[i] == init.model.parameters()[i]);

  c.warmup_steps = 20;
  const TrainState warm = warmup_train(init, train, dev, c);
  CHECK(warm.warmed_up);
  CHECK(warm.history.size() == 20);
  double best = 1e300;
  long best_step = -1;
  for (const auto& r : warm.history) {
    if (r.dev_nll && *r.dev_nll < best) {
      best = *r.dev_nll;
      best_step = r.step;
    }
  }
  CHECK(warm.best_dev == best);
  CHECK(warm.step == best_step);

  TrainConfig ctr = small_config(BaselineMode::ContNPairs);
  CHECK_THROWS_AS(train_loop(init, train, dev, ctr), ConfigError);
  const TrainState tuned = train_loop(warm, train, dev, ctr);
  REQUIRE(tuned.start_dev);
  CHECK(tuned.best_dev <= *tuned.start_dev);
  for (const auto& r : tuned.history) {
    CHECK(r.ctr);
    if (r.dev_nll) CHECK(r.dev_ctr);
  }

  // A vanishing learning rate never improves the dev objective, so patience 0 stops at
  // the first validation.
  TrainConfig frozen = c;
  frozen.adam.learning_rate = 1e-300;
  frozen.early_stop_patience = 0;
  TrainState w2 = warm;
  w2.optimizer.set_config(frozen.adam);
  const TrainState stopped = train_loop(w2, train, dev, frozen);
  CHECK(stopped.history.size() == static_cast<std::size_t>(frozen.validate_every));
  CHECK(stopped.step == warm.step);
}

TEST_CASE("metric log layout") {
  std::vector<MetricRow> rows(2);
  rows[0].step = 1;
  rows[0].nll = 2.5;
  rows[0].total = 2.5;
  rows[1].step = 2;
  rows[1].nll = 1.0;
  rows[1].ctr = 0.5;
  rows[1].total = 1.5;
  rows[1].dev_nll = 1.25;
  rows[1].dev_ctr = 0.75;
  const std::string path = (std::filesystem::temp_directory_path() / "cont_metric_log_test.csv").string();
  write_metric_log(path, rows);
  std::ifstream in(path);
  std::string l0, l1, l2;
  std::getline(in, l0);
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(l0 == "step,nll,ctr,total,dev_nll,dev_ctr");
  CHECK(l1 == "1,2.5,,2.5,,");
  CHECK(l2 == "2,1,0.5,1.5,1.25,0.75");
}
