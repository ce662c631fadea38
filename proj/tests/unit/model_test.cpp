#include "cont/error.hpp"
#include "cont/model.hpp"
#include "support/gen.hpp"
#include "support/gradcheck.hpp"

#include <doctest.h>

using namespace cont;
using cont::testing::Gen;

TEST_CASE("model construction is deterministic per seed") {
  const ModelConfig mc = cont::testing::tiny_model_config();
  const Transformer a(mc, 5), b(mc, 5), c(mc, 6);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i] == b.parameters()[i]);
    any_diff = any_diff || a.parameters()[i] != c.parameters()[i];
  }
  CHECK(any_diff);
  long total = 0;
  for (const auto& p : a.parameters()) total += p.size();
  CHECK(total == a.num_parameters());
}

TEST_CASE("config validation") {
  ModelConfig mc = cont::testing::tiny_model_config();
  mc.n_heads = 3;
  CHECK_THROWS_AS(mc.validate(), ContractError);
  mc = cont::testing::tiny_model_config();
  mc.dropout_rate = 1.0;
  CHECK_THROWS_AS(mc.validate(), ContractError);
}

TEST_CASE("invalid ids and lengths are rejected") {
  const Transformer m(cont::testing::tiny_model_config(), 1);
  Tape t(false);
  const auto b = m.bind(t, nullptr);
  const std::vector<int> bad = {4, 99};
  CHECK_THROWS_AS(m.encode_graph(t, b, bad, nullptr), InputError);
  const std::vector<int> too_long(30, 5);
  CHECK_THROWS_AS(m.encode_graph(t, b, too_long, nullptr), InputError);
  CHECK_THROWS_AS(m.encode_graph(t, b, std::vector<int>{}, nullptr), ContractError);
}

TEST_CASE("incremental decoding matches teacher forcing") {
  Gen g(21);
  const ModelConfig mc = cont::testing::tiny_model_config(14, 16);
  const Transformer m(mc, 3);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenSequence src = g.tokens(1, 9, 10);
    const TokenSequence tgt = g.tokens(1, 8, 10);
    Tape t(false);
    const auto b = m.bind(t, nullptr);
    Var enc = m.encode_graph(t, b, src, nullptr);
    const auto dv = m.decode_graph(t, b, enc, tgt, nullptr);
    const Matrix& logits = t.value(dv.logits);
    const Matrix& states = t.value(dv.states);

    IncrementalDecoder dec(m, src);
    CHECK((dec.encoder_states() - t.value(enc)).cwiseAbs().maxCoeff() < 1e-10);
    int slot = -1;
    Matrix lp, st;
    for (std::size_t pos = 0; pos < tgt.size(); ++pos) {
      const int tok = pos == 0 ? Vocab::kBos : tgt[pos - 1];
      slot = dec.feed(std::span<const int>(&slot, 1), std::span<const int>(&tok, 1), lp, st)[0];
      RowVector ref = logits.row(static_cast<Eigen::Index>(pos));
      ref = cont::testing::log_softmax(ref);
      CHECK((lp.row(0) - ref).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((st.row(0) - states.row(static_cast<Eigen::Index>(pos))).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(dec.depth(slot) == static_cast<int>(pos) + 1);
    }
  }
}

TEST_CASE("batched helpers agree with per-example graphs") {
  Gen g(22);
  const Transformer m(cont::testing::tiny_model_config(14, 16), 4);
  std::vector<TokenSequence> srcs, tgts;
  for (int i = 0; i < 4; ++i) {
    srcs.push_back(g.tokens(1, 7, 10));
    tgts.push_back(g.tokens(1, 6, 10));
  }
  const PaddedBatch xs(srcs), ys(tgts);
  const HiddenStates enc = m.encode(xs);
  const auto [dec, logits] = m.decode_teacher_forced(enc, ys);
  double nll_sum = 0.0;
  long count = 0;
  for (int i = 0; i < 4; ++i) {
    Tape t(false);
    const auto b = m.bind(t, nullptr);
    Var e = m.encode_graph(t, b, srcs[static_cast<std::size_t>(i)], nullptr);
    const auto dv = m.decode_graph(t, b, e, tgts[static_cast<std::size_t>(i)], nullptr);
    nll_sum += t.value(ag::cross_entropy_sum(t, dv.logits, tgts[static_cast<std::size_t>(i)], 1.0))(0, 0);
    count += static_cast<long>(tgts[static_cast<std::size_t>(i)].size());
    const Representation pooled = pool_representation(dec, i);
    const Vector direct = t.value(ag::mean_rows(t, dv.states)).row(0).transpose();
    CHECK((pooled.z - direct).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(nll_loss(logits, ys) == doctest::Approx(nll_sum / count).epsilon(1e-10));
  CHECK_THROWS_AS(m.decode_teacher_forced(enc, PaddedBatch(std::vector<TokenSequence>{tgts[0]})), ContractError);
}

TEST_CASE("uniform logits give nll ln V") {
  ModelConfig mc = cont::testing::tiny_model_config(17, 8);
  Transformer m(mc, 1);
  auto& names = m.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == "out.w" || names[i] == "out.b") m.parameters()[i].setZero();
  }
  const PaddedBatch xs(std::vector<TokenSequence>{{4, 5, 6}, {7}});
  const PaddedBatch ys(std::vector<TokenSequence>{{8, 9}, {10, 11, 12}});
  const auto out = m.decode_teacher_forced(m.encode(xs), ys);
  CHECK(std::abs(nll_loss(out.second, ys) - std::log(17.0)) < 1e-6);
}

TEST_CASE("pooling and cosine contracts") {
  HiddenStates h;
  h.values = {Matrix::Zero(3, 2)};
  h.lengths = {0};
  h.max_len = 3;
  h.dim = 2;
  CHECK_THROWS_AS(pool_representation(h, 0), ContractError);
  const Representation zero(Vector::Zero(3)), one(Vector::Ones(3));
  CHECK_THROWS_AS(cosine_similarity(zero, one), ContractError);

  Gen g(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = g.integer(1, 12);
    const Representation a = g.rep(d), b = g.rep(d);
    const double c = cosine_similarity(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(c == doctest::Approx(cosine_similarity(b, a)));
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("nll gradient on a small model") {
  Gen g(24);
  Transformer m(cont::testing::tiny_model_config(), 8);
  TrainConfig cfg;
  cfg.mode = BaselineMode::MLE;
  Example ex{g.tokens(2, 6, 8), g.tokens(2, 5, 8)};
  ex.target.push_back(Vocab::kEos);
  const auto r = cont::testing::check_objective_gradients(m, ex, nullptr, cfg, 1.0, 60, g);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < 1e-3);
}
