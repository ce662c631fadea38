#include "cont/error.hpp"
#include "cont/oracle.hpp"
#include "support/gen.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

using namespace cont;
using cont::testing::Gen;

namespace {

oracle_ref::Words words(const TokenSequence& s) {
  oracle_ref::Words w;
  for (int t : s) {
    if (t != Vocab::kPad && t != Vocab::kBos && t != Vocab::kEos) w.push_back("w" + std::to_string(t));
  }
  return w;
}

}  // namespace

TEST_CASE("oracle end points") {
  const OracleConfig cfg;
  const TokenSequence a = {4, 5, 6, 7, 8};
  CHECK(oracle_score(a, a, cfg) == doctest::Approx(1.0));
  CHECK(oracle_score(TokenSequence{9, 10, 11}, a, cfg) == 0.0);
  bool empty = false;
  CHECK(oracle_score(TokenSequence{Vocab::kBos, Vocab::kEos}, a, cfg, &empty) == 0.0);
  CHECK(empty);
  // Specials are ignored on both sides.
  CHECK(oracle_score(TokenSequence{Vocab::kBos, 4, 5, 6, 7, 8, Vocab::kEos}, a, cfg) == doctest::Approx(1.0));
}

TEST_CASE("oracle agrees with the string reference implementation") {
  Gen g(41);
  for (int trial = 0; trial < 500; ++trial) {
    OracleConfig cfg;
    cfg.max_ngram = g.integer(1, 4);
    cfg.smoothing = g.coin() ? 1.0 : g.real(0.0, 2.0);
    const TokenSequence ref = g.tokens(1, 12, g.integer(2, 8));
    const TokenSequence cand = g.coin(0.2) ? ref : g.tokens(0, 14, g.integer(2, 8));
    const double got = oracle_score(cand, ref, cfg);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
    CHECK(got == doctest::Approx(oracle_ref::sentence_bleu(words(cand), words(ref), cfg.max_ngram, cfg.smoothing)).epsilon(1e-12));
  }
}

TEST_CASE("batched oracle equals the looped oracle") {
  Gen g(42);
  const OracleConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const TokenSequence ref = g.tokens(1, 15, 20);
    std::vector<TokenSequence> rows;
    const int n = g.integer(1, 10);
    for (int i = 0; i < n; ++i) {
      TokenSequence c = g.coin(0.1) ? TokenSequence{} : g.tokens(1, 15, 20);
      if (g.coin(0.3)) c.insert(c.begin(), Vocab::kBos);
      if (g.coin(0.3)) c.push_back(Vocab::kEos);
      rows.push_back(c);
    }
    int empty_rows = -1;
    const auto batch = batch_oracle_scores(PaddedBatch(rows), ref, cfg, &empty_rows);
    int expected_empty = 0;
    for (int i = 0; i < n; ++i) {
      bool e = false;
      CHECK(batch[static_cast<std::size_t>(i)] == doctest::Approx(oracle_score(rows[static_cast<std::size_t>(i)], ref, cfg, &e)).epsilon(1e-12));
      expected_empty += e ? 1 : 0;
    }
    CHECK(empty_rows == expected_empty);
  }
}

TEST_CASE("oracle config validation") {
  OracleConfig cfg;
  cfg.max_ngram = 0;
  CHECK_THROWS_AS(oracle_score(TokenSequence{4}, TokenSequence{4}, cfg), ContractError);
}
