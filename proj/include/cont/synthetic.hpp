#pragma once

#include "cont/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cont {

enum class SyntheticTask { Copy, Reverse, Sort, NoisyTransduce };

const char* to_string(SyntheticTask t);
SyntheticTask parse_task(const std::string& s);

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::NoisyTransduce;
  // Distinct symbols. For noisy-transduce a fifth of them (at least one) are noise
  // symbols that only ever occur in sources.
  int vocab_size = 20;
  int min_len = 4;
  int max_len = 20;  // longest source
  double noise_rate = 0.15;
  int n_train = 10000;
  int n_dev = 1000;
  int n_test = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  int noise_symbols() const;
  int content_symbols() const { return vocab_size - noise_symbols(); }
};

struct SyntheticSplits {
  std::vector<TextPair> train, dev, test;
};

// Noisy-transduce: a clean sequence c over the content symbols; the target is c
// reversed with every symbol shifted by one (mod the content alphabet); the source is
// c with noise symbols inserted before tokens at rate noise_rate.
SyntheticSplits make_synthetic(const SyntheticTaskSpec& spec);
// Writes train.jsonl, dev.jsonl and test.jsonl into dir.
void write_synthetic(const SyntheticTaskSpec& spec, const std::string& dir);

}  // namespace cont
