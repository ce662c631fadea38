#include "cont/synthetic.hpp"

#include "cont/error.hpp"
#include "cont/tensor.hpp"

#include <algorithm>
#include <filesystem>

namespace cont {

namespace {

std::string symbol(int i) { return "t" + std::to_string(i); }
std::string noise_symbol(int i) { return "z" + std::to_string(i); }

std::string join(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

TextPair sample(const SyntheticTaskSpec& spec, Rng& rng) {
  const int k = spec.task == SyntheticTask::NoisyTransduce ? spec.content_symbols() : spec.vocab_size;
  const int len = spec.min_len + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.max_len - spec.min_len + 1)));
  std::vector<int> clean(static_cast<std::size_t>(len));
  for (int& c : clean) c = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k)));

  std::vector<std::string> src, tgt;
  switch (spec.task) {
    case SyntheticTask::Copy:
      for (int c : clean) src.push_back(symbol(c));
      tgt = src;
      break;
    case SyntheticTask::Reverse:
      for (int c : clean) src.push_back(symbol(c));
      tgt.assign(src.rbegin(), src.rend());
      break;
    case SyntheticTask::Sort: {
      for (int c : clean) src.push_back(symbol(c));
      auto sorted = clean;
      std::sort(sorted.begin(), sorted.end());
      for (int c : sorted) tgt.push_back(symbol(c));
      break;
    }
    case SyntheticTask::NoisyTransduce: {
      for (auto it = clean.rbegin(); it != clean.rend(); ++it) tgt.push_back(symbol((*it + 1) % k));
      const int room = spec.max_len - len;
      int inserted = 0;
      for (int c : clean) {
        if (inserted < room && uniform01(rng) < spec.noise_rate) {
          src.push_back(noise_symbol(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.noise_symbols())))));
          ++inserted;
        }
        src.push_back(symbol(c));
      }
      break;
    }
  }
  return {join(src), join(tgt)};
}

}  // namespace

const char* to_string(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::Copy: return "copy";
    case SyntheticTask::Reverse: return "reverse";
    case SyntheticTask::Sort: return "sort";
    case SyntheticTask::NoisyTransduce: return "noisy-transduce";
  }
  return "?";
}

SyntheticTask parse_task(const std::string& s) {
  for (auto t : {SyntheticTask::Copy, SyntheticTask::Reverse, SyntheticTask::Sort, SyntheticTask::NoisyTransduce}) {
    if (s == to_string(t)) return t;
  }
  throw ConfigError("unknown synthetic task '" + s + "'", "synthetic.task");
}

int SyntheticTaskSpec::noise_symbols() const {
  return task == SyntheticTask::NoisyTransduce ? std::max(1, vocab_size / 5) : 0;
}

void SyntheticTaskSpec::validate() const {
  const int min_vocab = task == SyntheticTask::NoisyTransduce ? 3 : 1;
  if (vocab_size < min_vocab) throw ConfigError("synthetic.vocab_size too small", "synthetic.vocab_size");
  if (min_len < 1) throw ConfigError("synthetic.min_len must be >= 1", "synthetic.min_len");
  if (max_len < min_len) throw ConfigError("synthetic.max_len must be >= synthetic.min_len", "synthetic.max_len");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw ConfigError("synthetic.noise_rate must lie in [0, 1)", "synthetic.noise_rate");
  if (n_train < 1) throw ConfigError("synthetic.n_train must be >= 1", "synthetic.n_train");
  if (n_dev < 0) throw ConfigError("synthetic.n_dev must be >= 0", "synthetic.n_dev");
  if (n_test < 0) throw ConfigError("synthetic.n_test must be >= 0", "synthetic.n_test");
}

SyntheticSplits make_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticSplits out;
  const auto fill = [&](std::vector<TextPair>& split, int n, std::uint64_t stream) {
    Rng rng(mix_seed(spec.seed, stream));
    split.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) split.push_back(sample(spec, rng));
  };
  fill(out.train, spec.n_train, 1);
  fill(out.dev, spec.n_dev, 2);
  fill(out.test, spec.n_test, 3);
  return out;
}

void write_synthetic(const SyntheticTaskSpec& spec, const std::string& dir) {
  const auto splits = make_synthetic(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  write_jsonl(dir + "/train.jsonl", splits.train);
  write_jsonl(dir + "/dev.jsonl", splits.dev);
  write_jsonl(dir + "/test.jsonl", splits.test);
}

}  // namespace cont
