#include "cont/oracle.hpp"

#include "cont/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cont {

void OracleConfig::validate() const {
  CONT_EXPECT(max_ngram >= 1, "oracle: max_ngram must be >= 1");
  CONT_EXPECT(smoothing >= 0.0, "oracle: smoothing must be >= 0");
}

TokenSequence strip_special(std::span<const int> ids) {
  TokenSequence out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (!Vocab::is_special(id)) out.push_back(id);
  }
  return out;
}

double combine_ngram_counts(std::span<const long> matches, std::span<const long> totals, long candidate_len,
                            long reference_len, const OracleConfig& cfg) {
  if (candidate_len == 0 || reference_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < matches.size(); ++n) {
    double p;
    if (n == 0) {
      if (matches[0] == 0) return 0.0;
      p = static_cast<double>(matches[0]) / static_cast<double>(totals[0]);
    } else {
      const double denom = static_cast<double>(totals[n]) + cfg.smoothing;
      if (denom <= 0.0) return 0.0;
      p = (static_cast<double>(matches[n]) + cfg.smoothing) / denom;
      if (p <= 0.0) return 0.0;
    }
    log_sum += std::log(p);
  }
  const double bp = candidate_len >= reference_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(reference_len) / static_cast<double>(candidate_len));
  return std::clamp(bp * std::exp(log_sum / static_cast<double>(matches.size())), 0.0, 1.0);
}

double oracle_score(std::span<const int> candidate, std::span<const int> reference, const OracleConfig& cfg,
                    bool* empty) {
  cfg.validate();
  const TokenSequence c = strip_special(candidate);
  const TokenSequence r = strip_special(reference);
  if (empty) *empty = c.empty() || r.empty();
  if (c.empty() || r.empty()) return 0.0;

  std::vector<long> matches(static_cast<std::size_t>(cfg.max_ngram), 0);
  std::vector<long> totals(static_cast<std::size_t>(cfg.max_ngram), 0);
  for (int n = 1; n <= cfg.max_ngram; ++n) {
    std::map<std::vector<int>, long> ref_counts;
    for (std::size_t i = 0; i + n <= r.size(); ++i) ref_counts[{r.begin() + i, r.begin() + i + n}]++;
    std::map<std::vector<int>, long> cand_counts;
    for (std::size_t i = 0; i + n <= c.size(); ++i) cand_counts[{c.begin() + i, c.begin() + i + n}]++;
    long m = 0, tot = 0;
    for (const auto& [g, cnt] : cand_counts) {
      tot += cnt;
      auto it = ref_counts.find(g);
      if (it != ref_counts.end()) m += std::min(cnt, it->second);
    }
    matches[static_cast<std::size_t>(n - 1)] = m;
    totals[static_cast<std::size_t>(n - 1)] = tot;
  }
  return combine_ngram_counts(matches, totals, static_cast<long>(c.size()), static_cast<long>(r.size()), cfg);
}

std::vector<double> batch_oracle_scores(const PaddedBatch& candidates, std::span<const int> reference,
                                        const OracleConfig& cfg, int* empty_rows) {
  cfg.validate();
  const int n = candidates.batch();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  if (empty_rows) *empty_rows = 0;
  if (n == 0) return out;

  // Compact away special tokens.
  std::vector<TokenSequence> rows(static_cast<std::size_t>(n));
  int width = 0;
  int vocab = 0;
  for (int i = 0; i < n; ++i) {
    rows[static_cast<std::size_t>(i)] = strip_special(candidates.row(i));
    width = std::max(width, static_cast<int>(rows[static_cast<std::size_t>(i)].size()));
    for (int id : rows[static_cast<std::size_t>(i)]) vocab = std::max(vocab, id + 1);
  }
  const TokenSequence ref = strip_special(reference);
  for (int id : ref) vocab = std::max(vocab, id + 1);
  const int ref_len = static_cast<int>(ref.size());
  if (ref_len == 0 || width == 0) {
    if (empty_rows) *empty_rows = n;
    return out;
  }

  // One-hot encodings; padded positions are all-zero rows.
  Matrix cand_hot = Matrix::Zero(static_cast<Eigen::Index>(n) * width, vocab);
  for (int i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < r.size(); ++j) cand_hot(static_cast<Eigen::Index>(i) * width + static_cast<Eigen::Index>(j), r[j]) = 1.0;
  }
  Matrix ref_hot = Matrix::Zero(ref_len, vocab);
  for (int j = 0; j < ref_len; ++j) ref_hot(j, ref[static_cast<std::size_t>(j)]) = 1.0;

  // Unigram equality against the reference for all candidates in one product:
  // cross(i * width + j, l) = [cand_i[j] == ref[l]].
  const Matrix cross = cand_hot * ref_hot.transpose();

  const int orders = cfg.max_ngram;
  std::vector<long> matches(static_cast<std::size_t>(orders)), totals(static_cast<std::size_t>(orders));
  for (int i = 0; i < n; ++i) {
    const int len = static_cast<int>(rows[static_cast<std::size_t>(i)].size());
    if (len == 0) {
      if (empty_rows) ++*empty_rows;
      continue;
    }
    const auto block = cand_hot.middleRows(static_cast<Eigen::Index>(i) * width, len);
    const Matrix self1 = block * block.transpose();
    const Matrix cross1 = cross.middleRows(static_cast<Eigen::Index>(i) * width, len);
    Matrix self_k = self1, cross_k = cross1;
    for (int k = 1; k <= orders; ++k) {
      const int cand_grams = len - k + 1;
      const int ref_grams = ref_len - k + 1;
      if (k > 1 && cand_grams > 0) {
        // Extend (k-1)-gram equality by one shifted unigram equality.
        self_k = (self_k.topLeftCorner(cand_grams, cand_grams).array() *
                  self1.block(k - 1, k - 1, cand_grams, cand_grams).array()).matrix().eval();
        if (ref_grams > 0) {
          cross_k = (cross_k.topLeftCorner(cand_grams, ref_grams).array() *
                     cross1.block(k - 1, k - 1, cand_grams, ref_grams).array()).matrix().eval();
        }
      }
      long m = 0;
      if (cand_grams > 0 && ref_grams > 0) {
        const Vector ref_count = cross_k.topLeftCorner(cand_grams, ref_grams).rowwise().sum();
        for (int j = 0; j < cand_grams; ++j) {
          // Occurrence index of n-gram j among equal n-grams at positions <= j.
          const double occurrence = self_k.row(j).head(j + 1).sum();
          if (occurrence <= ref_count(j)) ++m;
        }
      }
      matches[static_cast<std::size_t>(k - 1)] = m;
      totals[static_cast<std::size_t>(k - 1)] = std::max(cand_grams, 0);
    }
    out[static_cast<std::size_t>(i)] = combine_ngram_counts(matches, totals, len, ref_len, cfg);
  }
  return out;
}

}  // namespace cont
