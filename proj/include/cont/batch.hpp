#pragma once

#include "cont/vocab.hpp"

#include <span>
#include <vector>

namespace cont {

// Row-major (batch x max_len) token ids; positions at or past lengths[i] hold PAD.
class PaddedBatch {
 public:
  PaddedBatch() = default;
  explicit PaddedBatch(const std::vector<TokenSequence>& rows, int min_width = 0);

  int batch() const { return static_cast<int>(lengths_.size()); }
  int max_len() const { return max_len_; }
  int length(int i) const { return lengths_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& lengths() const { return lengths_; }
  int id(int i, int j) const { return ids_[static_cast<std::size_t>(i * max_len_ + j)]; }
  bool mask(int i, int j) const { return j < length(i); }
  // Unpadded prefix of row i.
  std::span<const int> row(int i) const {
    return {ids_.data() + static_cast<std::size_t>(i * max_len_), static_cast<std::size_t>(length(i))};
  }
  TokenSequence row_copy(int i) const {
    auto r = row(i);
    return {r.begin(), r.end()};
  }

 private:
  std::vector<int> ids_;
  std::vector<int> lengths_;
  int max_len_ = 0;
};

}  // namespace cont
