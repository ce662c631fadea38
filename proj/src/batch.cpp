#include "cont/batch.hpp"

#include <algorithm>

namespace cont {

PaddedBatch::PaddedBatch(const std::vector<TokenSequence>& rows, int min_width) : max_len_(min_width) {
  for (const auto& r : rows) max_len_ = std::max(max_len_, static_cast<int>(r.size()));
  ids_.assign(rows.size() * static_cast<std::size_t>(max_len_), Vocab::kPad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), ids_.begin() + static_cast<std::ptrdiff_t>(i * max_len_));
    lengths_.push_back(static_cast<int>(rows[i].size()));
  }
}

}  // namespace cont
