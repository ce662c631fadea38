#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cont {

using TokenSequence = std::vector<int>;

// Whitespace-token vocabulary with four reserved ids at the front.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocab();
  // Words in id order after the reserved block. Duplicates are rejected.
  explicit Vocab(const std::vector<std::string>& words);

  // Frequency-sorted (descending, then lexicographic) over the given token counts.
  static Vocab from_counts(const std::map<std::string, long>& counts);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  static bool is_special(int id) { return id >= 0 && id < kReserved && id != kUnk; }

  TokenSequence encode(const std::string& text) const;
  // Drops PAD/BOS/EOS; UNK renders as "<unk>".
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::string fingerprint() const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace cont
