#include "cont/vocab.hpp"

#include "cont/error.hpp"
#include "cont/hash.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace cont {

namespace {
const char* const kReservedTokens[] = {"<pad>", "<s>", "</s>", "<unk>"};
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) {
  for (const char* r : kReservedTokens) tokens_.emplace_back(r);
  tokens_.insert(tokens_.end(), words.begin(), words.end());
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw InputError("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::from_counts(const std::map<std::string, long>& counts) {
  std::vector<std::pair<std::string, long>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(items.size());
  for (auto& [w, c] : items) {
    if (std::find(std::begin(kReservedTokens), std::end(kReservedTokens), w) != std::end(kReservedTokens))
      continue;
    words.push_back(w);
  }
  return Vocab(words);
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw InputError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenSequence Vocab::encode(const std::string& text) const {
  TokenSequence ids;
  for (const auto& tok : split_whitespace(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::string Vocab::fingerprint() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return hex64(fnv1a64(joined));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocab file " + path);
  for (int i = kReserved; i < size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw IoError("failed writing vocab file " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocab file " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  return Vocab(words);
}

}  // namespace cont
