#include "cont/dataset.hpp"

#include "cont/error.hpp"

#include <json.hpp>

#include <fstream>
#include <map>

namespace cont {

std::vector<TextPair> read_jsonl(const std::string& path, const std::string& source_field,
                                 const std::string& target_field) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset " + path);
  std::vector<TextPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!j.contains(source_field) || !j.contains(target_field) || !j[source_field].is_string() ||
        !j[target_field].is_string())
      throw InputError(path + ":" + std::to_string(lineno) + ": record needs string fields '" + source_field +
                       "' and '" + target_field + "'");
    TextPair p{j[source_field].get<std::string>(), j[target_field].get<std::string>()};
    if (split_whitespace(p.source).empty() || split_whitespace(p.target).empty())
      throw InputError(path + ":" + std::to_string(lineno) + ": empty source or target");
    out.push_back(std::move(p));
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<TextPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["source"] = p.source;
    j["target"] = p.target;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing dataset " + path);
}

std::vector<TextPair> read_parallel_text(const std::string& source_path, const std::string& target_path) {
  std::ifstream src(source_path), tgt(target_path);
  if (!src) throw IoError("cannot read " + source_path);
  if (!tgt) throw IoError("cannot read " + target_path);
  std::vector<TextPair> out;
  std::string s, t;
  int lineno = 0;
  while (true) {
    const bool a = static_cast<bool>(std::getline(src, s));
    const bool b = static_cast<bool>(std::getline(tgt, t));
    if (!a && !b) break;
    ++lineno;
    if (a != b) throw InputError("parallel text files differ in line count at line " + std::to_string(lineno));
    if (split_whitespace(s).empty() || split_whitespace(t).empty())
      throw InputError("parallel text line " + std::to_string(lineno) + ": empty source or target");
    out.push_back({s, t});
  }
  return out;
}

std::vector<TextPair> read_split(const DatasetSpec& spec, const std::string& path) {
  if (spec.format == DatasetFormat::ParallelText) return read_parallel_text(path + ".src", path + ".tgt");
  return read_jsonl(path, spec.source_field, spec.target_field);
}

Vocab build_vocab(const std::vector<TextPair>& train) {
  if (train.empty()) throw InputError("build_vocab: empty training set");
  std::map<std::string, long> counts;
  for (const auto& p : train) {
    for (const auto& t : split_whitespace(p.source)) counts[t]++;
    for (const auto& t : split_whitespace(p.target)) counts[t]++;
  }
  return Vocab::from_counts(counts);
}

Dataset encode_pairs(const Vocab& vocab, const std::vector<TextPair>& pairs) {
  Dataset out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    Example e{vocab.encode(p.source), vocab.encode(p.target)};
    e.target.push_back(Vocab::kEos);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace cont
