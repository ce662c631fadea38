#pragma once

#include "cont/vocab.hpp"

#include <string>
#include <vector>

namespace cont {

struct TextPair {
  std::string source;
  std::string target;
};

struct Example {
  TokenSequence source;
  TokenSequence target;
};

using Dataset = std::vector<Example>;

enum class DatasetFormat { Jsonl, ParallelText };

struct DatasetSpec {
  DatasetFormat format = DatasetFormat::Jsonl;
  // For ParallelText each split path names a prefix; files are <prefix>.src/.tgt.
  std::string train, dev, test;
  std::string source_field = "source";
  std::string target_field = "target";
};

// One {"source": ..., "target": ...} object per line. Throws InputError on a record
// with an empty side.
std::vector<TextPair> read_jsonl(const std::string& path, const std::string& source_field = "source",
                                 const std::string& target_field = "target");
void write_jsonl(const std::string& path, const std::vector<TextPair>& pairs);
// Two line-aligned files.
std::vector<TextPair> read_parallel_text(const std::string& source_path, const std::string& target_path);

std::vector<TextPair> read_split(const DatasetSpec& spec, const std::string& path);

// Vocabulary over whitespace tokens of the given (training) pairs, both sides.
Vocab build_vocab(const std::vector<TextPair>& train);
Dataset encode_pairs(const Vocab& vocab, const std::vector<TextPair>& pairs);

}  // namespace cont
