#pragma once

#include "cont/config.hpp"
#include "cont/training.hpp"
#include "cont/vocab.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace cont {

inline constexpr int kCheckpointVersion = 1;

// Directory layout: weights.bin, optimizer.bin, vocab.txt, manifest.json and the
// experiment config as config.txt. Doubles are stored raw, so a round trip is exact.
void save_checkpoint(const std::string& dir, const TrainState& state, const Vocab& vocab, const ExperimentConfig& cfg);

struct Checkpoint {
  TrainState state;
  Vocab vocab;
  ModelConfig model;
  nlohmann::json manifest;
};

struct LoadOptions {
  // Model section the caller expects; compared by hash with the manifest.
  std::optional<ModelConfig> expected_model;
  // Vocabulary fingerprint the caller expects.
  std::optional<std::string> expected_vocab_hash;
  // Accept mismatches. The checkpoint's own model config is used.
  bool force = false;
};

Checkpoint load_checkpoint(const std::string& dir, const LoadOptions& opts = {});
nlohmann::json read_manifest(const std::string& dir);

std::string model_config_hash(const ModelConfig& m);
std::string vocab_hash(const Vocab& v);

}  // namespace cont
