#pragma once

#include "cont/dataset.hpp"
#include "cont/decoding.hpp"
#include "cont/model.hpp"
#include "cont/synthetic.hpp"
#include "cont/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cont {

// Everything one experiment needs, read from a flat key=value file with dotted
// namespaces (model.*, beam.*, train.*, oracle.*, data.*, synthetic.*) plus the
// top-level keys mode, alpha and seed. model.vocab_size comes from the data.
struct ExperimentConfig {
  ModelConfig model;
  BeamConfig beam;
  TrainConfig train;
  DatasetSpec data;
  SyntheticTaskSpec synthetic;
  double alpha = 0.5;
  std::uint64_t seed = 1;

  // Field and cross-field checks; throws ConfigError naming the key.
  void validate() const;
  // Canonical key=value text of every setting.
  std::string to_text() const;
  // Canonical text of the model.* section; checkpoints record its hash.
  std::string model_text() const;
};

const std::vector<std::string>& config_keys();

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path);

}  // namespace cont
