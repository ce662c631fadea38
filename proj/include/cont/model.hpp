#pragma once

#include "cont/autograd.hpp"
#include "cont/batch.hpp"
#include "cont/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cont {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  double dropout_rate = 0.1;
  int vocab_size = 0;
  // Longest source or target sequence (tokens, excluding BOS) the model accepts.
  int max_len = 64;
  double label_smoothing = 0.0;

  void validate() const;
};

// Pooled sequence vector with its cached Euclidean norm.
struct Representation {
  Vector z;
  double norm = 0.0;

  Representation() = default;
  explicit Representation(Vector v) : z(std::move(v)), norm(z.norm()) {}
  int dim() const { return static_cast<int>(z.size()); }
};

// (batch x max_len x d) values; rows past lengths[i] are zero.
struct HiddenStates {
  std::vector<Matrix> values;
  std::vector<int> lengths;
  int max_len = 0;
  int dim = 0;

  int batch() const { return static_cast<int>(values.size()); }
  bool mask(int i, int j) const { return j < lengths[static_cast<std::size_t>(i)]; }
};

using Gradients = std::vector<Matrix>;

class Transformer {
 public:
  struct Bound {
    std::vector<Var> p;
  };
  struct DecoderVars {
    Var states;  // (L x d), final layer after the closing layer norm
    Var logits;  // (L x V)
  };

  Transformer(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int num_parameters() const;
  const std::vector<std::string>& parameter_names() const { return names_; }
  const std::vector<Matrix>& parameters() const { return params_; }
  std::vector<Matrix>& parameters() { return params_; }
  Gradients zero_gradients() const;

  // Leaves for every parameter on `tape`; grads may be null for forward-only use.
  Bound bind(Tape& tape, Gradients* grads) const;

  // Encoder states for one unpadded source. dropout_rng == nullptr disables dropout.
  Var encode_graph(Tape& tape, const Bound& b, std::span<const int> source, Rng* dropout_rng) const;
  // Teacher-forced decoder over `target` (no BOS). Position t is fed BOS for t == 0 and
  // target[t - 1] otherwise, so row t predicts target[t]. An empty target still
  // yields one position (BOS only).
  DecoderVars decode_graph(Tape& tape, const Bound& b, Var encoder_states, std::span<const int> target,
                           Rng* dropout_rng) const;

  HiddenStates encode(const PaddedBatch& batch) const;
  // Logits are (max_len x V) per row, zero past the row length (but position 0 is always
  // computed).
  std::pair<HiddenStates, std::vector<Matrix>> decode_teacher_forced(const HiddenStates& enc,
                                                                     const PaddedBatch& target) const;

  void check_ids(std::span<const int> ids) const;

 private:
  friend class IncrementalDecoder;

  struct AttnIdx {
    int q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  };
  struct EncLayerIdx {
    int ln1_g, ln1_b, ln2_g, ln2_b;
    AttnIdx self;
    int f1_w, f1_b, f2_w, f2_b;
  };
  struct DecLayerIdx {
    int ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    AttnIdx self, cross;
    int f1_w, f1_b, f2_w, f2_b;
  };

  int add_param(const std::string& name, Matrix value);
  AttnIdx add_attention(const std::string& prefix, Rng& rng);
  Var embed(Tape& t, const Bound& b, std::span<const int> ids, Rng* rng) const;
  Var attention_block(Tape& t, const Bound& b, const AttnIdx& a, Var query_in, Var kv_in, bool causal) const;
  Var ffn(Tape& t, const Bound& b, int w1, int b1, int w2, int b2, Var x, Rng* rng) const;

  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Matrix> params_;
  Matrix positions_;
  int embed_ = -1;
  std::vector<EncLayerIdx> enc_;
  std::vector<DecLayerIdx> dec_;
  int enc_ln_g_ = -1, enc_ln_b_ = -1, dec_ln_g_ = -1, dec_ln_b_ = -1, out_w_ = -1, out_b_ = -1;
};

// KV-cached decoding for one source without gradients. Hypotheses live in slots that
// form a prefix tree: each slot stores the key/value rows of the token it was fed and a
// parent link, so beams can fork without copying caches.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Transformer& model, std::span<const int> source);

  const Matrix& encoder_states() const { return enc_; }
  // Feeds tokens[i] after slot parents[i] (-1 = empty prefix) and returns the new slots.
  // log_probs receives next-token log-probabilities (n x V); states the final decoder
  // state of each fed token (n x d).
  std::vector<int> feed(std::span<const int> parents, std::span<const int> tokens, Matrix& log_probs,
                        Matrix& states);
  int depth(int slot) const { return slot < 0 ? 0 : slots_[static_cast<std::size_t>(slot)].depth; }

 private:
  struct Slot {
    int parent;
    int depth;  // tokens fed including this one
    Matrix keys;    // (layers x d)
    Matrix values;  // (layers x d)
  };

  const Transformer& model_;
  Matrix enc_;
  std::vector<Matrix> cross_k_, cross_v_;
  std::vector<Slot> slots_;
};

// Mean of token-level nll over non-PAD target positions; logits[i] row t predicts
// target(i, t).
double nll_loss(const std::vector<Matrix>& logits, const PaddedBatch& target);
// Mean over unmasked positions of row i. Throws ContractError for a fully masked row.
Representation pool_representation(const HiddenStates& h, int row);
std::vector<Representation> pool_representations(const HiddenStates& h);

constexpr double kNormFloor = 1e-8;
// Throws ContractError if either norm is below kNormFloor.
double cosine_similarity(const Representation& a, const Representation& b);
double cosine_similarity(const Vector& a, const Vector& b);

}  // namespace cont
