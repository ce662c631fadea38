#include "cont/model.hpp"

#include "cont/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cont {

namespace {

double normal(Rng& rng) {
  // Box-Muller over the portable uniform so initialization is library independent.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Matrix xavier(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * a;
  return m;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps = 1e-5) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + eps);
    out.row(r) = ((x.row(r).array() - mean) * rstd) * gain.row(0).array() + bias.row(0).array();
  }
  return out;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// One query row against keys/values (L x d), all positions visible.
RowVector attend(const RowVector& q, const Matrix& k, const Matrix& v, int heads) {
  const Eigen::Index d = q.size();
  const Eigen::Index dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  RowVector out(d);
  for (int h = 0; h < heads; ++h) {
    RowVector s = q.segment(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * inv;
    const double mx = s.maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      s(j) = std::exp(s(j) - mx);
      z += s(j);
    }
    s /= z;
    out.segment(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  CONT_EXPECT(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "model: d_model must be divisible by n_heads");
  CONT_EXPECT(n_layers >= 1 && ffn_dim >= 1, "model: n_layers and ffn_dim must be positive");
  CONT_EXPECT(dropout_rate >= 0.0 && dropout_rate < 1.0, "model: dropout_rate must lie in [0, 1)");
  CONT_EXPECT(vocab_size > Vocab::kReserved, "model: vocab_size must exceed the reserved ids");
  CONT_EXPECT(max_len >= 1, "model: max_len must be positive");
  CONT_EXPECT(label_smoothing >= 0.0 && label_smoothing < 1.0, "model: label_smoothing must lie in [0, 1)");
}

int Transformer::add_param(const std::string& name, Matrix value) {
  names_.push_back(name);
  params_.push_back(std::move(value));
  return static_cast<int>(params_.size()) - 1;
}

Transformer::AttnIdx Transformer::add_attention(const std::string& p, Rng& rng) {
  const int d = cfg_.d_model;
  AttnIdx a{};
  a.q_w = add_param(p + ".q.w", xavier(d, d, rng));
  a.q_b = add_param(p + ".q.b", Matrix::Zero(1, d));
  a.k_w = add_param(p + ".k.w", xavier(d, d, rng));
  a.k_b = add_param(p + ".k.b", Matrix::Zero(1, d));
  a.v_w = add_param(p + ".v.w", xavier(d, d, rng));
  a.v_b = add_param(p + ".v.b", Matrix::Zero(1, d));
  a.o_w = add_param(p + ".o.w", xavier(d, d, rng));
  a.o_b = add_param(p + ".o.b", Matrix::Zero(1, d));
  return a;
}

Transformer::Transformer(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x4d4f44454cULL));
  const int d = cfg_.d_model;
  const int f = cfg_.ffn_dim;
  const auto ones = [d] { return Matrix::Ones(1, d); };
  const auto zeros = [d] { return Matrix::Zero(1, d); };

  Matrix emb(cfg_.vocab_size, d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = normal(rng) * sd;
  embed_ = add_param("embed", std::move(emb));

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncLayerIdx e{};
    e.ln1_g = add_param(p + ".ln1.g", ones());
    e.ln1_b = add_param(p + ".ln1.b", zeros());
    e.self = add_attention(p + ".self", rng);
    e.ln2_g = add_param(p + ".ln2.g", ones());
    e.ln2_b = add_param(p + ".ln2.b", zeros());
    e.f1_w = add_param(p + ".ffn1.w", xavier(d, f, rng));
    e.f1_b = add_param(p + ".ffn1.b", Matrix::Zero(1, f));
    e.f2_w = add_param(p + ".ffn2.w", xavier(f, d, rng));
    e.f2_b = add_param(p + ".ffn2.b", zeros());
    enc_.push_back(e);
  }
  enc_ln_g_ = add_param("enc.ln.g", ones());
  enc_ln_b_ = add_param("enc.ln.b", zeros());

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecLayerIdx e{};
    e.ln1_g = add_param(p + ".ln1.g", ones());
    e.ln1_b = add_param(p + ".ln1.b", zeros());
    e.self = add_attention(p + ".self", rng);
    e.ln2_g = add_param(p + ".ln2.g", ones());
    e.ln2_b = add_param(p + ".ln2.b", zeros());
    e.cross = add_attention(p + ".cross", rng);
    e.ln3_g = add_param(p + ".ln3.g", ones());
    e.ln3_b = add_param(p + ".ln3.b", zeros());
    e.f1_w = add_param(p + ".ffn1.w", xavier(d, f, rng));
    e.f1_b = add_param(p + ".ffn1.b", Matrix::Zero(1, f));
    e.f2_w = add_param(p + ".ffn2.w", xavier(f, d, rng));
    e.f2_b = add_param(p + ".ffn2.b", zeros());
    dec_.push_back(e);
  }
  dec_ln_g_ = add_param("dec.ln.g", ones());
  dec_ln_b_ = add_param("dec.ln.b", zeros());
  out_w_ = add_param("out.w", xavier(d, cfg_.vocab_size, rng));
  out_b_ = add_param("out.b", Matrix::Zero(1, cfg_.vocab_size));

  // Sinusoidal positions; one spare row for the BOS-shifted decoder input.
  positions_.resize(cfg_.max_len + 2, d);
  for (int pos = 0; pos < positions_.rows(); ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      positions_(pos, i) = std::sin(angle);
      if (i + 1 < d) positions_(pos, i + 1) = std::cos(angle);
    }
  }
}

int Transformer::num_parameters() const {
  long n = 0;
  for (const auto& p : params_) n += p.size();
  return static_cast<int>(n);
}

Gradients Transformer::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.push_back(Matrix::Zero(p.rows(), p.cols()));
  return g;
}

Transformer::Bound Transformer::bind(Tape& tape, Gradients* grads) const {
  Bound b;
  b.p.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    b.p.push_back(tape.parameter(params_[i], grads ? &(*grads)[i] : nullptr));
  return b;
}

void Transformer::check_ids(std::span<const int> ids) const {
  if (static_cast<int>(ids.size()) > cfg_.max_len)
    throw InputError("sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                     std::to_string(cfg_.max_len));
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab_size)
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(cfg_.vocab_size));
  }
}

Var Transformer::embed(Tape& t, const Bound& b, std::span<const int> ids, Rng* rng) const {
  Var x = ag::embedding(t, b.p[embed_], ids);
  x = ag::scale(t, x, std::sqrt(static_cast<double>(cfg_.d_model)));
  x = ag::add_constant(t, x, positions_.topRows(static_cast<Eigen::Index>(ids.size())));
  return ag::dropout(t, x, cfg_.dropout_rate, rng);
}

Var Transformer::attention_block(Tape& t, const Bound& b, const AttnIdx& a, Var query_in, Var kv_in,
                                 bool causal) const {
  Var q = ag::linear(t, query_in, b.p[a.q_w], b.p[a.q_b]);
  Var k = ag::linear(t, kv_in, b.p[a.k_w], b.p[a.k_b]);
  Var v = ag::linear(t, kv_in, b.p[a.v_w], b.p[a.v_b]);
  Var o = ag::attention(t, q, k, v, cfg_.n_heads, causal);
  return ag::linear(t, o, b.p[a.o_w], b.p[a.o_b]);
}

Var Transformer::ffn(Tape& t, const Bound& b, int w1, int b1, int w2, int b2, Var x, Rng* rng) const {
  Var h = ag::relu(t, ag::linear(t, x, b.p[w1], b.p[b1]));
  return ag::dropout(t, ag::linear(t, h, b.p[w2], b.p[b2]), cfg_.dropout_rate, rng);
}

Var Transformer::encode_graph(Tape& t, const Bound& b, std::span<const int> source, Rng* rng) const {
  CONT_EXPECT(!source.empty(), "encode: empty source sequence");
  check_ids(source);
  Var x = embed(t, b, source, rng);
  for (const auto& e : enc_) {
    Var h = ag::layer_norm(t, x, b.p[e.ln1_g], b.p[e.ln1_b]);
    x = ag::add(t, x, ag::dropout(t, attention_block(t, b, e.self, h, h, false), cfg_.dropout_rate, rng));
    h = ag::layer_norm(t, x, b.p[e.ln2_g], b.p[e.ln2_b]);
    x = ag::add(t, x, ffn(t, b, e.f1_w, e.f1_b, e.f2_w, e.f2_b, h, rng));
  }
  return ag::layer_norm(t, x, b.p[enc_ln_g_], b.p[enc_ln_b_]);
}

Transformer::DecoderVars Transformer::decode_graph(Tape& t, const Bound& b, Var enc, std::span<const int> target,
                                                   Rng* rng) const {
  check_ids(target);
  std::vector<int> inputs;
  inputs.reserve(target.size() + 1);
  inputs.push_back(Vocab::kBos);
  for (std::size_t i = 0; i + 1 < target.size(); ++i) inputs.push_back(target[i]);

  Var x = embed(t, b, inputs, rng);
  for (const auto& e : dec_) {
    Var h = ag::layer_norm(t, x, b.p[e.ln1_g], b.p[e.ln1_b]);
    x = ag::add(t, x, ag::dropout(t, attention_block(t, b, e.self, h, h, true), cfg_.dropout_rate, rng));
    h = ag::layer_norm(t, x, b.p[e.ln2_g], b.p[e.ln2_b]);
    x = ag::add(t, x, ag::dropout(t, attention_block(t, b, e.cross, h, enc, false), cfg_.dropout_rate, rng));
    h = ag::layer_norm(t, x, b.p[e.ln3_g], b.p[e.ln3_b]);
    x = ag::add(t, x, ffn(t, b, e.f1_w, e.f1_b, e.f2_w, e.f2_b, h, rng));
  }
  Var states = ag::layer_norm(t, x, b.p[dec_ln_g_], b.p[dec_ln_b_]);
  Var logits = ag::linear(t, states, b.p[out_w_], b.p[out_b_]);
  return {states, logits};
}

HiddenStates Transformer::encode(const PaddedBatch& batch) const {
  HiddenStates out;
  out.max_len = batch.max_len();
  out.dim = cfg_.d_model;
  for (int i = 0; i < batch.batch(); ++i) {
    Tape tape(false);
    const Bound b = bind(tape, nullptr);
    Var h = encode_graph(tape, b, batch.row(i), nullptr);
    Matrix padded = Matrix::Zero(out.max_len, out.dim);
    padded.topRows(batch.length(i)) = tape.value(h);
    out.values.push_back(std::move(padded));
    out.lengths.push_back(batch.length(i));
  }
  return out;
}

std::pair<HiddenStates, std::vector<Matrix>> Transformer::decode_teacher_forced(const HiddenStates& enc,
                                                                               const PaddedBatch& target) const {
  if (enc.batch() != target.batch())
    throw ContractError("decode_teacher_forced: encoder batch " + std::to_string(enc.batch()) +
                        " != target batch " + std::to_string(target.batch()));
  HiddenStates states;
  states.max_len = std::max(target.max_len(), 1);
  states.dim = cfg_.d_model;
  std::vector<Matrix> logits;
  for (int i = 0; i < target.batch(); ++i) {
    Tape tape(false);
    const Bound b = bind(tape, nullptr);
    Var e = tape.constant(enc.values[static_cast<std::size_t>(i)].topRows(enc.lengths[static_cast<std::size_t>(i)]));
    auto dv = decode_graph(tape, b, e, target.row(i), nullptr);
    const Eigen::Index n = tape.value(dv.states).rows();
    Matrix s = Matrix::Zero(states.max_len, states.dim);
    s.topRows(n) = tape.value(dv.states);
    Matrix l = Matrix::Zero(states.max_len, cfg_.vocab_size);
    l.topRows(n) = tape.value(dv.logits);
    states.values.push_back(std::move(s));
    states.lengths.push_back(static_cast<int>(n));
    logits.push_back(std::move(l));
  }
  return {std::move(states), std::move(logits)};
}

IncrementalDecoder::IncrementalDecoder(const Transformer& model, std::span<const int> source) : model_(model) {
  Tape tape(false);
  const auto b = model.bind(tape, nullptr);
  enc_ = tape.value(model.encode_graph(tape, b, source, nullptr));
  const auto& p = model.params_;
  for (const auto& e : model.dec_) {
    cross_k_.push_back(affine(enc_, p[e.cross.k_w], p[e.cross.k_b]));
    cross_v_.push_back(affine(enc_, p[e.cross.v_w], p[e.cross.v_b]));
  }
}

std::vector<int> IncrementalDecoder::feed(std::span<const int> parents, std::span<const int> tokens,
                                          Matrix& log_probs, Matrix& states) {
  CONT_EXPECT(parents.size() == tokens.size(), "feed: parents/tokens size mismatch");
  const auto& cfg = model_.cfg_;
  const auto& p = model_.params_;
  const int d = cfg.d_model;
  const int layers = cfg.n_layers;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  model_.check_ids(tokens);

  Matrix x(n, d);
  std::vector<int> pos(tokens.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    pos[i] = depth(parents[i]);
    CONT_EXPECT(pos[i] < model_.positions_.rows(), "feed: sequence exceeds positional table");
    x.row(i) = p[model_.embed_].row(tokens[i]) * std::sqrt(static_cast<double>(d)) + model_.positions_.row(pos[i]);
  }

  std::vector<Slot> fresh(tokens.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    fresh[i].parent = parents[i];
    fresh[i].depth = pos[i] + 1;
    fresh[i].keys.resize(layers, d);
    fresh[i].values.resize(layers, d);
  }

  for (int l = 0; l < layers; ++l) {
    const auto& e = model_.dec_[static_cast<std::size_t>(l)];
    Matrix a = layer_norm_rows(x, p[e.ln1_g], p[e.ln1_b]);
    const Matrix q = affine(a, p[e.self.q_w], p[e.self.q_b]);
    const Matrix k = affine(a, p[e.self.k_w], p[e.self.k_b]);
    const Matrix v = affine(a, p[e.self.v_w], p[e.self.v_b]);
    Matrix o(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int len = pos[i] + 1;
      Matrix keys(len, d), vals(len, d);
      keys.row(len - 1) = k.row(i);
      vals.row(len - 1) = v.row(i);
      int s = parents[i];
      for (int r = len - 2; r >= 0; --r, s = slots_[static_cast<std::size_t>(s)].parent) {
        keys.row(r) = slots_[static_cast<std::size_t>(s)].keys.row(l);
        vals.row(r) = slots_[static_cast<std::size_t>(s)].values.row(l);
      }
      o.row(i) = attend(q.row(i), keys, vals, cfg.n_heads);
      fresh[static_cast<std::size_t>(i)].keys.row(l) = k.row(i);
      fresh[static_cast<std::size_t>(i)].values.row(l) = v.row(i);
    }
    x += affine(o, p[e.self.o_w], p[e.self.o_b]);

    a = layer_norm_rows(x, p[e.ln2_g], p[e.ln2_b]);
    const Matrix cq = affine(a, p[e.cross.q_w], p[e.cross.q_b]);
    for (Eigen::Index i = 0; i < n; ++i)
      o.row(i) = attend(cq.row(i), cross_k_[static_cast<std::size_t>(l)], cross_v_[static_cast<std::size_t>(l)], cfg.n_heads);
    x += affine(o, p[e.cross.o_w], p[e.cross.o_b]);

    a = layer_norm_rows(x, p[e.ln3_g], p[e.ln3_b]);
    const Matrix h = affine(a, p[e.f1_w], p[e.f1_b]).cwiseMax(0.0);
    x += affine(h, p[e.f2_w], p[e.f2_b]);
  }
  states = layer_norm_rows(x, p[model_.dec_ln_g_], p[model_.dec_ln_b_]);
  log_probs = affine(states, p[model_.out_w_], p[model_.out_b_]);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = log_probs.row(i).maxCoeff();
    const double lse = mx + std::log((log_probs.row(i).array() - mx).exp().sum());
    log_probs.row(i).array() -= lse;
  }

  std::vector<int> ids;
  ids.reserve(fresh.size());
  for (auto& s : fresh) {
    ids.push_back(static_cast<int>(slots_.size()));
    slots_.push_back(std::move(s));
  }
  return ids;
}

double nll_loss(const std::vector<Matrix>& logits, const PaddedBatch& target) {
  if (static_cast<int>(logits.size()) != target.batch()) throw ContractError("nll_loss: batch size mismatch");
  double total = 0.0;
  long count = 0;
  for (int i = 0; i < target.batch(); ++i) {
    const Matrix& l = logits[static_cast<std::size_t>(i)];
    if (l.rows() < target.length(i)) throw ContractError("nll_loss: logits shorter than target");
    for (int t = 0; t < target.length(i); ++t) {
      const int y = target.id(i, t);
      if (y < 0 || y >= l.cols()) throw ContractError("nll_loss: target id outside logits");
      const double mx = l.row(t).maxCoeff();
      const double lse = mx + std::log((l.row(t).array() - mx).exp().sum());
      total += lse - l(t, y);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

Representation pool_representation(const HiddenStates& h, int row) {
  CONT_EXPECT(row >= 0 && row < h.batch(), "pool_representation: row out of range");
  const int len = h.lengths[static_cast<std::size_t>(row)];
  CONT_EXPECT(len > 0, "pool_representation: fully masked row");
  return Representation(h.values[static_cast<std::size_t>(row)].topRows(len).colwise().mean().transpose());
}

std::vector<Representation> pool_representations(const HiddenStates& h) {
  std::vector<Representation> out;
  for (int i = 0; i < h.batch(); ++i) out.push_back(pool_representation(h, i));
  return out;
}

double cosine_similarity(const Vector& a, const Vector& b) {
  CONT_EXPECT(a.size() == b.size(), "cosine_similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na < kNormFloor || nb < kNormFloor) throw ContractError("cosine_similarity: near-zero norm");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double cosine_similarity(const Representation& a, const Representation& b) {
  CONT_EXPECT(a.z.size() == b.z.size(), "cosine_similarity: dimension mismatch");
  if (a.norm < kNormFloor || b.norm < kNormFloor) throw ContractError("cosine_similarity: near-zero norm");
  return std::clamp(a.z.dot(b.z) / (a.norm * b.norm), -1.0, 1.0);
}

}  // namespace cont
