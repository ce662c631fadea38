#pragma once

#include "cont/tensor.hpp"

#include <functional>
#include <span>
#include <vector>

namespace cont {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense row-major matrices. One tape per example and pass;
// nodes are appended in evaluation order so backward() is a single reverse sweep.
// With record=false no backward closures are kept (inference).
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  // Leaf that reads `value` in place. Gradient is accumulated into `*grad` when non-null.
  Var parameter(const Matrix& value, Matrix* grad);

  // Interior node; `inputs` decide whether it needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  const Matrix& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Zero-initialized on first access.
  Matrix& grad(Var v);
  bool has_grad(Var v) const;

  void seed(Var v, const Matrix& g);
  void backward();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    Matrix* ext_grad = nullptr;
    bool needs_grad = false;
    bool grad_live = false;
    Backward backward;
  };
  bool record_;
  std::vector<Node> nodes_;
};

namespace ag {

Var matmul(Tape& t, Var a, Var b);
// x * w + 1 * b^T with w (in x out) and b (1 x out).
Var linear(Tape& t, Var x, Var w, Var b);
Var add(Tape& t, Var a, Var b);
Var add_constant(Tape& t, Var a, const Matrix& c);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var x);
// Row-wise layer normalization with gain/bias rows (1 x d).
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
// Rows of `table` selected by `ids`.
Var embedding(Tape& t, Var table, std::span<const int> ids);
// Inverted dropout; identity when rate == 0 or rng is null.
Var dropout(Tape& t, Var x, double rate, Rng* rng);
// Multi-head scaled dot-product attention; q (Lq x d), k/v (Lk x d). With causal=true,
// query i attends to keys 0..i only.
Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal);
// Mean over rows -> (1 x d).
Var mean_rows(Tape& t, Var x);
// Sum over rows of -log softmax(logits)[row, target[row]], scaled by `weight`. With
// smoothing > 0 the target distribution mixes (1 - smoothing) one-hot with uniform.
Var cross_entropy_sum(Tape& t, Var logits, std::span<const int> targets, double weight,
                      double smoothing = 0.0);

}  // namespace ag
}  // namespace cont
