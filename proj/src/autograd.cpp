#include "cont/autograd.hpp"

#include "cont/error.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace cont {

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const Matrix& value, Matrix* grad) {
  Node n;
  n.ext = &value;
  n.ext_grad = grad;
  n.needs_grad = record_ && grad != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (Var in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ext ? *n.ext : n.own;
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.ext_grad) return *n.ext_grad;
  if (!n.grad_live) {
    const Matrix& val = n.ext ? *n.ext : n.own;
    n.grad = Matrix::Zero(val.rows(), val.cols());
    n.grad_live = true;
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ext_grad != nullptr || n.grad_live;
}

void Tape::seed(Var v, const Matrix& g) {
  CONT_EXPECT(record_, "seed on a non-recording tape");
  Matrix& dst = grad(v);
  CONT_EXPECT(dst.rows() == g.rows() && dst.cols() == g.cols(), "seed shape mismatch");
  dst += g;
}

void Tape::backward() {
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad_live) n.backward(*this);
  }
}

namespace ag {
namespace {

Var next(const Tape& t) { return Var{static_cast<int>(t.size())}; }

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  CONT_EXPECT(av.cols() == bv.rows(), "matmul: inner dimensions differ");
  Matrix out = av * bv;
  const Var self = next(t);
  return t.push(std::move(out), {a, b}, [a, b, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a).noalias() += g * tp.value(b).transpose();
    if (tp.needs_grad(b)) tp.grad(b).noalias() += tp.value(a).transpose() * g;
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  const Matrix& bv = t.value(b);
  CONT_EXPECT(xv.cols() == wv.rows() && bv.cols() == wv.cols() && bv.rows() == 1,
              "linear: shape mismatch");
  Matrix out = xv * wv;
  out.rowwise() += bv.row(0);
  const Var self = next(t);
  return t.push(std::move(out), {x, w, b}, [x, w, b, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(x)) tp.grad(x).noalias() += g * tp.value(w).transpose();
    if (tp.needs_grad(w)) tp.grad(w).noalias() += tp.value(x).transpose() * g;
    if (tp.needs_grad(b)) tp.grad(b).row(0) += g.colwise().sum();
  });
}

Var add(Tape& t, Var a, Var b) {
  CONT_EXPECT(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
              "add: shape mismatch");
  Matrix out = t.value(a) + t.value(b);
  const Var self = next(t);
  return t.push(std::move(out), {a, b}, [a, b, self](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(b)) tp.grad(b) += g;
  });
}

Var add_constant(Tape& t, Var a, const Matrix& c) {
  Matrix out = t.value(a) + c;
  const Var self = next(t);
  return t.push(std::move(out), {a}, [a, self](Tape& tp) { tp.grad(a) += tp.grad(self); });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a) * s;
  const Var self = next(t);
  return t.push(std::move(out), {a}, [a, s, self](Tape& tp) { tp.grad(a) += tp.grad(self) * s; });
}

Var relu(Tape& t, Var x) {
  Matrix out = t.value(x).cwiseMax(0.0);
  const Var self = next(t);
  return t.push(std::move(out), {x}, [x, self](Tape& tp) {
    const Matrix& y = tp.value(self);
    tp.grad(x).array() += (y.array() > 0.0).select(tp.grad(self).array(), 0.0);
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = t.value(x);
  const Eigen::Index d = xv.cols();
  auto xhat = std::make_shared<Matrix>(xv.rows(), d);
  auto rstd = std::make_shared<Vector>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    (*rstd)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mean) * (*rstd)(r);
  }
  Matrix out = xhat->array().rowwise() * t.value(gain).row(0).array();
  out.rowwise() += t.value(bias).row(0);
  const Var self = next(t);
  return t.push(std::move(out), {x, gain, bias}, [x, gain, bias, self, xhat, rstd](Tape& tp) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(gain)) tp.grad(gain).row(0) += (g.array() * xhat->array()).colwise().sum().matrix();
    if (tp.needs_grad(bias)) tp.grad(bias).row(0) += g.colwise().sum();
    if (tp.needs_grad(x)) {
      Matrix& dx = tp.grad(x);
      const RowVector gv = tp.value(gain).row(0);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const RowVector dxhat = g.row(r).cwiseProduct(gv);
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
        dx.row(r).array() += (*rstd)(r) * (dxhat.array() - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  const Matrix& tv = t.value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CONT_EXPECT(ids[i] >= 0 && ids[i] < tv.rows(), "embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> kept(ids.begin(), ids.end());
  const Var self = next(t);
  return t.push(std::move(out), {table}, [table, self, kept = std::move(kept)](Tape& tp) {
    const Matrix& g = tp.grad(self);
    Matrix& dt = tp.grad(table);
    for (std::size_t i = 0; i < kept.size(); ++i) dt.row(kept[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var dropout(Tape& t, Var x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  const Matrix& xv = t.value(x);
  auto mask = std::make_shared<Matrix>(xv.rows(), xv.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask->size(); ++i)
    mask->data()[i] = uniform01(*rng) < rate ? 0.0 : keep;
  Matrix out = xv.cwiseProduct(*mask);
  const Var self = next(t);
  return t.push(std::move(out), {x}, [x, self, mask](Tape& tp) {
    tp.grad(x) += tp.grad(self).cwiseProduct(*mask);
  });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const Eigen::Index d = qv.cols();
  CONT_EXPECT(kv.cols() == d && vv.cols() == d && kv.rows() == vv.rows(), "attention: shape mismatch");
  CONT_EXPECT(heads > 0 && d % heads == 0, "attention: d not divisible by heads");
  CONT_EXPECT(!causal || qv.rows() == kv.rows(), "attention: causal needs square scores");
  const Eigen::Index dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(qv.rows(), d);
  for (int h = 0; h < heads; ++h) {
    Matrix s = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose() * inv;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const Eigen::Index visible = causal ? i + 1 : s.cols();
      const double mx = s.row(i).head(visible).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j < visible; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        z += s(i, j);
      }
      s.row(i).head(visible) /= z;
      for (Eigen::Index j = visible; j < s.cols(); ++j) s(i, j) = 0.0;
    }
    out.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
    (*probs)[h] = std::move(s);
  }
  const Var self = next(t);
  return t.push(std::move(out), {q, k, v}, [q, k, v, self, probs, heads, dh, inv](Tape& tp) {
    const Matrix& g = tp.grad(self);
    const Matrix& qv = tp.value(q);
    const Matrix& kv = tp.value(k);
    const Matrix& vv = tp.value(v);
    const bool gq = tp.needs_grad(q), gk = tp.needs_grad(k), gv = tp.needs_grad(v);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = (*probs)[h];
      const auto go = g.middleCols(h * dh, dh);
      if (gv) tp.grad(v).middleCols(h * dh, dh).noalias() += p.transpose() * go;
      if (!gq && !gk) continue;
      Matrix dp = go * vv.middleCols(h * dh, dh).transpose();
      const Vector rowdot = dp.cwiseProduct(p).rowwise().sum();
      Matrix ds = p.cwiseProduct(dp.colwise() - rowdot) * inv;
      if (gq) tp.grad(q).middleCols(h * dh, dh).noalias() += ds * kv.middleCols(h * dh, dh);
      if (gk) tp.grad(k).middleCols(h * dh, dh).noalias() += ds.transpose() * qv.middleCols(h * dh, dh);
    }
  });
}

Var mean_rows(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  CONT_EXPECT(xv.rows() > 0, "mean_rows: no rows");
  Matrix out = xv.colwise().mean();
  const Var self = next(t);
  return t.push(std::move(out), {x}, [x, self](Tape& tp) {
    Matrix& dx = tp.grad(x);
    const RowVector g = tp.grad(self).row(0) / static_cast<double>(dx.rows());
    dx.rowwise() += g;
  });
}

Var cross_entropy_sum(Tape& t, Var logits, std::span<const int> targets, double weight,
                      double smoothing) {
  const Matrix& lv = t.value(logits);
  CONT_EXPECT(static_cast<std::size_t>(lv.rows()) == targets.size(), "cross_entropy: length mismatch");
  const Eigen::Index vocab = lv.cols();
  auto probs = std::make_shared<Matrix>(lv.rows(), vocab);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    CONT_EXPECT(y >= 0 && y < vocab, "cross_entropy: target out of range");
    const double mx = lv.row(r).maxCoeff();
    const double lse = mx + std::log((lv.row(r).array() - mx).exp().sum());
    probs->row(r) = (lv.row(r).array() - lse).exp();
    double row = -(1.0 - smoothing) * (lv(r, y) - lse);
    if (smoothing > 0.0) row -= smoothing * ((lv.row(r).array() - lse).sum() / static_cast<double>(vocab));
    loss += row;
  }
  Matrix out(1, 1);
  out(0, 0) = loss * weight;
  std::vector<int> kept(targets.begin(), targets.end());
  const Var self = next(t);
  return t.push(std::move(out), {logits},
                [logits, self, probs, weight, smoothing, kept = std::move(kept)](Tape& tp) {
                  const double g = tp.grad(self)(0, 0) * weight;
                  Matrix& dl = tp.grad(logits);
                  const double uniform = smoothing / static_cast<double>(probs->cols());
                  for (Eigen::Index r = 0; r < probs->rows(); ++r) {
                    dl.row(r).array() += g * (probs->row(r).array() - uniform);
                    dl(r, kept[static_cast<std::size_t>(r)]) -= g * (1.0 - smoothing);
                  }
                });
}

}  // namespace ag
}  // namespace cont
