#include "cont/optimizer.hpp"

#include "cont/error.hpp"

#include <algorithm>
#include <cmath>

namespace cont {

Adam::Adam(AdamConfig cfg, const std::vector<Matrix>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

double Adam::current_lr() const {
  const double step = static_cast<double>(std::max<long>(t_, 1));
  const double warm = static_cast<double>(cfg_.warmup_steps);
  if (cfg_.warmup_steps > 0 && step < warm) return cfg_.learning_rate * step / warm;
  if (cfg_.schedule == LrSchedule::InverseSqrt && cfg_.warmup_steps > 0)
    return cfg_.learning_rate * std::sqrt(warm / step);
  return cfg_.learning_rate;
}

void Adam::step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
  CONT_EXPECT(params.size() == grads.size() && params.size() == m_.size(), "adam: parameter count mismatch");
  ++t_;
  const double lr = current_lr();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

void Adam::restore(long t, std::vector<Matrix> m, std::vector<Matrix> v) {
  CONT_EXPECT(m.size() == m_.size() && v.size() == v_.size(), "adam: restore size mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

}  // namespace cont
