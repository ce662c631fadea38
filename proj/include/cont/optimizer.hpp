#pragma once

#include "cont/tensor.hpp"

#include <string>
#include <vector>

namespace cont {

enum class LrSchedule { Constant, InverseSqrt };

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  // Linear ramp length; InverseSqrt decays as sqrt(warmup / step) afterwards.
  int warmup_steps = 0;
  LrSchedule schedule = LrSchedule::Constant;
};

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const std::vector<Matrix>& params);

  const AdamConfig& config() const { return cfg_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }
  long steps() const { return t_; }
  double current_lr() const;

  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads);

  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(long t, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Scales grads in place so their global L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

}  // namespace cont
