#pragma once

#include "twinattn/autodiff.hpp"

namespace twinattn {

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double poly_power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int total_steps = 2000;
};

// Adam with decoupled weight decay and a polynomial learning-rate schedule:
// update k (0-based) uses lr0 * (1 - k/total_steps)^power.
class AdamW {
 public:
  AdamW(ParameterStore& params, OptimConfig cfg);

  void step();
  double current_lr() const;
  int steps_taken() const { return t_; }

 private:
  ParameterStore& params_;
  OptimConfig cfg_;
  int t_ = 0;
  std::vector<Tensor2> m_, v_;
};

}  // namespace twinattn
