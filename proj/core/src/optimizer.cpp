#include "twinattn/optimizer.hpp"

#include <cmath>

namespace twinattn {

AdamW::AdamW(ParameterStore& params, OptimConfig cfg) : params_(params), cfg_(cfg) {
  m_.reserve(params_.count());
  v_.reserve(params_.count());
  for (const auto& p : params_.all()) {
    m_.emplace_back(p.tensor.rows, p.tensor.cols);
    v_.emplace_back(p.tensor.rows, p.tensor.cols);
  }
}

double AdamW::current_lr() const {
  const double frac = cfg_.total_steps > 0
                          ? std::min(1.0, static_cast<double>(t_) / cfg_.total_steps)
                          : 0.0;
  return cfg_.lr * std::pow(1.0 - frac, cfg_.poly_power);
}

void AdamW::step() {
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  size_t idx = 0;
  for (auto& p : params_.all()) {
    Tensor2& m = m_[idx];
    Tensor2& v = v_[idx];
    ++idx;
    if (!p.trainable) continue;
    for (size_t i = 0; i < p.tensor.data.size(); ++i) {
      const double g = p.grad.data[i];
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.tensor.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.tensor.data[i]);
    }
  }
}

}  // namespace twinattn
