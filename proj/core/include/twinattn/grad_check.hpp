#pragma once

#include <functional>
#include <span>
#include <string>

#include "twinattn/autodiff.hpp"

namespace twinattn {

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  std::string failure;  // non-empty when the check aborted (e.g. non-finite loss)
};

// Compares analytic parameter gradients against central finite differences.
// `loss_fn(true)` must zero the parameter grads, run the op, backpropagate
// and return the scalar loss; `loss_fn(false)` must return the loss only.
// Relative error uses max(|analytic|, |numeric|, 1e-4) as the denominator so
// near-zero gradients do not blow up the ratio.
GradCheckReport grad_check(const std::function<double(bool with_grad)>& loss_fn,
                           std::span<Parameter* const> params, double tolerance, double step = 1e-5);

}  // namespace twinattn
