#include "twinattn/grad_check.hpp"

#include <cmath>
#include <vector>

namespace twinattn {

GradCheckReport grad_check(const std::function<double(bool)>& loss_fn, std::span<Parameter* const> params,
                           double tolerance, double step) {
  GradCheckReport report;
  if (tolerance <= 0.0 || step <= 0.0) {
    report.failure = "tolerance and step must be positive";
    return report;
  }

  double base;
  try {
    base = loss_fn(true);
  } catch (const std::exception& e) {
    report.failure = std::string("loss evaluation failed: ") + e.what();
    return report;
  }
  if (!std::isfinite(base)) {
    report.failure = "non-finite loss at base point";
    return report;
  }

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad.data);

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (size_t i = 0; i < p->tensor.data.size(); ++i) {
      const double saved = p->tensor.data[i];
      p->tensor.data[i] = saved + step;
      const double up = loss_fn(false);
      p->tensor.data[i] = saved - step;
      const double down = loss_fn(false);
      p->tensor.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.failure = "non-finite loss while probing " + p->name + "[" + std::to_string(i) + "]";
        return report;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p->name;
        report.worst_index = static_cast<int>(i);
      }
    }
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace twinattn
