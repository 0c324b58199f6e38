#include "twinattn/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace twinattn {

FinalPrediction materialize_final(const Tape& tape, const BlockPrediction& last) {
  FinalPrediction out;
  out.class_probs = last.class_probs;
  out.mask_probs = tape.value(last.mask_logits);
  for (double& v : out.mask_probs.data) v = sigmoid(v);
  out.mask_score = tape.value(last.mask_score);
  out.box_score = tape.value(last.box_score);
  return out;
}

double superpoint_mask_score(std::span<const double> probs) {
  double sum = 0.0;
  int count = 0;
  for (double p : probs) {
    if (p > 0.5) {
      sum += p;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

Confidence confidence(const FinalPrediction& pred, int proposal) {
  const int foreground = pred.class_probs.cols - 1;
  const double* probs = pred.class_probs.row_ptr(proposal);
  int best = 0;
  for (int c = 1; c < foreground; ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  const double cls_factor = probs[best];
  const double ms = std::clamp(pred.mask_score.data[proposal], 0.0, 1.0);
  const double bs = std::clamp(pred.box_score.data[proposal], 0.0, 1.0);
  const double a = superpoint_mask_score(
      {pred.mask_probs.row_ptr(proposal), static_cast<size_t>(pred.mask_probs.cols)});
  Confidence out;
  out.class_id = best;
  out.score = cls_factor * bs * ms * a;
  return out;
}

std::vector<InstancePrediction> select_instances(const FinalPrediction& pred, int top_k,
                                                 const std::vector<int>& assign, int num_superpoints) {
  if (top_k < 1) throw ConfigError("select_instances: top_k must be >= 1");
  if (pred.mask_probs.cols != num_superpoints) {
    throw DimensionError("select_instances: mask width vs superpoint count");
  }
  const int n_o = pred.mask_probs.rows;
  std::vector<int> order(n_o);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Confidence> conf(n_o);
  for (int i = 0; i < n_o; ++i) conf[i] = confidence(pred, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return conf[a].score > conf[b].score; });
  const int keep = std::min(top_k, n_o);

  std::vector<InstancePrediction> out;
  out.reserve(keep);
  for (int r = 0; r < keep; ++r) {
    const int i = order[r];
    InstancePrediction inst;
    inst.class_id = conf[i].class_id;
    inst.confidence = conf[i].score;
    inst.superpoint_mask.resize(num_superpoints);
    const double* probs = pred.mask_probs.row_ptr(i);
    for (int s = 0; s < num_superpoints; ++s) inst.superpoint_mask[s] = probs[s] >= 0.5 ? 1 : 0;
    inst.point_mask.resize(assign.size());
    for (size_t p = 0; p < assign.size(); ++p) inst.point_mask[p] = inst.superpoint_mask[assign[p]];
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace twinattn
