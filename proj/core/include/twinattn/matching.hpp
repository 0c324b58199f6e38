#pragma once

#include <span>
#include <utility>
#include <vector>

#include "twinattn/superpoints.hpp"
#include "twinattn/tensor.hpp"

namespace twinattn {

// BCE (mean over superpoints, probabilities from logits) plus a
// Laplace-smoothed dice cost 1 - (2<p,g>+1)/(|p|_1+|g|_1+1).
double mask_match_cost(std::span<const double> pred_logits, std::span<const double> gt_mask);

// C_ij = -lambda_cls * p_{i, c_j} + lambda_mask * mask cost, one entry per
// (proposal, ground truth) pair.
Tensor2 pairwise_cost(const Tensor2& class_probs, const Tensor2& mask_logits, const GroundTruth& gt,
                      double lambda_cls, double lambda_mask);

struct MatchResult {
  // (proposal, gt) pairs in ascending gt order; every ground truth appears.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_proposals;
  double total_cost = 0.0;

  // proposal assigned to gt j, or -1.
  int proposal_of(int gt_index) const;
};

// Minimum-cost one-to-one assignment of all ground truths to proposals.
// cost is N_o x N_I with N_o >= N_I (CapacityError otherwise). Among optimal
// assignments the result is the lexicographically smallest in (gt, proposal)
// order. total_cost sums matched entries in ascending gt order.
MatchResult hungarian(const Tensor2& cost);

}  // namespace twinattn
