#include "twinattn/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace twinattn {

double mask_match_cost(std::span<const double> pred_logits, std::span<const double> gt_mask) {
  if (pred_logits.size() != gt_mask.size()) {
    throw DimensionError("mask_match_cost: length mismatch " + std::to_string(pred_logits.size()) + " vs " +
                         std::to_string(gt_mask.size()));
  }
  const auto n = pred_logits.size();
  double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    const double x = pred_logits[j];
    const double g = gt_mask[j];
    bce += std::max(x, 0.0) - x * g + std::log1p(std::exp(-std::fabs(x)));
    const double p = sigmoid(x);
    inter += p * g;
    psum += p;
    gsum += g;
  }
  bce /= static_cast<double>(n);
  const double dice_cost = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
  return bce + dice_cost;
}

Tensor2 pairwise_cost(const Tensor2& class_probs, const Tensor2& mask_logits, const GroundTruth& gt,
                      double lambda_cls, double lambda_mask) {
  const int n_o = class_probs.rows;
  const int n_i = static_cast<int>(gt.classes.size());
  if (mask_logits.rows != n_o) throw DimensionError("pairwise_cost: proposal count mismatch");
  if (gt.masks.rows != n_i || gt.masks.cols != mask_logits.cols) {
    throw DimensionError("pairwise_cost: gt mask shape " + gt.masks.shape_str() + " vs logits " +
                         mask_logits.shape_str());
  }
  Tensor2 cost(n_o, n_i);
  for (int i = 0; i < n_o; ++i) {
    const std::span<const double> logits(mask_logits.row_ptr(i), static_cast<size_t>(mask_logits.cols));
    for (int j = 0; j < n_i; ++j) {
      const int cls = gt.classes[j];
      if (cls < 0 || cls >= class_probs.cols) throw DimensionError("pairwise_cost: gt class out of range");
      const std::span<const double> gmask(gt.masks.row_ptr(j), static_cast<size_t>(gt.masks.cols));
      cost.at(i, j) = -lambda_cls * class_probs.at(i, cls) + lambda_mask * mask_match_cost(logits, gmask);
    }
  }
  return cost;
}

int MatchResult::proposal_of(int gt_index) const {
  for (const auto& [prop, g] : pairs) {
    if (g == gt_index) return prop;
  }
  return -1;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::max() / 4;

// Shortest-augmenting-path assignment over rows 0..n-1 (ground truths) and
// columns 0..m-1 (proposals), n <= m. Returns the minimum total cost; fills
// col_of_row when non-null. cost(i, j) is a callable.
template <typename CostFn>
double solve_assignment(int n, int m, CostFn cost, std::vector<int>* col_of_row) {
  std::vector<int> p(m + 1, 0);  // 1-indexed: p[j] = row matched to column j
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost(i, assignment[i]);
  if (col_of_row) *col_of_row = std::move(assignment);
  return total;
}

}  // namespace

MatchResult hungarian(const Tensor2& cost) {
  const int n_o = cost.rows;
  const int n_i = cost.cols;
  if (n_o < n_i) {
    throw CapacityError("hungarian: " + std::to_string(n_i) + " ground truths exceed " +
                        std::to_string(n_o) + " proposals");
  }
  if (!cost.all_finite()) throw NumericError("hungarian: cost matrix must be finite");

  MatchResult result;
  if (n_i == 0) {
    result.unmatched_proposals.resize(n_o);
    for (int i = 0; i < n_o; ++i) result.unmatched_proposals[i] = i;
    return result;
  }

  // Rows are ground truths so every one gets assigned.
  auto base_cost = [&](int gt, int prop) { return cost.at(prop, gt); };
  const double best_total = solve_assignment(n_i, n_o, base_cost, nullptr);

  // Lexicographic refinement: walk ground truths in order and fix the lowest
  // proposal index that still allows an optimal completion.
  std::vector<int> chosen(n_i, -1);
  std::vector<char> prop_used(n_o, 0);
  double fixed_cost = 0.0;
  const double tol = 1e-9 * std::max(1.0, std::fabs(best_total));
  for (int g = 0; g < n_i; ++g) {
    const int rem_gts = n_i - g - 1;
    for (int prop = 0; prop < n_o; ++prop) {
      if (prop_used[prop]) continue;
      double completion = 0.0;
      if (rem_gts > 0) {
        // Remaining sub-problem over gts g+1.. and free proposals != prop.
        std::vector<int> free_props;
        free_props.reserve(n_o);
        for (int p2 = 0; p2 < n_o; ++p2) {
          if (!prop_used[p2] && p2 != prop) free_props.push_back(p2);
        }
        auto sub_cost = [&](int r, int c) { return cost.at(free_props[c], g + 1 + r); };
        completion = solve_assignment(rem_gts, static_cast<int>(free_props.size()), sub_cost, nullptr);
      }
      if (fixed_cost + cost.at(prop, g) + completion <= best_total + tol) {
        chosen[g] = prop;
        prop_used[prop] = 1;
        fixed_cost += cost.at(prop, g);
        break;
      }
    }
    if (chosen[g] < 0) throw NumericError("hungarian: refinement failed to extend an optimal assignment");
  }

  result.pairs.reserve(n_i);
  double total = 0.0;
  for (int g = 0; g < n_i; ++g) {
    result.pairs.emplace_back(chosen[g], g);
    total += cost.at(chosen[g], g);
  }
  result.total_cost = total;
  for (int p = 0; p < n_o; ++p) {
    if (!prop_used[p]) result.unmatched_proposals.push_back(p);
  }
  return result;
}

}  // namespace twinattn
