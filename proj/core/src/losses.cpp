#include "twinattn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace twinattn {

double LossBreakdown::compose(const LossCoeffs& c, double cls, double bce, double dice, double mask_score,
                              double box, double box_score) {
  double t = c.beta_mask * (bce + dice);
  t += c.beta_cls * cls;
  t += c.beta_score * mask_score;
  t += c.beta_box * box;
  t += c.beta_box_score * box_score;
  return t;
}

double LossBreakdown::recompose() const {
  return compose(betas, cls, bce, dice, mask_score, box, box_score);
}

double mask_iou(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("mask_iou: length mismatch");
  int inter = 0, uni = 0;
  for (size_t j = 0; j < a.size(); ++j) {
    const bool av = a[j] != 0.0;
    const bool bv = b[j] != 0.0;
    inter += (av && bv) ? 1 : 0;
    uni += (av || bv) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

double mask_iou_from_logits(std::span<const double> logits, std::span<const double> gt) {
  if (logits.size() != gt.size()) throw DimensionError("mask_iou_from_logits: length mismatch");
  int inter = 0, uni = 0;
  for (size_t j = 0; j < logits.size(); ++j) {
    const bool pv = logits[j] >= 0.0;  // sigmoid(logit) >= 0.5
    const bool gv = gt[j] != 0.0;
    inter += (pv && gv) ? 1 : 0;
    uni += (pv || gv) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

double box_iou(std::span<const double, 6> a, std::span<const double, 6> b) {
  auto volume = [](std::span<const double, 6> box) {
    double v = 1.0;
    for (int axis = 0; axis < 3; ++axis) v *= std::max(0.0, box[3 + axis] - box[axis]);
    return v;
  };
  double inter = 1.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double lo = std::max(a[axis], b[axis]);
    const double hi = std::min(a[3 + axis], b[3 + axis]);
    inter *= std::max(0.0, hi - lo);
  }
  const double uni = volume(a) + volume(b) - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

namespace {

Value sum_or_zero(Tape& tape, const std::vector<Value>& terms) {
  if (terms.empty()) return tape.constant(Tensor2::scalar(0.0));
  Value acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
  return acc;
}

// L2 score regression restricted to matched proposals whose target IoU
// clears the threshold strictly; zero when the indicator count is zero.
Value score_term(Tape& tape, Value scores, const std::vector<int>& props, const std::vector<double>& ious,
                 double eta, bool* contributed) {
  std::vector<double> indicator(ious.size());
  int count = 0;
  for (size_t i = 0; i < ious.size(); ++i) {
    indicator[i] = ious[i] > eta ? 1.0 : 0.0;
    count += indicator[i] != 0.0 ? 1 : 0;
  }
  *contributed = count > 0;
  if (count == 0) return Value{};
  Value picked = tape.gather_rows(scores, props);
  Tensor2 target(static_cast<int>(ious.size()), 1);
  Tensor2 ind(static_cast<int>(ious.size()), 1);
  for (size_t i = 0; i < ious.size(); ++i) {
    target.data[i] = ious[i];
    ind.data[i] = indicator[i];
  }
  Value diff = tape.sub(picked, tape.constant(target));
  Value masked_sq = tape.mul(tape.mul(diff, diff), tape.constant(ind));
  return tape.scale(tape.sum_all(masked_sq), 1.0 / count);
}

}  // namespace

ScoreTargets compute_score_targets(const Tape& tape, const std::vector<BlockPrediction>& preds,
                                   const std::vector<MatchResult>& matches, const GroundTruth& gt,
                                   const Tensor2& gt_boxes_norm) {
  ScoreTargets targets;
  targets.mask_iou_per_block.resize(preds.size());
  targets.box_iou_per_block.resize(preds.size());
  for (size_t b = 0; b < preds.size(); ++b) {
    const Tensor2& logits_v = tape.value(preds[b].mask_logits);
    const Tensor2& box_v = tape.value(preds[b].box);
    for (const auto& [prop, g] : matches[b].pairs) {
      targets.mask_iou_per_block[b].push_back(
          mask_iou_from_logits({logits_v.row_ptr(prop), static_cast<size_t>(logits_v.cols)},
                               {gt.masks.row_ptr(g), static_cast<size_t>(gt.masks.cols)}));
      targets.box_iou_per_block[b].push_back(box_iou(std::span<const double, 6>(box_v.row_ptr(prop), 6),
                                                     std::span<const double, 6>(gt_boxes_norm.row_ptr(g), 6)));
    }
  }
  return targets;
}

LossResult build_losses(Tape& tape, const std::vector<BlockPrediction>& preds,
                        const std::vector<MatchResult>& matches, const GroundTruth& gt,
                        const Tensor2& gt_boxes_norm, const LossCoeffs& coeffs,
                        const ScoreTargets* frozen_targets) {
  if (preds.empty() || preds.size() != matches.size()) {
    throw DimensionError("build_losses: predictions and matches must align per block");
  }
  const int n_i = static_cast<int>(gt.classes.size());
  const int num_classes = tape.value(preds[0].class_logits).cols - 1;
  const double inv_blocks = 1.0 / static_cast<double>(preds.size());
  const ScoreTargets score_targets =
      frozen_targets ? *frozen_targets : compute_score_targets(tape, preds, matches, gt, gt_boxes_norm);

  std::vector<Value> cls_terms, bce_terms, dice_terms, ms_terms, box_terms, bs_terms;
  for (size_t b = 0; b < preds.size(); ++b) {
    const BlockPrediction& pred = preds[b];
    const MatchResult& match = matches[b];
    const int n_o = tape.value(pred.mask_logits).rows;

    // Classification over all proposals; unmatched ones target "no instance".
    std::vector<int> targets(n_o, num_classes);
    for (const auto& [prop, g] : match.pairs) targets[prop] = gt.classes[g];
    cls_terms.push_back(tape.cross_entropy_rows(pred.class_logits, targets,
                                                std::vector<double>(n_o, 1.0 / n_o)));

    const int pairs = static_cast<int>(match.pairs.size());
    if (pairs == 0) continue;

    std::vector<int> props(pairs);
    Tensor2 gt_rows(pairs, gt.masks.cols);
    Tensor2 gt_box_rows(pairs, 6);
    const std::vector<double>& mask_ious = score_targets.mask_iou_per_block[b];
    const std::vector<double>& box_ious = score_targets.box_iou_per_block[b];
    for (int p = 0; p < pairs; ++p) {
      const auto [prop, g] = match.pairs[p];
      props[p] = prop;
      std::copy(gt.masks.row_ptr(g), gt.masks.row_ptr(g) + gt.masks.cols, gt_rows.row_ptr(p));
      std::copy(gt_boxes_norm.row_ptr(g), gt_boxes_norm.row_ptr(g) + 6, gt_box_rows.row_ptr(p));
    }
    const std::vector<double> pair_w(pairs, 1.0 / pairs);

    Value picked_logits = tape.gather_rows(pred.mask_logits, props);
    bce_terms.push_back(tape.bce_with_logits(picked_logits, gt_rows, pair_w));
    dice_terms.push_back(tape.dice_cost_rows(picked_logits, gt_rows, pair_w));

    Value picked_boxes = tape.gather_rows(pred.box, props);
    Value box_l1 = tape.sum_all(tape.abs(tape.sub(picked_boxes, tape.constant(gt_box_rows))));
    box_terms.push_back(tape.scale(box_l1, 1.0 / n_i));

    bool used = false;
    Value ms = score_term(tape, pred.mask_score, props, mask_ious, coeffs.eta_mask, &used);
    if (used) ms_terms.push_back(ms);
    Value bs = score_term(tape, pred.box_score, props, box_ious, coeffs.eta_box, &used);
    if (used) bs_terms.push_back(bs);
  }

  Value cls = tape.scale(sum_or_zero(tape, cls_terms), inv_blocks);
  Value bce = tape.scale(sum_or_zero(tape, bce_terms), inv_blocks);
  Value dice = tape.scale(sum_or_zero(tape, dice_terms), inv_blocks);
  Value mask_score = tape.scale(sum_or_zero(tape, ms_terms), inv_blocks);
  Value box = tape.scale(sum_or_zero(tape, box_terms), inv_blocks);
  Value box_score = tape.scale(sum_or_zero(tape, bs_terms), inv_blocks);

  // Total mirrors LossBreakdown::compose exactly so the recomposition
  // identity holds bit for bit.
  Value total = tape.scale(tape.add(bce, dice), coeffs.beta_mask);
  total = tape.add(total, tape.scale(cls, coeffs.beta_cls));
  total = tape.add(total, tape.scale(mask_score, coeffs.beta_score));
  total = tape.add(total, tape.scale(box, coeffs.beta_box));
  total = tape.add(total, tape.scale(box_score, coeffs.beta_box_score));

  LossResult result;
  result.total = total;
  result.breakdown.betas = coeffs;
  result.breakdown.cls = tape.scalar(cls);
  result.breakdown.bce = tape.scalar(bce);
  result.breakdown.dice = tape.scalar(dice);
  result.breakdown.mask_score = tape.scalar(mask_score);
  result.breakdown.box = tape.scalar(box);
  result.breakdown.box_score = tape.scalar(box_score);
  result.breakdown.total = tape.scalar(total);
  return result;
}

}  // namespace twinattn
