#pragma once

#include "twinattn/decoder.hpp"
#include "twinattn/matching.hpp"

namespace twinattn {

struct LossCoeffs {
  double beta_mask = 1.0;       // weights bce + dice jointly
  double beta_cls = 0.5;
  double beta_score = 0.5;      // mask-score term
  double beta_box = 1.0;
  double beta_box_score = 0.5;
  double eta_mask = 0.5;        // strict IoU indicator threshold for mask scores
  double eta_box = 0.5;         // and for box scores
  double lambda_cls = 0.5;      // matching cost coefficients
  double lambda_mask = 1.0;
};

struct LossBreakdown {
  double cls = 0, bce = 0, dice = 0, mask_score = 0, box = 0, box_score = 0;
  double total = 0;
  LossCoeffs betas;

  // total as the exact weighted composition of the parts.
  static double compose(const LossCoeffs& c, double cls, double bce, double dice, double mask_score,
                        double box, double box_score);
  double recompose() const;
};

// IoU of two binary masks over superpoints; 0 when the union is empty.
double mask_iou(std::span<const double> a, std::span<const double> b);
// Same, with the prediction binarized from logits at probability 0.5.
double mask_iou_from_logits(std::span<const double> logits, std::span<const double> gt);
// Axis-aligned box IoU with intersection extents clamped at zero.
double box_iou(std::span<const double, 6> a, std::span<const double, 6> b);

struct LossResult {
  Value total;  // differentiable scalar on the tape
  LossBreakdown breakdown;
};

// Regression targets for the two score heads, one entry per matched pair per
// block. Like the assignment itself they are constants under differentiation;
// grad checks freeze them across probes.
struct ScoreTargets {
  std::vector<std::vector<double>> mask_iou_per_block;
  std::vector<std::vector<double>> box_iou_per_block;
};

ScoreTargets compute_score_targets(const Tape& tape, const std::vector<BlockPrediction>& preds,
                                   const std::vector<MatchResult>& matches, const GroundTruth& gt,
                                   const Tensor2& gt_boxes_norm);

// Five-term loss with deep supervision: every block contributes through its
// own match, terms average over blocks. Matching is treated as fixed during
// differentiation. gt boxes arrive already scene-normalized to match the box
// head's output space. When `frozen_targets` is null the score targets are
// computed from the current forward values.
LossResult build_losses(Tape& tape, const std::vector<BlockPrediction>& preds,
                        const std::vector<MatchResult>& matches, const GroundTruth& gt,
                        const Tensor2& gt_boxes_norm, const LossCoeffs& coeffs,
                        const ScoreTargets* frozen_targets = nullptr);

}  // namespace twinattn
