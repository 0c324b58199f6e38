#pragma once

#include "twinattn/model.hpp"
#include "twinattn/regularizer.hpp"

namespace twinattn {

// Additive pre-softmax mask: 0 where sigmoid(logit) >= tau, -inf elsewhere.
// A row that would be entirely -inf is reset to all zeros so the softmax
// never sees a degenerate row.
Tensor2 mask_attention_bias(const Tensor2& mask_logits, double tau);

struct TwinPair {
  Value high;
  Value low;
};

// Weight-shared cross attention over both superpoint scales. One projected
// query set serves both branches; the mask bias applies to the high branch
// only. Residual from x, then layer norm (parameters shared across branches).
TwinPair twin_cross_attention(Tape& tape, const AttentionHandles& att, Parameter& norm_gain,
                              Parameter& norm_bias, Value x, Value s_high, Value s_low,
                              const Tensor2* bias_high, int heads);

// Weight-shared self attention over the queries of each branch, no mask.
TwinPair twin_self_attention(Tape& tape, const AttentionHandles& att, Parameter& norm_gain,
                             Parameter& norm_bias, TwinPair y, int heads);

// X^L = layer_norm(Z_high + FFN(Z_low ⊗ Z_high)).
Value fuse(Tape& tape, const BlockHandles& block, TwinPair z);

struct BlockPrediction {
  Value class_logits;  // N_o x (C+1)
  Value mask_logits;   // N_o x N_h, from the box regularizer
  Value mask_score;    // N_o x 1
  Value box;           // N_o x 6 in scene-normalized coordinates
  Value box_score;     // N_o x 1
  Tensor2 class_probs;  // softmaxed copy for matching and inference
};

// Class, mask-score, box and box-score heads (shared across blocks) plus the
// regularized mask logits for this block's query state.
BlockPrediction predict(Tape& tape, const Model& model, Value x, const SceneWiseValues& scene);

struct BlockTrace {
  Tensor2 y_high, y_low;  // after cross attention
  Tensor2 z_high, z_low;  // after self attention
};

// Runs the full twin-attention stack. Block 1 attends unmasked; block L>=2
// derives its high-branch mask from block L-1's mask logits. Returns one
// prediction per block; inference consumes only the last.
std::vector<BlockPrediction> decoder_forward(Tape& tape, Model& model, Value pooled_low, Value pooled_high,
                                             std::vector<BlockTrace>* trace = nullptr);

}  // namespace twinattn
