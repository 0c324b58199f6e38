#include "twinattn/decoder.hpp"

#include <cmath>
#include <limits>

namespace twinattn {

Tensor2 mask_attention_bias(const Tensor2& mask_logits, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("mask_attention_bias: tau must lie in (0,1)");
  if (!mask_logits.all_finite()) throw NumericError("mask_attention_bias: logits must be finite");
  const double logit_tau = std::log(tau / (1.0 - tau));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Tensor2 bias(mask_logits.rows, mask_logits.cols);
  for (int i = 0; i < mask_logits.rows; ++i) {
    const double* lr = mask_logits.row_ptr(i);
    double* br = bias.row_ptr(i);
    bool any_open = false;
    for (int j = 0; j < mask_logits.cols; ++j) {
      if (lr[j] >= logit_tau) {
        br[j] = 0.0;
        any_open = true;
      } else {
        br[j] = neg_inf;
      }
    }
    if (!any_open) {
      // Unmasked fallback: a query that claims nothing may look everywhere.
      for (int j = 0; j < mask_logits.cols; ++j) br[j] = 0.0;
    }
  }
  return bias;
}

namespace {

Value attend(Tape& tape, const AttentionHandles& att, Value q_projected, Value kv_src, const Tensor2* bias,
             int heads) {
  Value k = tape.linear(kv_src, tape.param(*att.wk), tape.param(*att.bk));
  Value v = tape.linear(kv_src, tape.param(*att.wv), tape.param(*att.bv));
  Value a = tape.multihead_attention(q_projected, k, v, bias, heads);
  return tape.linear(a, tape.param(*att.wo), tape.param(*att.bo));
}

}  // namespace

TwinPair twin_cross_attention(Tape& tape, const AttentionHandles& att, Parameter& norm_gain,
                              Parameter& norm_bias, Value x, Value s_high, Value s_low,
                              const Tensor2* bias_high, int heads) {
  Value q = tape.linear(x, tape.param(*att.wq), tape.param(*att.bq));
  Value gain = tape.param(norm_gain);
  Value bias = tape.param(norm_bias);
  TwinPair out;
  out.high = tape.layer_norm(tape.add(x, attend(tape, att, q, s_high, bias_high, heads)), gain, bias);
  out.low = tape.layer_norm(tape.add(x, attend(tape, att, q, s_low, nullptr, heads)), gain, bias);
  return out;
}

TwinPair twin_self_attention(Tape& tape, const AttentionHandles& att, Parameter& norm_gain,
                             Parameter& norm_bias, TwinPair y, int heads) {
  Value gain = tape.param(norm_gain);
  Value bias = tape.param(norm_bias);
  auto branch = [&](Value in) {
    Value q = tape.linear(in, tape.param(*att.wq), tape.param(*att.bq));
    return tape.layer_norm(tape.add(in, attend(tape, att, q, in, nullptr, heads)), gain, bias);
  };
  TwinPair out;
  out.high = branch(y.high);
  out.low = branch(y.low);
  return out;
}

Value fuse(Tape& tape, const BlockHandles& block, TwinPair z) {
  Value merged = tape.mul(z.low, z.high);
  Value hidden = tape.gelu(tape.linear(merged, tape.param(*block.ffn_w1), tape.param(*block.ffn_b1)));
  Value ffn = tape.linear(hidden, tape.param(*block.ffn_w2), tape.param(*block.ffn_b2));
  return tape.layer_norm(tape.add(z.high, ffn), tape.param(*block.norm_ffn_g), tape.param(*block.norm_ffn_b));
}

BlockPrediction predict(Tape& tape, const Model& model, Value x, const SceneWiseValues& scene) {
  const HeadHandles& h = model.heads;
  BlockPrediction pred;
  pred.class_logits = tape.linear(x, tape.param(*h.cls_w), tape.param(*h.cls_b));
  pred.mask_score = tape.linear(x, tape.param(*h.mask_score_w), tape.param(*h.mask_score_b));
  pred.box = tape.linear(x, tape.param(*h.box_w), tape.param(*h.box_b));
  pred.box_score = tape.linear(x, tape.param(*h.box_score_w), tape.param(*h.box_score_b));
  pred.mask_logits = regularized_mask_logits(tape, pred.box, x, scene, model.regularizer);
  pred.class_probs = row_softmax(tape.value(pred.class_logits));
  return pred;
}

std::vector<BlockPrediction> decoder_forward(Tape& tape, Model& model, Value pooled_low, Value pooled_high,
                                             std::vector<BlockTrace>* trace) {
  const ModelConfig& cfg = model.cfg;
  Value in_w = tape.param(*model.input_proj_w);
  Value in_b = tape.param(*model.input_proj_b);
  Value s_high = tape.linear(pooled_high, in_w, in_b);
  Value s_low = tape.linear(pooled_low, in_w, in_b);
  SceneWiseValues scene = scene_heads_tape(tape, pooled_high, model.regularizer);

  Value x = tape.param(*model.queries);
  std::vector<BlockPrediction> preds;
  preds.reserve(cfg.blocks);
  Tensor2 bias_high;
  for (int l = 0; l < cfg.blocks; ++l) {
    const BlockHandles& blk = model.blocks[l];
    const Tensor2* bias = nullptr;
    if (l > 0) {
      bias_high = mask_attention_bias(tape.value(preds.back().mask_logits), cfg.mask_threshold);
      bias = &bias_high;
    }
    TwinPair y = twin_cross_attention(tape, blk.cross, *blk.norm_cross_g, *blk.norm_cross_b, x, s_high,
                                      s_low, bias, cfg.heads);
    TwinPair z = twin_self_attention(tape, blk.self, *blk.norm_self_g, *blk.norm_self_b, y, cfg.heads);
    if (trace) {
      trace->push_back(BlockTrace{tape.value(y.high), tape.value(y.low), tape.value(z.high), tape.value(z.low)});
    }
    x = fuse(tape, blk, z);
    preds.push_back(predict(tape, model, x, scene));
  }
  return preds;
}

}  // namespace twinattn
