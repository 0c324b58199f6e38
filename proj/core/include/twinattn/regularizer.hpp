#pragma once

#include "twinattn/model.hpp"

namespace twinattn {

// Scene-wise features derived from pooled high-scale superpoint features.
struct SceneWise {
  Tensor2 semantic;  // F_m: N_h x D_s
  Tensor2 box;       // F_b: N_h x 6
};

// R[i] = broadcast(box_pred[i]) - F_b, one N_h x 6 matrix per query.
struct RelPos {
  std::vector<Tensor2> per_query;
  int num_queries() const { return static_cast<int>(per_query.size()); }
};

// Two affine maps with no nonlinearity: S_h -> F_m and S_h -> F_b.
SceneWise scene_heads(const Tensor2& pooled_high, const RegularizerHandles& reg);

RelPos relative_positions(const Tensor2& box_pred, const Tensor2& scene_box);

// Direct form of the regularized mask head: per query i, concatenate
// [R_i ; F_m] (N_h rows of width 6 + D_s = D_o), push each row through the
// shared affine map, then contract with the query embedding:
//   logits[i, j] = affine([R_i ; F_m])[j, :] . X[i, :]
Tensor2 regularized_masks(const RelPos& rel, const Tensor2& scene_semantic, const Tensor2& query_state,
                          const RegularizerHandles& reg);

// Differentiable path used by the decoder. Algebraically identical to
// regularized_masks with the affine map distributed over the concatenation:
//   logits = (X G^T) + rowdot(box_pred W_R^T, X) broadcast over superpoints,
//   G = F_m W_F^T - F_b W_R^T + bias.
// scene_gain (G) depends only on the scene, so callers compute it once.
struct SceneWiseValues {
  Value semantic;  // F_m
  Value box;       // F_b
  Value gain;      // G: N_h x D_o
};

SceneWiseValues scene_heads_tape(Tape& tape, Value pooled_high, const RegularizerHandles& reg);

Value regularized_mask_logits(Tape& tape, Value box_pred, Value query_state, const SceneWiseValues& scene,
                              const RegularizerHandles& reg);

}  // namespace twinattn
